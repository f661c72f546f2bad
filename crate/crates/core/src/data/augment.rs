//! Clip-level augmentations. Each draws only from the generator it is
//! handed, so callers control which stream is consumed.

use rand::seq::index;
use rand::Rng;

use crate::data::SequenceSample;
use crate::error::{Error, Result};

/// Random crop in time that always keeps the whole target interval:
/// the new start is uniform in `[0, s]` and the new end uniform in `[e, T]`.
pub fn variable_length_crop<R: Rng + ?Sized>(
    sample: &SequenceSample,
    rng: &mut R,
) -> SequenceSample {
    let (s, e) = sample.target;
    let a = rng.gen_range(0..=s);
    let b = rng.gen_range(e..=sample.length);
    sample.slice(a, b, (s - a, e - a))
}

/// Removes `n` distinct frames chosen uniformly at random, preserving the
/// order of the rest.
///
/// The target interval is remapped onto the surviving frames. If every
/// target frame was dropped, the interval collapses onto the single frame
/// that now sits where the target used to be.
pub fn random_frame_drop<R: Rng + ?Sized>(
    sample: &SequenceSample,
    n: usize,
    rng: &mut R,
) -> Result<SequenceSample> {
    let t = sample.length;
    if n >= t {
        return Err(Error::invalid(
            "random_frame_drop",
            format!("cannot drop {n} of {t} frames"),
        ));
    }
    if n == 0 {
        return Ok(sample.clone());
    }
    let mut dropped = vec![false; t];
    for i in index::sample(rng, t, n) {
        dropped[i] = true;
    }
    let before = |pos: usize| dropped[..pos].iter().filter(|&&d| d).count();
    let (s, e) = sample.target;
    let len = t - n;
    let mut ns = s - before(s);
    let mut ne = e - before(e);
    if ns == ne {
        if ns == len {
            ns -= 1;
        } else {
            ne += 1;
        }
    }
    let fl = sample.frame_len();
    let mut frames = Vec::with_capacity(len * fl);
    for (i, _) in dropped.iter().enumerate().filter(|(_, &d)| !d) {
        frames.extend_from_slice(sample.frame(i));
    }
    Ok(SequenceSample {
        frames,
        length: len,
        target: (ns, ne),
        ..sample.clone_header()
    })
}

/// Crops every frame of the clip to `crop x crop`. Training draws one
/// offset and one horizontal-flip decision for the whole clip; evaluation
/// takes the centre crop without flipping.
pub fn spatial_augment<R: Rng + ?Sized>(
    sample: &SequenceSample,
    crop: usize,
    flip_prob: f64,
    train: bool,
    rng: &mut R,
) -> Result<SequenceSample> {
    let (h, w) = (sample.height, sample.width);
    if crop == 0 || crop > h || crop > w {
        return Err(Error::invalid(
            "spatial_augment",
            format!("crop {crop} does not fit a {h}x{w} frame"),
        ));
    }
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::invalid(
            "spatial_augment",
            "flip probability must lie in [0, 1]",
        ));
    }
    let (y0, x0, flip) = if train {
        let y0 = rng.gen_range(0..=h - crop);
        let x0 = rng.gen_range(0..=w - crop);
        (y0, x0, rng.gen_bool(flip_prob))
    } else {
        ((h - crop) / 2, (w - crop) / 2, false)
    };
    let mut frames = Vec::with_capacity(sample.length * crop * crop);
    for t in 0..sample.length {
        let f = sample.frame(t);
        for y in y0..y0 + crop {
            let row = &f[y * w + x0..y * w + x0 + crop];
            if flip {
                frames.extend(row.iter().rev());
            } else {
                frames.extend_from_slice(row);
            }
        }
    }
    Ok(SequenceSample {
        frames,
        height: crop,
        width: crop,
        ..sample.clone_header()
    })
}
