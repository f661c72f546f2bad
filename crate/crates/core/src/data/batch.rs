use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::nn::TimeMask;
use crate::tensor::{Real, Tensor};

/// Clips stacked into `B x 1 x T x H x W`, zero-padded at the tail, with
/// a mask marking the real frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T = f32> {
    pub frames: Tensor<T>,
    pub mask: TimeMask,
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.mask.steps()
    }

    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch {
            frames: self.frames.cast(),
            mask: self.mask.clone(),
            labels: self.labels.clone(),
            lengths: self.lengths.clone(),
        }
    }
}

/// Stacks clips of equal frame size. Shorter clips are padded with zero
/// frames up to `pad_to` (or the longest clip when `None`).
pub fn collate<T: Real>(samples: &[SequenceSample], pad_to: Option<usize>) -> Result<Batch<T>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("collate", "empty batch"))?;
    let (h, w) = (first.height, first.width);
    if let Some(s) = samples.iter().find(|s| (s.height, s.width) != (h, w)) {
        return Err(Error::invalid(
            "collate",
            format!("mixed frame sizes {h}x{w} and {}x{}", s.height, s.width),
        ));
    }
    let longest = samples.iter().map(|s| s.length).max().unwrap_or(0);
    let steps = pad_to.unwrap_or(longest);
    if steps < longest {
        return Err(Error::invalid(
            "collate",
            format!("pad length {steps} shorter than longest clip {longest}"),
        ));
    }
    let per = steps * h * w;
    let mut data = vec![T::zero(); samples.len() * per];
    for (b, s) in samples.iter().enumerate() {
        for (dst, &v) in data[b * per..].iter_mut().zip(&s.frames) {
            *dst = T::of(v as f64);
        }
    }
    let lengths: Vec<usize> = samples.iter().map(|s| s.length).collect();
    Ok(Batch {
        frames: Tensor::new(vec![samples.len(), 1, steps, h, w], data)?,
        mask: TimeMask::from_lengths(&lengths, steps),
        labels: samples.iter().map(|s| s.label).collect(),
        lengths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(t: usize, v: f32) -> SequenceSample {
        SequenceSample::new(vec![v; t * 4], t, 2, 2, t, (0, 1)).unwrap()
    }

    #[test]
    fn pads_tail_with_zeros() {
        let b: Batch = collate(&[clip(3, 0.5), clip(1, 1.0)], None).unwrap();
        assert_eq!(b.frames.shape(), &[2, 1, 3, 2, 2]);
        assert_eq!(b.lengths, vec![3, 1]);
        assert_eq!(b.labels, vec![3, 1]);
        let second = &b.frames.data()[12..];
        assert_eq!(&second[..4], &[1.0; 4]);
        assert!(second[4..].iter().all(|&v| v == 0.0));
        assert!(b.mask.is_valid(1, 0) && !b.mask.is_valid(1, 1));
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(collate::<f32>(&[], None).is_err());
        assert!(collate::<f32>(&[clip(3, 0.0)], Some(2)).is_err());
        let odd = SequenceSample::new(vec![0.0; 9], 1, 3, 3, 0, (0, 1)).unwrap();
        assert!(collate::<f32>(&[clip(1, 0.0), odd], None).is_err());
    }
}
