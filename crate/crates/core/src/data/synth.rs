//! Synthetic moving-dot clips that mimic the biases of word-level
//! lip-reading data: every clip has the same length and the class-defining
//! segment sits in the middle, surrounded by class-independent context.
//!
//! A class is a motion signature: a direction (up to horizontal mirroring,
//! so random flips keep labels valid), whether the path oscillates
//! sideways, and a speed band. Start positions are random, so no single
//! frame identifies the class; only motion across frames does.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::rng::{derive_indexed, derive_seed, StreamRng};

/// Directions (degrees) grouped into horizontal-mirror orbits.
const DIRECTIONS: [&[f64]; 5] = [
    &[0.0, 180.0],
    &[45.0, 135.0],
    &[90.0],
    &[225.0, 315.0],
    &[270.0],
];
const OSCILLATIONS: usize = 2;
const SPEEDS: [(f64, f64); 2] = [(0.8, 1.1), (1.6, 2.0)];

/// Number of distinguishable motion signatures.
pub const MAX_CLASSES: usize = DIRECTIONS.len() * OSCILLATIONS * SPEEDS.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextStyle {
    /// A distractor dot drifting in a random direction.
    RandomMotion,
    /// A distractor dot jittering around a random point.
    Jitter,
    /// Empty background (noise only).
    Blank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Clip length in frames.
    pub length: usize,
    /// Square frame side in pixels.
    pub frame_size: usize,
    /// Inclusive range of target-interval durations.
    pub pattern_min: usize,
    pub pattern_max: usize,
    pub context: ContextStyle,
    /// Period in frames of the sideways wobble of oscillating classes.
    pub oscillation_period: f64,
    /// Wobble amplitude and dot radius (Gaussian sigma), in pixels of a
    /// 32-pixel frame; both scale with `frame_size`.
    pub oscillation_amplitude: f64,
    pub dot_sigma: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 10,
            length: 29,
            frame_size: 36,
            pattern_min: 11,
            pattern_max: 15,
            context: ContextStyle::RandomMotion,
            oscillation_period: 6.0,
            oscillation_amplitude: 6.0,
            dot_sigma: 3.0,
            noise: 0.05,
            train_size: 500,
            val_size: 200,
            test_size: 200,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be positive"));
        }
        if self.num_classes > MAX_CLASSES {
            return Err(Error::config(
                "num_classes",
                format!(
                    "{} exceeds the {MAX_CLASSES} distinguishable signatures",
                    self.num_classes
                ),
            ));
        }
        if self.length == 0 {
            return Err(Error::config("length", "must be positive"));
        }
        if self.frame_size < 8 {
            return Err(Error::config("frame_size", "must be at least 8 pixels"));
        }
        if self.pattern_min < 2 || self.pattern_min > self.pattern_max {
            return Err(Error::config(
                "pattern_min",
                "need 2 <= pattern_min <= pattern_max",
            ));
        }
        if self.pattern_max > self.length {
            return Err(Error::config(
                "pattern_max",
                "pattern duration exceeds the clip length",
            ));
        }
        for (field, n) in [
            ("train_size", self.train_size),
            ("val_size", self.val_size),
            ("test_size", self.test_size),
        ] {
            if n == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.oscillation_period >= 2.0 && self.oscillation_period.is_finite()) {
            return Err(Error::config(
                "oscillation_period",
                "must be at least 2 frames",
            ));
        }
        if !(self.oscillation_amplitude >= 0.0 && self.oscillation_amplitude.is_finite()) {
            return Err(Error::config(
                "oscillation_amplitude",
                "must be non-negative",
            ));
        }
        if !(self.dot_sigma > 0.0 && self.dot_sigma.is_finite()) {
            return Err(Error::config("dot_sigma", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::config("noise", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> &'static str {
        match self {
            Split::Train => "data/train",
            Split::Val => "data/val",
            Split::Test => "data/test",
        }
    }
}

/// A labelled collection of clips.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub samples: Vec<SequenceSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps only samples of `classes`, relabelling them `0..classes.len()`
    /// in the given order.
    pub fn subset_classes(&self, classes: &[usize]) -> Dataset {
        let samples = self
            .samples
            .iter()
            .filter_map(|s| {
                classes
                    .iter()
                    .position(|&c| c == s.label)
                    .map(|new| SequenceSample {
                        label: new,
                        ..s.clone()
                    })
            })
            .collect();
        Dataset {
            num_classes: classes.len(),
            samples,
        }
    }

    pub fn frame_size(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.height, s.width))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDatasets {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SplitDatasets {
    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Motion signature of one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Signature {
    pub direction: usize,
    pub oscillates: bool,
    pub speed: usize,
}

pub fn signature(class: usize) -> Signature {
    let d = DIRECTIONS.len();
    Signature {
        direction: class % d,
        oscillates: (class / d) % OSCILLATIONS == 1,
        speed: class / (d * OSCILLATIONS),
    }
}

/// Generates all three splits. Sample `i` of a split draws from its own
/// sub-seed of `(seed, split, i)`, so generation order is irrelevant.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SplitDatasets> {
    cfg.validate()?;
    let make = |split: Split, n: usize| -> Dataset {
        let samples = (0..n).map(|i| synth_sample(cfg, seed, split, i)).collect();
        Dataset {
            num_classes: cfg.num_classes,
            samples,
        }
    };
    Ok(SplitDatasets {
        train: make(Split::Train, cfg.train_size),
        val: make(Split::Val, cfg.val_size),
        test: make(Split::Test, cfg.test_size),
    })
}

/// Sample `index` of `split`; its label is `index mod K`.
pub fn synth_sample(cfg: &SynthConfig, seed: u64, split: Split, index: usize) -> SequenceSample {
    use rand::SeedableRng;
    let mut rng = StreamRng::seed_from_u64(derive_indexed(
        derive_seed(seed, split.stream()),
        index as u64,
    ));
    let label = index % cfg.num_classes;
    let t = cfg.length;
    let dur = rng.gen_range(cfg.pattern_min..=cfg.pattern_max);
    let start = (t - dur) / 2;
    let end = start + dur;
    let scale = cfg.frame_size as f64 / 32.0;

    let mut positions: Vec<Option<(f64, f64)>> = vec![None; t];
    let target = target_path(&mut rng, signature(label), dur, cfg, scale);
    for (k, p) in target.into_iter().enumerate() {
        positions[start + k] = Some(p);
    }
    for (a, b) in [(0, start), (end, t)] {
        if b > a {
            let path = context_path(&mut rng, cfg.context, b - a, cfg.frame_size, scale);
            for (k, p) in path.into_iter().enumerate() {
                positions[a + k] = p;
            }
        }
    }

    let sigma = cfg.dot_sigma * scale;
    let n = cfg.frame_size;
    let mut frames = Vec::with_capacity(t * n * n);
    for p in &positions {
        for y in 0..n {
            for x in 0..n {
                let mut v = 0.0;
                if let Some((px, py)) = p {
                    let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                    v = (-d2 / (2.0 * sigma * sigma)).exp();
                }
                if cfg.noise > 0.0 {
                    v += cfg.noise * gaussian(&mut rng);
                }
                frames.push(quantize(v));
            }
        }
    }
    SequenceSample {
        frames,
        length: t,
        height: n,
        width: n,
        label,
        target: (start, end),
    }
}

/// Rounds to the nearest 8-bit level so clips survive the on-disk format
/// bit-exactly.
pub fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

fn gaussian(rng: &mut StreamRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Shifts a path (relative offsets) to a random placement inside the frame.
fn place(rng: &mut StreamRng, rel: &[(f64, f64)], size: usize, scale: f64) -> Vec<(f64, f64)> {
    let margin = 2.5 * scale;
    let hi = size as f64 - 1.0 - margin;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in rel {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pick = |rng: &mut StreamRng, lo_off: f64, hi_off: f64| -> f64 {
        let (a, b) = (margin - lo_off, hi - hi_off);
        if a < b {
            rng.gen_range(a..b)
        } else {
            (a + b) / 2.0
        }
    };
    let ox = pick(rng, x0, x1);
    let oy = pick(rng, y0, y1);
    rel.iter().map(|&(x, y)| (x + ox, y + oy)).collect()
}

fn target_path(
    rng: &mut StreamRng,
    sig: Signature,
    dur: usize,
    cfg: &SynthConfig,
    scale: f64,
) -> Vec<(f64, f64)> {
    let period = cfg.oscillation_period;
    let orbit = DIRECTIONS[sig.direction];
    let deg = orbit[rng.gen_range(0..orbit.len())];
    let theta = deg.to_radians();
    let (lo, hi) = SPEEDS[sig.speed];
    let speed = rng.gen_range(lo..hi) * scale;
    let amp = cfg.oscillation_amplitude * scale;
    let phase = if rng.gen::<bool>() { 0.0 } else { PI };
    // image y grows downward, so "up" is negative y
    let (dx, dy) = (theta.cos(), -theta.sin());
    let (px, py) = (-dy, dx);
    let rel: Vec<(f64, f64)> = (0..dur)
        .map(|k| {
            let s = speed * (k as f64 - (dur as f64 - 1.0) / 2.0);
            let w = if sig.oscillates {
                amp * (2.0 * PI * k as f64 / period + phase).sin()
            } else {
                0.0
            };
            (s * dx + w * px, s * dy + w * py)
        })
        .collect();
    place(rng, &rel, cfg.frame_size, scale)
}

fn context_path(
    rng: &mut StreamRng,
    style: ContextStyle,
    len: usize,
    size: usize,
    scale: f64,
) -> Vec<Option<(f64, f64)>> {
    match style {
        ContextStyle::Blank => vec![None; len],
        ContextStyle::RandomMotion => {
            let theta = rng.gen_range(0.0..2.0 * PI);
            let speed = rng.gen_range(SPEEDS[0].0..SPEEDS[SPEEDS.len() - 1].1) * scale;
            let rel: Vec<(f64, f64)> = (0..len)
                .map(|k| {
                    let s = speed * k as f64;
                    (s * theta.cos(), s * theta.sin())
                })
                .collect();
            place(rng, &rel, size, scale)
                .into_iter()
                .map(Some)
                .collect()
        }
        ContextStyle::Jitter => {
            let rel: Vec<(f64, f64)> = (0..len)
                .map(|_| {
                    (
                        rng.gen_range(-1.5..1.5) * scale,
                        rng.gen_range(-1.5..1.5) * scale,
                    )
                })
                .collect();
            place(rng, &rel, size, scale)
                .into_iter()
                .map(Some)
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            frame_size: 16,
            train_size: 20,
            val_size: 10,
            test_size: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = small();
        let a = synth_generate(&cfg, 7).unwrap();
        let b = synth_generate(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&cfg, 8).unwrap();
        assert_ne!(a.train.samples[0].frames, c.train.samples[0].frames);
    }

    #[test]
    fn centered_targets_and_balanced_labels() {
        let cfg = small();
        let d = synth_generate(&cfg, 7).unwrap();
        for s in &d.train.samples {
            s.validate().unwrap();
            let (a, e) = s.target;
            assert!(e - a >= cfg.pattern_min && e - a <= cfg.pattern_max);
            assert_eq!(a, (cfg.length - (e - a)) / 2);
            assert_eq!(s.length, 29);
        }
        let mut counts = vec![0; cfg.num_classes];
        d.train.samples.iter().for_each(|s| counts[s.label] += 1);
        assert!(counts.iter().all(|&c| c == 2));
    }

    #[test]
    fn splits_use_disjoint_streams() {
        let cfg = small();
        let train0 = synth_sample(&cfg, 7, Split::Train, 0);
        let val0 = synth_sample(&cfg, 7, Split::Val, 0);
        assert_ne!(train0.frames, val0.frames);
    }

    #[test]
    fn too_many_classes_rejected() {
        let cfg = SynthConfig {
            num_classes: MAX_CLASSES + 1,
            ..small()
        };
        assert!(matches!(synth_generate(&cfg, 7), Err(Error::Config { .. })));
    }

    #[test]
    fn signatures_are_distinct() {
        let sigs: Vec<_> = (0..MAX_CLASSES).map(signature).collect();
        for i in 0..sigs.len() {
            for j in 0..i {
                assert_ne!(sigs[i], sigs[j]);
            }
        }
    }
}
