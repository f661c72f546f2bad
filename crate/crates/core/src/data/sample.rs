use crate::error::{Error, Result};

/// A grayscale clip with its label and the frame range holding the
/// class-defining motion.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    /// `length x height x width` values in `[0, 1]`, frame-major.
    pub frames: Vec<f32>,
    pub length: usize,
    pub height: usize,
    pub width: usize,
    pub label: usize,
    /// Half-open `[start, end)` target interval.
    pub target: (usize, usize),
}

impl SequenceSample {
    pub fn new(
        frames: Vec<f32>,
        length: usize,
        height: usize,
        width: usize,
        label: usize,
        target: (usize, usize),
    ) -> Result<Self> {
        let s = SequenceSample {
            frames,
            length,
            height,
            width,
            label,
            target,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, e) = self.target;
        if self.length == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("sample", "extents must be positive"));
        }
        if self.frames.len() != self.length * self.frame_len() {
            return Err(Error::invalid(
                "sample",
                format!(
                    "{} values for {}x{}x{} clip",
                    self.frames.len(),
                    self.length,
                    self.height,
                    self.width
                ),
            ));
        }
        if !(s < e && e <= self.length) {
            return Err(Error::invalid(
                "sample",
                format!(
                    "target interval [{s}, {e}) invalid for length {}",
                    self.length
                ),
            ));
        }
        if self.frames.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("sample", "pixel values must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    /// Frames `[start, end)` as a new clip with the target remapped.
    pub fn slice(&self, start: usize, end: usize, target: (usize, usize)) -> Self {
        let n = self.frame_len();
        SequenceSample {
            frames: self.frames[start * n..end * n].to_vec(),
            length: end - start,
            height: self.height,
            width: self.width,
            label: self.label,
            target,
        }
    }

    /// Copy of everything but the pixel data.
    pub(crate) fn clone_header(&self) -> SequenceSample {
        SequenceSample {
            frames: Vec::new(),
            length: self.length,
            height: self.height,
            width: self.width,
            label: self.label,
            target: self.target,
        }
    }
}
