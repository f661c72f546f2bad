//! Run configuration: one JSON document holding every knob of a run.
//! Missing keys take defaults, unknown keys are rejected, and command-line
//! flags are applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Frame-drop counts swept by `eval`.
    pub drop_frames: Vec<usize>,
    pub split: crate::data::Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            drop_frames: (0..=5).collect(),
            split: crate::data::Split::Test,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset directory (written by `gen-data`, read by `train`/`eval`).
    pub data_dir: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.
    pub out_dir: Option<PathBuf>,
    pub data: SynthConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section plus the constraints that span sections.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.tcn.num_classes != self.data.num_classes {
            return Err(Error::config(
                "model.tcn.num_classes",
                format!(
                    "{} does not match data.num_classes {}",
                    self.model.tcn.num_classes, self.data.num_classes
                ),
            ));
        }
        if let Some(c) = self.train.crop_size {
            if c > self.data.frame_size {
                return Err(Error::config(
                    "train.crop_size",
                    format!("{c} exceeds data.frame_size {}", self.data.frame_size),
                ));
            }
        }
        let side = self.train.crop_size.unwrap_or(self.data.frame_size);
        self.model
            .frontend
            .spatial_extents(side, side)
            .map_err(|e| {
                Error::config(
                    "model.frontend",
                    format!("input {side}x{side} too small: {e}"),
                )
            })?;
        if let Some(&n) = self
            .eval
            .drop_frames
            .iter()
            .find(|&&n| n >= self.data.length)
        {
            return Err(Error::config(
                "eval.drop_frames",
                format!("cannot drop {n} of {} frames", self.data.length),
            ));
        }
        Ok(())
    }
}
