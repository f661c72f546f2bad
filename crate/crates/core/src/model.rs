//! Full word classifier: visual frontend, multi-scale TCN back-end,
//! per-step dense head and averaging consensus.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Batch;
use crate::error::Result;
use crate::frontend::{Frontend, FrontendSpec};
use crate::nn::{Forward, Mode, ParamStore, TimeMask};
use crate::rng::{stream, StreamRng};
use crate::temporal::{consensus_classify, MultiScaleTCNSpec, MultiScaleTcn};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub frontend: FrontendSpec,
    pub tcn: MultiScaleTCNSpec,
}

impl Default for ModelSpec {
    /// Reduced widths sized for CPU training on 32x32 crops.
    fn default() -> Self {
        ModelSpec {
            frontend: FrontendSpec::default(),
            tcn: MultiScaleTCNSpec {
                channels: 96,
                ..MultiScaleTCNSpec::default()
            },
        }
    }
}

impl ModelSpec {
    pub fn full_scale(num_classes: usize) -> Self {
        ModelSpec {
            frontend: FrontendSpec::resnet18(),
            tcn: MultiScaleTCNSpec {
                num_classes,
                ..MultiScaleTCNSpec::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.tcn.validate()
    }
}

/// Layer structure without parameter storage, so a forward pass can borrow
/// it while the store's running statistics are borrowed mutably.
#[derive(Clone, Debug)]
pub struct Network {
    pub frontend: Frontend,
    pub tcn: MultiScaleTcn,
}

impl Network {
    /// Per-step class scores `B x K x T` for clips `B x 1 x T x H x W`.
    pub fn step_logits<'t, T: Real>(
        &self,
        ctx: &mut Forward<'_, 't, T>,
        frames: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        let features = self.frontend.forward(ctx, frames, mask)?;
        self.tcn.forward(ctx, features, mask)
    }

    /// Clip-level scores `B x K`.
    pub fn logits<'t, T: Real>(
        &self,
        ctx: &mut Forward<'_, 't, T>,
        frames: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        let steps = self.step_logits(ctx, frames, mask)?;
        consensus_classify(steps, mask)
    }
}

#[derive(Clone, Debug)]
pub struct LipReader<T> {
    pub spec: ModelSpec,
    pub store: ParamStore<T>,
    pub net: Network,
}

impl<T: Real> LipReader<T> {
    /// Builds and initializes a model from the `init` stream of `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, "init");
        Self::with_rng(spec, &mut rng)
    }

    pub fn with_rng(spec: ModelSpec, rng: &mut StreamRng) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let frontend = Frontend::new(&mut store, "frontend", spec.frontend.clone(), rng)?;
        let tcn = MultiScaleTcn::new(
            &mut store,
            "tcn",
            frontend.output_channels(),
            spec.tcn.clone(),
            rng,
        )?;
        Ok(LipReader {
            spec,
            store,
            net: Network { frontend, tcn },
        })
    }

    pub fn num_classes(&self) -> usize {
        self.net.tcn.spec.num_classes
    }

    /// Swaps in a freshly initialized head for `classes` outputs.
    pub fn reset_head(&mut self, classes: usize, rng: &mut StreamRng) {
        self.net.tcn.reset_head(&mut self.store, classes, rng);
        self.spec.tcn.num_classes = classes;
    }

    /// Inference-mode clip scores `B x K`; running statistics are read,
    /// never updated.
    pub fn predict(&self, batch: &Batch<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let params = self.store.attach_frozen(&tape);
        let mut stats = self.store.stats().to_vec();
        let mut rng = stream(0, "unused");
        let mut ctx = Forward {
            tape: &tape,
            params: &params,
            stats: &mut stats,
            mode: Mode::Eval,
            rng: &mut rng,
        };
        let x = tape.constant(batch.frames.clone());
        Ok(self.net.logits(&mut ctx, x, Some(&batch.mask))?.to_tensor())
    }

    /// Inference-mode per-step scores `B x K x T`.
    pub fn predict_steps(&self, batch: &Batch<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let params = self.store.attach_frozen(&tape);
        let mut stats = self.store.stats().to_vec();
        let mut rng = stream(0, "unused");
        let mut ctx = Forward {
            tape: &tape,
            params: &params,
            stats: &mut stats,
            mode: Mode::Eval,
            rng: &mut rng,
        };
        let x = tape.constant(batch.frames.clone());
        Ok(self
            .net
            .step_logits(&mut ctx, x, Some(&batch.mask))?
            .to_tensor())
    }

    pub fn cast<U: Real>(&self) -> LipReader<U> {
        LipReader {
            spec: self.spec.clone(),
            store: self.store.cast(),
            net: self.net.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collate, synth_generate, SynthConfig};

    fn tiny() -> ModelSpec {
        ModelSpec {
            frontend: FrontendSpec {
                stage_widths: vec![4, 8],
                ..FrontendSpec::default()
            },
            tcn: MultiScaleTCNSpec {
                num_blocks: 2,
                channels: 6,
                num_classes: 3,
                ..MultiScaleTCNSpec::default()
            },
        }
    }

    #[test]
    fn eval_before_training_is_an_error() {
        let cfg = SynthConfig {
            num_classes: 3,
            frame_size: 16,
            train_size: 2,
            val_size: 1,
            test_size: 1,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg, 7).unwrap();
        let batch = collate::<f32>(&data.train.samples, None).unwrap();
        let m = LipReader::<f32>::new(tiny(), 1).unwrap();
        assert!(m.predict(&batch).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = LipReader::<f32>::new(tiny(), 5).unwrap();
        let b = LipReader::<f32>::new(tiny(), 5).unwrap();
        let c = LipReader::<f32>::new(tiny(), 6).unwrap();
        let first = |m: &LipReader<f32>| m.store.params()[0].value.clone();
        assert_eq!(first(&a), first(&b));
        assert_ne!(first(&a), first(&c));
    }
}
