//! Layers built on the autodiff primitives.

pub mod conv;
pub mod functional;
pub mod params;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{Real, Tensor};

pub use conv::{conv1d, conv3d, max_pool3d, ConvGeometry};
pub use functional::{
    batch_norm_eval, batch_norm_train, cross_entropy, dropout, mask_steps, masked_time_mean,
    BatchStats, TimeMask,
};
pub use params::{NormStats, Param, ParamId, ParamKind, ParamStore, StatsId};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a layer needs during one forward pass.
pub struct Forward<'a, 't, T> {
    pub tape: &'t Tape<T>,
    pub params: &'a [Var<'t, T>],
    pub stats: &'a mut [NormStats<T>],
    pub mode: Mode,
    pub rng: &'a mut StreamRng,
}

impl<'t, T: Real> Forward<'_, 't, T> {
    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        self.params[id.0]
    }
}

/// Convolution over rank-5 input with an optional bias.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeometry,
        bias: bool,
        rng: &mut StreamRng,
    ) -> Self {
        let k = geom.kernel;
        let fan_in = in_channels * k.iter().product::<usize>();
        let weight = store.add_kaiming(
            format!("{name}.weight"),
            vec![out_channels, in_channels, k[0], k[1], k[2]],
            fan_in,
            rng,
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                ParamKind::Bias,
                Tensor::zeros(vec![out_channels]),
            )
        });
        Conv3d { weight, bias, geom }
    }

    pub fn forward<'t, T: Real>(
        &self,
        ctx: &Forward<'_, 't, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        conv3d(
            x,
            ctx.param(self.weight),
            self.bias.map(|b| ctx.param(b)),
            self.geom,
        )
    }
}

/// Batch normalization over channel axis 1.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            ParamKind::Norm,
            Tensor::ones(vec![channels]),
        );
        let beta = store.add(
            format!("{name}.beta"),
            ParamKind::Norm,
            Tensor::zeros(vec![channels]),
        );
        let stats = store.add_stats(name, channels);
        BatchNorm { gamma, beta, stats }
    }

    /// Train mode normalizes with (masked) batch statistics and folds them
    /// into the running estimates; eval mode uses the running estimates.
    pub fn forward<'t, T: Real>(
        &self,
        ctx: &mut Forward<'_, 't, T>,
        x: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        let (gamma, beta) = (ctx.param(self.gamma), ctx.param(self.beta));
        let stats = &mut ctx.stats[self.stats.0];
        match ctx.mode {
            Mode::Train => {
                let (y, batch) = batch_norm_train(x, gamma, beta, mask, BN_EPS)?;
                let m = T::of(BN_MOMENTUM);
                let keep = T::one() - m;
                for (r, &b) in stats.mean.iter_mut().zip(&batch.mean) {
                    *r = keep * *r + m * b;
                }
                for (r, &b) in stats.var.iter_mut().zip(&batch.var) {
                    *r = keep * *r + m * b;
                }
                stats.updates += 1;
                Ok(y)
            }
            Mode::Eval => {
                if stats.updates == 0 {
                    return Err(Error::NoRunningStats(stats.name.clone()));
                }
                batch_norm_eval(x, gamma, beta, &stats.mean, &stats.var, BN_EPS)
            }
        }
    }
}
