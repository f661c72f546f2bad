//! Named parameter and batchnorm-statistics storage.
//!
//! Parameters live outside any tape. Each step attaches them to a fresh
//! tape as leaves (in registration order), so a parameter's position in
//! the store is also its position in the attached `Vec<Var>`.

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution / dense weights; subject to weight decay.
    Weight,
    Bias,
    /// Batchnorm scale and shift.
    Norm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Running batchnorm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub updates: u64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    stats: Vec<NormStats<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            stats: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            kind,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Kaiming-uniform (fan-in) weight: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    pub fn add_kaiming<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let value = Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)));
        self.add(name, ParamKind::Weight, value)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.stats.push(NormStats {
            name: name.into(),
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            updates: 0,
        });
        StatsId(self.stats.len() - 1)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn stats(&self) -> &[NormStats<T>] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [NormStats<T>] {
        &mut self.stats
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Attaches every parameter to `tape` as a differentiable leaf.
    pub fn attach<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect()
    }

    /// Attaches every parameter as a constant (inference only).
    pub fn attach_frozen<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.params
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect()
    }

    /// Gradients in store order; parameters the loss did not reach get zeros.
    pub fn collect_grads(&self, vars: &[Var<'_, T>], grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .zip(vars)
            .map(|(p, &v)| grads.take(v).unwrap_or_else(|| p.value.zeros_like()))
            .collect()
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|s| NormStats {
                    name: s.name.clone(),
                    mean: s.mean.iter().map(|v| U::of(v.as_f64())).collect(),
                    var: s.var.iter().map(|v| U::of(v.as_f64())).collect(),
                    updates: s.updates,
                })
                .collect(),
        }
    }

    /// Replaces the parameter at `id` (same name and kind) with a new value.
    pub fn replace(&mut self, id: ParamId, value: Tensor<T>) {
        self.params[id.0].value = value;
    }
}
