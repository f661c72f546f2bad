//! Dilated temporal convolution blocks, the multi-scale TCN and the
//! per-step dense head with averaging consensus.
//!
//! A multi-scale convolution runs `n` parallel dilated convolutions with
//! different kernel sizes over the same input, each producing `C / n`
//! channels, and concatenates them (ascending kernel size). A temporal
//! block is two such convolutions, each followed by batchnorm, ReLU and
//! dropout, plus a skip path (identity, or a 1x1 convolution when the
//! channel count changes). Block `i` (1-indexed) dilates by `2^(i-1)`.
//! With a single branch the block is the plain TCN block.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ops::concat, Var};
use crate::error::{Error, Result};
use crate::nn::{
    conv1d, dropout, mask_steps, masked_time_mean, BatchNorm, Forward, Mode, ParamId, ParamKind,
    ParamStore, TimeMask,
};
use crate::rng::StreamRng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub causal: bool,
}

impl TemporalConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channels", "must be positive"));
        }
        if self.kernel_size == 0 || self.dilation == 0 {
            return Err(Error::config(
                "kernel_size",
                "kernel size and dilation must be positive",
            ));
        }
        if !self.causal && self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(
                "kernel_size",
                format!(
                    "non-causal convolution needs an odd kernel, got {}",
                    self.kernel_size
                ),
            ));
        }
        Ok(())
    }

    /// Zero padding `(left, right)` that keeps the sequence length.
    pub fn padding(&self) -> (usize, usize) {
        let span = (self.kernel_size - 1) * self.dilation;
        if self.causal {
            (span, 0)
        } else {
            (span / 2, span / 2)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// One entry per branch, strictly ascending.
    pub kernel_sizes: Vec<usize>,
    pub dilation: usize,
    pub dropout: f64,
    pub causal: bool,
}

impl TemporalBlockSpec {
    pub fn validate(&self) -> Result<()> {
        validate_branches(&self.kernel_sizes, self.out_channels, self.causal)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(
                "dropout",
                format!("{} outside [0, 1)", self.dropout),
            ));
        }
        for spec in self.conv_specs().iter().flatten() {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn branch_channels(&self) -> usize {
        self.out_channels / self.kernel_sizes.len()
    }

    /// Per-branch specs of the first and second convolution.
    pub fn conv_specs(&self) -> [Vec<TemporalConvSpec>; 2] {
        let per = self.branch_channels();
        let make = |cin: usize| {
            self.kernel_sizes
                .iter()
                .map(|&k| TemporalConvSpec {
                    in_channels: cin,
                    out_channels: per,
                    kernel_size: k,
                    dilation: self.dilation,
                    causal: self.causal,
                })
                .collect()
        };
        [make(self.in_channels), make(self.out_channels)]
    }

    pub fn has_projection(&self) -> bool {
        self.in_channels != self.out_channels
    }
}

fn validate_branches(kernels: &[usize], channels: usize, causal: bool) -> Result<()> {
    if kernels.is_empty() {
        return Err(Error::config(
            "branch_kernel_sizes",
            "at least one branch is required",
        ));
    }
    if kernels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "branch_kernel_sizes",
            format!("{kernels:?} must be strictly ascending"),
        ));
    }
    if let Some(&k) = kernels.iter().find(|&&k| k == 0 || (!causal && k % 2 == 0)) {
        return Err(Error::config(
            "branch_kernel_sizes",
            format!("kernel {k} must be odd and positive in non-causal mode"),
        ));
    }
    if channels == 0 || !channels.is_multiple_of(kernels.len()) {
        return Err(Error::config(
            "channels",
            format!("{channels} is not divisible by {} branches", kernels.len()),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiScaleTCNSpec {
    pub num_blocks: usize,
    pub branch_kernel_sizes: Vec<usize>,
    pub channels: usize,
    pub dropout: f64,
    pub causal: bool,
    pub num_classes: usize,
}

impl Default for MultiScaleTCNSpec {
    fn default() -> Self {
        MultiScaleTCNSpec {
            num_blocks: 4,
            branch_kernel_sizes: vec![3, 5, 7],
            channels: 384,
            dropout: 0.2,
            causal: false,
            num_classes: 10,
        }
    }
}

impl MultiScaleTCNSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::config("num_blocks", "must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(
                "dropout",
                format!("{} outside [0, 1)", self.dropout),
            ));
        }
        validate_branches(&self.branch_kernel_sizes, self.channels, self.causal)
    }

    /// Dilation of block `index` (0-indexed), i.e. `2^(i-1)` for 1-indexed `i`.
    pub fn dilation(index: usize) -> usize {
        1 << index
    }

    pub fn block_spec(&self, index: usize, in_channels: usize) -> TemporalBlockSpec {
        TemporalBlockSpec {
            in_channels,
            out_channels: self.channels,
            kernel_sizes: self.branch_kernel_sizes.clone(),
            dilation: Self::dilation(index),
            dropout: self.dropout,
            causal: self.causal,
        }
    }
}

/// Receptive field of one branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchField {
    pub kernel_size: usize,
    pub frames: usize,
}

/// Frames seen by one output step of a stack of `blocks` blocks, each
/// holding two convolutions of kernel `k` at dilation `2^(i-1)`:
/// `1 + sum_i 2 (k - 1) 2^(i-1)`.
pub fn receptive_field_frames(kernel_size: usize, blocks: usize) -> usize {
    1 + (0..blocks)
        .map(|i| 2 * (kernel_size - 1) * (1 << i))
        .sum::<usize>()
}

/// Analytic receptive field for every branch of `spec`.
pub fn receptive_field(spec: &MultiScaleTCNSpec) -> Vec<BranchField> {
    spec.branch_kernel_sizes
        .iter()
        .map(|&k| BranchField {
            kernel_size: k,
            frames: receptive_field_frames(k, spec.num_blocks),
        })
        .collect()
}

/// `n` parallel dilated convolutions concatenated over channels.
#[derive(Clone, Debug)]
pub struct MultiScaleConv {
    pub specs: Vec<TemporalConvSpec>,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl MultiScaleConv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        specs: Vec<TemporalConvSpec>,
        rng: &mut StreamRng,
    ) -> Self {
        let mut weights = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for (j, s) in specs.iter().enumerate() {
            let fan_in = s.in_channels * s.kernel_size;
            weights.push(store.add_kaiming(
                format!("{name}.branch{j}.weight"),
                vec![s.out_channels, s.in_channels, s.kernel_size],
                fan_in,
                rng,
            ));
            biases.push(store.add(
                format!("{name}.branch{j}.bias"),
                ParamKind::Bias,
                Tensor::zeros(vec![s.out_channels]),
            ));
        }
        MultiScaleConv {
            specs,
            weights,
            biases,
        }
    }

    pub fn forward<'t, T: Real>(
        &self,
        ctx: &Forward<'_, 't, T>,
        x: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        let x = match mask {
            Some(m) => mask_steps(x, m)?,
            None => x,
        };
        let outs = self
            .specs
            .iter()
            .zip(self.weights.iter().zip(&self.biases))
            .map(|(s, (&w, &b))| conv1d(x, ctx.param(w), Some(ctx.param(b)), s.dilation, s.causal))
            .collect::<Result<Vec<_>>>()?;
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            concat(&outs, 1)
        }
    }

    /// Runs only branch `j` (its slice of the concatenated output).
    pub fn forward_branch<'t, T: Real>(
        &self,
        ctx: &Forward<'_, 't, T>,
        x: Var<'t, T>,
        j: usize,
    ) -> Result<Var<'t, T>> {
        let s = &self.specs[j];
        conv1d(
            x,
            ctx.param(self.weights[j]),
            Some(ctx.param(self.biases[j])),
            s.dilation,
            s.causal,
        )
    }
}

#[derive(Clone, Debug)]
pub struct TemporalBlock {
    pub spec: TemporalBlockSpec,
    pub conv1: MultiScaleConv,
    pub bn1: BatchNorm,
    pub conv2: MultiScaleConv,
    pub bn2: BatchNorm,
    /// 1x1 projection `(weight, bias)` when channel counts differ.
    pub projection: Option<(ParamId, ParamId)>,
}

impl TemporalBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: TemporalBlockSpec,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        spec.validate()?;
        let [s1, s2] = spec.conv_specs();
        let conv1 = MultiScaleConv::new(store, &format!("{name}.conv1"), s1, rng);
        let bn1 = BatchNorm::new(store, &format!("{name}.bn1"), spec.out_channels);
        let conv2 = MultiScaleConv::new(store, &format!("{name}.conv2"), s2, rng);
        let bn2 = BatchNorm::new(store, &format!("{name}.bn2"), spec.out_channels);
        let projection = spec.has_projection().then(|| {
            let w = store.add_kaiming(
                format!("{name}.skip.weight"),
                vec![spec.out_channels, spec.in_channels, 1],
                spec.in_channels,
                rng,
            );
            let b = store.add(
                format!("{name}.skip.bias"),
                ParamKind::Bias,
                Tensor::zeros(vec![spec.out_channels]),
            );
            (w, b)
        });
        Ok(TemporalBlock {
            spec,
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
        })
    }

    /// `main(x) + skip(x)`; length preserved. Dropout follows each
    /// activation in train mode only.
    pub fn forward<'t, T: Real>(
        &self,
        ctx: &mut Forward<'_, 't, T>,
        x: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        let mut h = self.conv1.forward(ctx, x, mask)?;
        h = self.bn1.forward(ctx, h, mask)?.relu();
        h = self.drop(ctx, h)?;
        h = self.conv2.forward(ctx, h, mask)?;
        h = self.bn2.forward(ctx, h, mask)?.relu();
        h = self.drop(ctx, h)?;
        let skip = match self.projection {
            Some((w, b)) => conv1d(x, ctx.param(w), Some(ctx.param(b)), 1, false)?,
            None => x,
        };
        h.add(skip)
    }

    fn drop<'t, T: Real>(&self, ctx: &mut Forward<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if ctx.mode == Mode::Train && self.spec.dropout > 0.0 {
            dropout(x, self.spec.dropout, ctx.rng)
        } else {
            Ok(x)
        }
    }
}

/// Stack of multi-scale temporal blocks followed by a dense map applied
/// at every time step.
#[derive(Clone, Debug)]
pub struct MultiScaleTcn {
    pub spec: MultiScaleTCNSpec,
    pub in_channels: usize,
    pub blocks: Vec<TemporalBlock>,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

impl MultiScaleTcn {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        spec: MultiScaleTCNSpec,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        spec.validate()?;
        if in_channels == 0 {
            return Err(Error::config("in_channels", "must be positive"));
        }
        let mut blocks = Vec::with_capacity(spec.num_blocks);
        let mut cin = in_channels;
        for i in 0..spec.num_blocks {
            blocks.push(TemporalBlock::new(
                store,
                &format!("{name}.block{i}"),
                spec.block_spec(i, cin),
                rng,
            )?);
            cin = spec.channels;
        }
        let (head_weight, head_bias) =
            Self::make_head(store, name, spec.channels, spec.num_classes, rng);
        Ok(MultiScaleTcn {
            spec,
            in_channels,
            blocks,
            head_weight,
            head_bias,
        })
    }

    fn make_head<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        classes: usize,
        rng: &mut StreamRng,
    ) -> (ParamId, ParamId) {
        let w = store.add_kaiming(
            format!("{name}.head.weight"),
            vec![classes, channels, 1],
            channels,
            rng,
        );
        let b = store.add(
            format!("{name}.head.bias"),
            ParamKind::Bias,
            Tensor::zeros(vec![classes]),
        );
        (w, b)
    }

    /// Re-initializes the dense head for a (possibly different) class count.
    pub fn reset_head<T: Real>(
        &mut self,
        store: &mut ParamStore<T>,
        classes: usize,
        rng: &mut StreamRng,
    ) {
        use rand::Rng;
        let c = self.spec.channels;
        let bound = (6.0 / c as f64).sqrt();
        store.replace(
            self.head_weight,
            Tensor::from_fn(vec![classes, c, 1], |_| T::of(rng.gen_range(-bound..bound))),
        );
        store.replace(self.head_bias, Tensor::zeros(vec![classes]));
        self.spec.num_classes = classes;
    }

    /// Per-step class scores `B x K x T` from features `B x C x T`.
    pub fn forward<'t, T: Real>(
        &self,
        ctx: &mut Forward<'_, 't, T>,
        features: Var<'t, T>,
        mask: Option<&TimeMask>,
    ) -> Result<Var<'t, T>> {
        let shape = features.shape();
        if shape.len() != 3 || shape[1] != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "tcn",
                lhs: shape,
                rhs: vec![0, self.in_channels, 0],
            });
        }
        let mut h = features;
        for block in &self.blocks {
            h = block.forward(ctx, h, mask)?;
        }
        conv1d(
            h,
            ctx.param(self.head_weight),
            Some(ctx.param(self.head_bias)),
            1,
            false,
        )
    }
}

/// Averages per-step scores over each sequence's valid steps.
pub fn consensus_classify<'t, T: Real>(
    step_logits: Var<'t, T>,
    mask: Option<&TimeMask>,
) -> Result<Var<'t, T>> {
    masked_time_mean(step_logits, mask)
}

/// Empirical receptive field of a single-branch stack: perturbs one frame
/// in the middle of a long sequence and counts the output steps whose
/// per-step logits move.
///
/// All weights are positive and the input is positive, so every ReLU is
/// active and no dependency is masked by a dead unit.
pub fn trace_receptive_field(kernel_size: usize, blocks: usize, causal: bool) -> Result<usize> {
    use crate::autodiff::Tape;
    use rand::Rng;

    let spec = MultiScaleTCNSpec {
        num_blocks: blocks,
        branch_kernel_sizes: vec![kernel_size],
        channels: 2,
        dropout: 0.0,
        causal,
        num_classes: 1,
    };
    let mut rng = crate::rng::stream(0, "rf-trace");
    let mut store = ParamStore::<f64>::new();
    let tcn = MultiScaleTcn::new(&mut store, "tcn", 2, spec, &mut rng)?;
    for p in store.params_mut() {
        if p.kind == ParamKind::Weight {
            for v in p.value.data_mut() {
                *v = rng.gen_range(0.1..1.0);
            }
        }
    }
    for s in store.stats_mut() {
        s.updates = 1;
    }
    let steps = 4 * kernel_size * (1 << blocks) + 1;
    let center = steps / 2;
    let run = |bump: f64| -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = store.attach_frozen(&tape);
        let mut stats = store.stats().to_vec();
        let mut rng = crate::rng::stream(0, "unused");
        let mut ctx = Forward {
            tape: &tape,
            params: &vars,
            stats: &mut stats,
            mode: Mode::Eval,
            rng: &mut rng,
        };
        let x = Tensor::from_fn(vec![1, 2, steps], |i| {
            if i % steps == center {
                1.0 + bump
            } else {
                1.0
            }
        });
        let y = tcn.forward(&mut ctx, tape.constant(x), None)?;
        let out = y.value().data().to_vec();
        Ok(out)
    };
    let base = run(0.0)?;
    let moved = run(1.0)?;
    Ok(base.iter().zip(&moved).filter(|(a, b)| a != b).count())
}
