//! Finite-difference gradient checks for every primitive, every layer
//! type and a tiny end-to-end model, all in 64-bit precision.

use std::cell::RefCell;

use rand::Rng;

use crate::autodiff::{concat, finite_difference_check_sampled, BinaryOp, ReduceOp, Tape, Var};
use crate::error::Result;
use crate::frontend::{spatial_gap, Frontend, FrontendSpec};
use crate::model::{LipReader, ModelSpec};
use crate::nn::{
    batch_norm_eval, batch_norm_train, conv1d, conv3d, cross_entropy, dropout, mask_steps,
    masked_time_mean, max_pool3d, BatchNorm, ConvGeometry, Forward, Mode, ParamStore, TimeMask,
};
use crate::rng::{stream, StreamRng};
use crate::temporal::{MultiScaleTCNSpec, TemporalBlock, TemporalBlockSpec};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-5;
pub const THRESHOLD: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Layers,
    Model,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub component: String,
    pub error: f64,
    pub threshold: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.error < self.threshold
    }
}

/// Values in `+-[0.1, 1]`, away from the ReLU kink.
fn sample(rng: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v = rng.gen_range(0.1..1.0);
        if rng.gen() {
            v
        } else {
            -v
        }
    })
}

/// `sum(out * r)` with a fixed random `r`, so every output element gets
/// a distinct upstream gradient.
fn probe<'t>(out: Var<'t, f64>, r: &Tensor<f64>) -> Result<Var<'t, f64>> {
    let c = out.tape().constant(r.clone());
    Ok(out.mul(c)?.sum_all())
}

struct Suite {
    rows: Vec<CheckRow>,
    rng: RefCell<StreamRng>,
    max_coords: usize,
}

impl Suite {
    /// Checks `f(inputs) . r` where `r` matches the shape `f` produces.
    fn check<F>(&mut self, name: &str, inputs: Vec<Tensor<f64>>, f: F) -> Result<()>
    where
        F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
    {
        let shape = {
            let tape = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            f(&tape, &vars)?.shape()
        };
        let r = self.rand(&shape);
        let error = finite_difference_check_sampled(
            |tape: &_, v: &[Var<'_, f64>]| probe(f(tape, v)?, &r),
            &inputs,
            EPS,
            self.max_coords,
        )?;
        self.rows.push(CheckRow {
            component: name.to_string(),
            error,
            threshold: THRESHOLD,
        });
        Ok(())
    }

    fn rand(&self, shape: &[usize]) -> Tensor<f64> {
        sample(&mut self.rng.borrow_mut(), shape)
    }
}

/// Runs the checks of `scope` and returns one row per component.
pub fn run(scope: Scope, seed: u64) -> Result<Vec<CheckRow>> {
    let mut s = Suite {
        rows: Vec::new(),
        rng: RefCell::new(stream(seed, "gradcheck")),
        max_coords: usize::MAX,
    };
    match scope {
        Scope::Ops => ops(&mut s)?,
        Scope::Layers => layers(&mut s)?,
        Scope::Model => {
            s.max_coords = 48;
            model(&mut s, seed)?
        }
    }
    Ok(s.rows)
}

fn ops(s: &mut Suite) -> Result<()> {
    let (a, b) = (s.rand(&[2, 3, 4]), s.rand(&[3, 1]));
    for (name, op) in [
        ("add", BinaryOp::Add),
        ("sub", BinaryOp::Sub),
        ("mul", BinaryOp::Mul),
    ] {
        s.check(
            &format!("{name} (broadcast)"),
            vec![a.clone(), b.clone()],
            move |_, v| v[0].binary(v[1], op),
        )?;
    }
    s.check(
        "affine",
        vec![a.clone()],
        |_, v| Ok(v[0].affine(-1.5, 0.25)),
    )?;
    s.check("relu", vec![a.clone()], |_, v| Ok(v[0].relu()))?;
    s.check("matmul", vec![s.rand(&[3, 4]), s.rand(&[4, 5])], |_, v| {
        v[0].matmul(v[1])
    })?;
    for (name, op) in [
        ("sum", ReduceOp::Sum),
        ("mean", ReduceOp::Mean),
        ("max", ReduceOp::Max),
    ] {
        s.check(&format!("reduce {name}"), vec![a.clone()], move |_, v| {
            v[0].reduce(op, &[0, 2], false)
        })?;
    }
    s.check("reshape", vec![a.clone()], |_, v| v[0].reshape(&[4, 6]))?;
    s.check("permute", vec![a.clone()], |_, v| v[0].permute(&[2, 0, 1]))?;
    s.check("narrow", vec![a.clone()], |_, v| v[0].narrow(2, 1, 2))?;
    s.check("concat", vec![a.clone(), s.rand(&[2, 2, 4])], |_, v| {
        concat(&[v[0], v[1]], 1)
    })?;

    let geom = ConvGeometry::new([3, 3, 2])
        .stride([1, 2, 1])
        .dilation([2, 1, 1])
        .same_padding([2, 1, 0]);
    s.check(
        "conv3d",
        vec![
            s.rand(&[2, 2, 5, 5, 4]),
            s.rand(&[3, 2, 3, 3, 2]),
            s.rand(&[3]),
        ],
        move |_, v| conv3d(v[0], v[1], Some(v[2]), geom),
    )?;
    let pool = ConvGeometry::new([1, 3, 3])
        .stride([1, 2, 2])
        .same_padding([0, 1, 1]);
    s.check("max_pool3d", vec![s.rand(&[2, 2, 2, 5, 5])], move |_, v| {
        max_pool3d(v[0], pool)
    })?;
    let seq = s.rand(&[2, 3, 9]);
    let mask = TimeMask::from_lengths(&[9, 6], 9);
    s.check("mask_steps", vec![seq.clone()], {
        let mask = mask.clone();
        move |_, v| mask_steps(v[0], &mask)
    })?;
    s.check("masked_time_mean", vec![seq.clone()], {
        let mask = mask.clone();
        move |_, v| masked_time_mean(v[0], Some(&mask))
    })?;
    s.check("dropout", vec![seq.clone()], |_, v| {
        let mut rng = stream(1, "gradcheck-dropout");
        dropout(v[0], 0.3, &mut rng)
    })?;
    let x = s.rand(&[3, 4, 5]);
    let (gamma, beta) = (s.rand(&[4]), s.rand(&[4]));
    s.check(
        "batch_norm_train",
        vec![x.clone(), gamma.clone(), beta.clone()],
        |_, v| Ok(batch_norm_train(v[0], v[1], v[2], None, 1e-5)?.0),
    )?;
    let stat_mask = TimeMask::from_lengths(&[5, 2, 4], 5);
    s.check(
        "batch_norm_train (masked)",
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |_, v| Ok(batch_norm_train(v[0], v[1], v[2], Some(&stat_mask), 1e-5)?.0),
    )?;
    let (rm, rv) = (vec![0.1, -0.2, 0.3, 0.0], vec![1.5, 0.5, 2.0, 1.0]);
    s.check("batch_norm_eval", vec![x, gamma, beta], move |_, v| {
        batch_norm_eval(v[0], v[1], v[2], &rm, &rv, 1e-5)
    })?;
    s.check("cross_entropy", vec![s.rand(&[4, 5])], |_, v| {
        cross_entropy(v[0], &[0, 3, 4, 1])
    })?;
    Ok(())
}

impl Suite {
    /// Checks input and parameter gradients of a layer together. Inputs are
    /// `[x, params...]`.
    fn layer_check<L>(
        &mut self,
        name: &str,
        x: Tensor<f64>,
        store: &ParamStore<f64>,
        mode: Mode,
        forward: L,
    ) -> Result<()>
    where
        L: for<'a, 't> Fn(&mut Forward<'a, 't, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
    {
        let mut inputs = vec![x];
        inputs.extend(store.params().iter().map(|p| p.value.clone()));
        let stats = store.stats().to_vec();
        self.check(name, inputs, move |tape, v| {
            let mut stats = stats.clone();
            let mut rng = stream(2, "gradcheck-dropout");
            let mut ctx = Forward {
                tape,
                params: &v[1..],
                stats: &mut stats,
                mode,
                rng: &mut rng,
            };
            forward(&mut ctx, v[0])
        })
    }
}

fn layers(s: &mut Suite) -> Result<()> {
    let mut init = stream(3, "gradcheck-init");

    let x = s.rand(&[2, 3, 11]);
    s.check(
        "dilated conv",
        vec![x.clone(), s.rand(&[4, 3, 3]), s.rand(&[4])],
        |_, v| conv1d(v[0], v[1], Some(v[2]), 2, false),
    )?;
    s.check(
        "dilated conv (causal)",
        vec![x.clone(), s.rand(&[4, 3, 2]), s.rand(&[4])],
        |_, v| conv1d(v[0], v[1], Some(v[2]), 3, true),
    )?;

    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 3);
    let mask = TimeMask::from_lengths(&[11, 7], 11);
    s.layer_check("batchnorm (train mode)", x.clone(), &store, Mode::Train, {
        let mask = mask.clone();
        move |ctx, x| bn.forward(ctx, x, Some(&mask))
    })?;

    let single = TemporalBlockSpec {
        in_channels: 3,
        out_channels: 4,
        kernel_sizes: vec![3],
        dilation: 2,
        dropout: 0.2,
        causal: false,
    };
    let mut store = ParamStore::new();
    let block = TemporalBlock::new(&mut store, "block", single, &mut init)?;
    s.layer_check("temporal block", x.clone(), &store, Mode::Train, {
        let mask = mask.clone();
        move |ctx, x| block.forward(ctx, x, Some(&mask))
    })?;

    let multi = TemporalBlockSpec {
        in_channels: 3,
        out_channels: 6,
        kernel_sizes: vec![3, 5, 7],
        dilation: 1,
        dropout: 0.2,
        causal: false,
    };
    let mut store = ParamStore::new();
    let block = TemporalBlock::new(&mut store, "block", multi, &mut init)?;
    s.layer_check("multi-scale block", x.clone(), &store, Mode::Train, {
        let mask = mask.clone();
        move |ctx, x| block.forward(ctx, x, Some(&mask))
    })?;

    let spec = FrontendSpec {
        stage_widths: vec![3],
        ..FrontendSpec::default()
    };
    let mut store = ParamStore::new();
    let frontend = Frontend::new(&mut store, "frontend", spec, &mut init)?;
    let clip_mask = TimeMask::from_lengths(&[4, 3], 4);
    s.layer_check(
        "frontend stem",
        s.rand(&[2, 1, 4, 10, 10]),
        &store,
        Mode::Train,
        move |ctx, x| frontend.stem_forward(ctx, x, Some(&clip_mask)),
    )?;

    s.check("spatial gap", vec![s.rand(&[2, 3, 4, 3, 3])], |_, v| {
        spatial_gap(v[0])
    })?;
    s.check(
        "dense head",
        vec![x.clone(), s.rand(&[5, 3, 1]), s.rand(&[5])],
        |_, v| conv1d(v[0], v[1], Some(v[2]), 1, false),
    )?;
    s.check("consensus", vec![s.rand(&[2, 5, 11])], move |_, v| {
        masked_time_mean(v[0], Some(&mask))
    })?;
    s.check("cross-entropy", vec![s.rand(&[3, 5])], |_, v| {
        cross_entropy(v[0], &[4, 0, 2])
    })?;
    Ok(())
}

fn model(s: &mut Suite, seed: u64) -> Result<()> {
    let spec = ModelSpec {
        frontend: FrontendSpec {
            stage_widths: vec![3, 4],
            ..FrontendSpec::default()
        },
        tcn: MultiScaleTCNSpec {
            num_blocks: 2,
            channels: 6,
            num_classes: 3,
            ..MultiScaleTCNSpec::default()
        },
    };
    let m = LipReader::<f64>::new(spec, seed)?;
    let mask = TimeMask::from_lengths(&[5, 4], 5);
    let labels = [2, 0];
    let net = m.net.clone();
    s.layer_check(
        "model (frontend + tcn + loss)",
        s.rand(&[2, 1, 5, 12, 12]),
        &m.store,
        Mode::Train,
        move |ctx, x| {
            let logits = net.logits(ctx, x, Some(&mask))?;
            cross_entropy(logits, &labels)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_scopes_pass() {
        for scope in [Scope::Ops, Scope::Layers, Scope::Model] {
            for row in run(scope, 0).unwrap() {
                eprintln!("{row:?}");
                assert!(row.passed(), "{row:?}");
            }
        }
    }
}
