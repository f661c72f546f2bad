//! Normalization, regularization, masking and loss primitives.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Validity of each (sequence, step) pair in a padded batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeMask {
    batch: usize,
    steps: usize,
    valid: Vec<bool>,
}

impl TimeMask {
    pub fn new(batch: usize, steps: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != batch * steps {
            return Err(Error::invalid(
                "mask",
                format!("{} flags for a {batch}x{steps} mask", valid.len()),
            ));
        }
        Ok(TimeMask {
            batch,
            steps,
            valid,
        })
    }

    /// Mask where sequence `b` is valid for its first `lengths[b]` steps.
    pub fn from_lengths(lengths: &[usize], steps: usize) -> Self {
        let valid = lengths
            .iter()
            .flat_map(|&len| (0..steps).map(move |t| t < len))
            .collect();
        TimeMask {
            batch: lengths.len(),
            steps,
            valid,
        }
    }

    pub fn full(batch: usize, steps: usize) -> Self {
        TimeMask {
            batch,
            steps,
            valid: vec![true; batch * steps],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_valid(&self, b: usize, t: usize) -> bool {
        self.valid[b * self.steps + t]
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_full(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn lengths(&self) -> Vec<usize> {
        (0..self.batch)
            .map(|b| (0..self.steps).filter(|&t| self.is_valid(b, t)).count())
            .collect()
    }

    fn check(&self, shape: &[usize], op: &'static str) -> Result<()> {
        if shape.len() < 3 || shape[0] != self.batch || shape[2] != self.steps {
            return Err(Error::ShapeMismatch {
                op,
                lhs: shape.to_vec(),
                rhs: vec![self.batch, self.steps],
            });
        }
        Ok(())
    }
}

/// Per-channel statistics of one training-mode batchnorm call.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, used for the running estimate.
    pub var: Vec<T>,
}

/// Splits a `N x C x ...` shape into (N, C, T, inner) where T is axis 2.
fn layout(shape: &[usize]) -> (usize, usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let t = shape.get(2).copied().unwrap_or(1);
    let inner = shape.iter().skip(3).product();
    (n, c, t, inner)
}

/// Training-mode batch normalization over channel axis 1 with statistics
/// pooled over every other axis. Masked positions take no part in the
/// statistics and produce zero output.
pub fn batch_norm_train<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    mask: Option<&TimeMask>,
    eps: f64,
) -> Result<(Var<'t, T>, BatchStats<T>)> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::invalid(
            "batchnorm",
            format!("needs rank >= 2, got {shape:?}"),
        ));
    }
    let (n, c, t, inner) = layout(&shape);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "batchnorm",
            lhs: shape,
            rhs: gamma.shape(),
        });
    }
    if let Some(m) = mask {
        m.check(&shape, "batchnorm mask")?;
    }
    let valid: Vec<bool> = match mask {
        Some(m) => m.flags().to_vec(),
        None => vec![true; n * t],
    };
    let count = valid.iter().filter(|&&v| v).count() * inner;
    if count < 2 {
        return Err(Error::invalid(
            "batchnorm",
            "training statistics need at least two values per channel",
        ));
    }
    let eps = T::of(eps);
    let cnt = T::of(count as f64);

    let xv = x.value();
    let xd = xv.data();
    let idx = move |b: usize, ch: usize, s: usize| ((b * c + ch) * t + s) * inner;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for b in 0..n {
            for s in 0..t {
                if valid[b * t + s] {
                    let o = idx(b, ch, s);
                    acc += xd[o..o + inner].iter().copied().sum();
                }
            }
        }
        let m = acc / cnt;
        let mut sq = T::zero();
        for b in 0..n {
            for s in 0..t {
                if valid[b * t + s] {
                    let o = idx(b, ch, s);
                    sq += xd[o..o + inner].iter().map(|&v| (v - m) * (v - m)).sum();
                }
            }
        }
        mean[ch] = m;
        var[ch] = sq / cnt;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(shape.clone());
    let mut y = Tensor::zeros(shape.clone());
    {
        let (gv, bv) = (gamma.value(), beta.value());
        for b in 0..n {
            for ch in 0..c {
                for s in 0..t {
                    if !valid[b * t + s] {
                        continue;
                    }
                    let o = idx(b, ch, s);
                    for k in o..o + inner {
                        let h = (xd[k] - mean[ch]) * inv_std[ch];
                        xhat.data_mut()[k] = h;
                        y.data_mut()[k] = h * gv.data()[ch] + bv.data()[ch];
                    }
                }
            }
        }
    }
    drop(xv);
    let unbiased = T::of(count as f64 / (count as f64 - 1.0));
    let stats = BatchStats {
        mean: mean.clone(),
        var: var.iter().map(|&v| v * unbiased).collect(),
    };

    let out = x.tape().record(
        y,
        &[x, gamma, beta],
        Box::new(move |args| {
            let g = args.grad.data();
            let gamma = args.inputs[1].data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gh = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    for s in 0..t {
                        if !valid[b * t + s] {
                            continue;
                        }
                        let o = idx(b, ch, s);
                        for k in o..o + inner {
                            sum_g[ch] += g[k];
                            sum_gh[ch] += g[k] * xhat.data()[k];
                        }
                    }
                }
            }
            let gx = args.needs[0].then(|| {
                let mut gx = Tensor::zeros(xhat.shape().to_vec());
                for b in 0..n {
                    for ch in 0..c {
                        let scale = gamma[ch] * inv_std[ch];
                        let mg = sum_g[ch] / cnt;
                        let mgh = sum_gh[ch] / cnt;
                        for s in 0..t {
                            if !valid[b * t + s] {
                                continue;
                            }
                            let o = idx(b, ch, s);
                            for k in o..o + inner {
                                gx.data_mut()[k] = scale * (g[k] - mg - xhat.data()[k] * mgh);
                            }
                        }
                    }
                }
                gx
            });
            let ggamma = args.needs[1].then(|| Tensor::new(vec![c], sum_gh.clone()).expect("c"));
            let gbeta = args.needs[2].then(|| Tensor::new(vec![c], sum_g.clone()).expect("c"));
            vec![gx, ggamma, gbeta]
        }),
    );
    Ok((out, stats))
}

/// Inference-mode batch normalization with fixed statistics. Every
/// position is transformed independently.
pub fn batch_norm_eval<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::invalid(
            "batchnorm",
            format!("needs rank >= 2, got {shape:?}"),
        ));
    }
    let (n, c, t, inner) = layout(&shape);
    if gamma.shape() != [c]
        || beta.shape() != [c]
        || running_mean.len() != c
        || running_var.len() != c
    {
        return Err(Error::ShapeMismatch {
            op: "batchnorm",
            lhs: shape,
            rhs: gamma.shape(),
        });
    }
    let eps = T::of(eps);
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let mean = running_mean.to_vec();
    let plane = t * inner;
    let y = {
        let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
        Tensor::from_fn(shape.clone(), |k| {
            let ch = (k / plane) % c;
            (xv.data()[k] - mean[ch]) * inv_std[ch] * gv.data()[ch] + bv.data()[ch]
        })
    };
    let _ = n;
    Ok(x.tape().record(
        y,
        &[x, gamma, beta],
        Box::new(move |args| {
            let (xv, gv, g) = (args.inputs[0], args.inputs[1], args.grad);
            let gx = args.needs[0].then(|| {
                Tensor::from_fn(xv.shape().to_vec(), |k| {
                    let ch = (k / plane) % c;
                    g.data()[k] * gv.data()[ch] * inv_std[ch]
                })
            });
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for (k, (&gk, &xk)) in g.data().iter().zip(xv.data()).enumerate() {
                let ch = (k / plane) % c;
                gg[ch] += gk * (xk - mean[ch]) * inv_std[ch];
                gb[ch] += gk;
            }
            vec![
                gx,
                args.needs[1].then(|| Tensor::new(vec![c], gg).expect("c")),
                args.needs[2].then(|| Tensor::new(vec![c], gb).expect("c")),
            ]
        }),
    ))
}

/// Inverted dropout: kept values are scaled by `1 / (1 - rate)` so no
/// rescaling is needed at inference.
pub fn dropout<'t, T: Real, R: Rng + ?Sized>(
    x: Var<'t, T>,
    rate: f64,
    rng: &mut R,
) -> Result<Var<'t, T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "dropout",
            format!("rate {rate} outside [0, 1)"),
        ));
    }
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let n = x.value().numel();
    let scale: Vec<T> = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let y = {
        let xv = x.value();
        Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect(),
        )?
    };
    Ok(x.tape().record(
        y,
        &[x],
        Box::new(move |args| {
            let g = args.grad;
            vec![Some(Tensor::from_fn(g.shape().to_vec(), |k| {
                g.data()[k] * scale[k]
            }))]
        }),
    ))
}

/// Replaces every masked (padded) step with exact zeros, so a following
/// convolution sees the same values as zero padding would give.
pub fn mask_steps<'t, T: Real>(x: Var<'t, T>, mask: &TimeMask) -> Result<Var<'t, T>> {
    let shape = x.shape();
    mask.check(&shape, "mask_steps")?;
    if mask.is_full() {
        return Ok(x);
    }
    let (n, c, t, inner) = layout(&shape);
    let keep: Vec<bool> = (0..n * c * t * inner)
        .map(|k| {
            let s = (k / inner) % t;
            let b = k / (c * t * inner);
            mask.is_valid(b, s)
        })
        .collect();
    let y = {
        let xv = x.value();
        Tensor::new(
            shape.clone(),
            xv.data()
                .iter()
                .zip(&keep)
                .map(|(&v, &k)| if k { v } else { T::zero() })
                .collect(),
        )?
    };
    Ok(x.tape().record(
        y,
        &[x],
        Box::new(move |args| {
            let g = args.grad;
            vec![Some(Tensor::from_fn(g.shape().to_vec(), |k| {
                if keep[k] {
                    g.data()[k]
                } else {
                    T::zero()
                }
            }))]
        }),
    ))
}

/// Averaging consensus: `B x K x T` per-step scores to `B x K`, averaging
/// each sequence over its valid steps only.
pub fn masked_time_mean<'t, T: Real>(x: Var<'t, T>, mask: Option<&TimeMask>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let &[b, k, t] = shape.as_slice() else {
        return Err(Error::invalid(
            "consensus",
            format!("expected B x K x T, got {shape:?}"),
        ));
    };
    let full = TimeMask::full(b, t);
    let mask = mask.unwrap_or(&full);
    mask.check(&shape, "consensus mask")?;
    let counts = mask.lengths();
    if let Some(bad) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(
            "consensus",
            format!("sequence {bad} has no valid steps"),
        ));
    }
    let valid = mask.flags().to_vec();
    let mut y = Tensor::zeros(vec![b, k]);
    {
        let xv = x.value();
        for bi in 0..b {
            let cnt = T::of(counts[bi] as f64);
            for ki in 0..k {
                let row = &xv.data()[(bi * k + ki) * t..(bi * k + ki + 1) * t];
                let mut acc = T::zero();
                for (s, &v) in row.iter().enumerate() {
                    if valid[bi * t + s] {
                        acc += v;
                    }
                }
                y.data_mut()[bi * k + ki] = acc / cnt;
            }
        }
    }
    Ok(x.tape().record(
        y,
        &[x],
        Box::new(move |args| {
            let g = args.grad.data();
            let gx = Tensor::from_fn(vec![b, k, t], |idx| {
                let s = idx % t;
                let bi = idx / (k * t);
                let ki = (idx / t) % k;
                if valid[bi * t + s] {
                    g[bi * k + ki] / T::of(counts[bi] as f64)
                } else {
                    T::zero()
                }
            });
            vec![Some(gx)]
        }),
    ))
}

/// Mean cross entropy of `B x K` logits against integer labels, computed
/// with max-subtracted log-sum-exp. Gradient is `(softmax - onehot) / B`.
pub fn cross_entropy<'t, T: Real>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    let &[b, k] = shape.as_slice() else {
        return Err(Error::invalid(
            "cross_entropy",
            format!("expected B x K logits, got {shape:?}"),
        ));
    };
    if labels.len() != b {
        return Err(Error::invalid(
            "cross_entropy",
            format!("{} labels for batch of {b}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(
            "cross_entropy",
            format!("label {bad} out of range for {k} classes"),
        ));
    }
    let mut probs = vec![T::zero(); b * k];
    let mut loss = T::zero();
    {
        let lv = logits.value();
        for bi in 0..b {
            let row = &lv.data()[bi * k..(bi + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[labels[bi]];
            for (p, &v) in probs[bi * k..(bi + 1) * k].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
    }
    let bt = T::of(b as f64);
    let labels = labels.to_vec();
    Ok(logits.tape().record(
        Tensor::scalar(loss / bt),
        &[logits],
        Box::new(move |args| {
            let g = args.grad.item() / bt;
            let mut gl = Tensor::new(vec![b, k], probs.clone()).expect("b x k");
            for (bi, &l) in labels.iter().enumerate() {
                gl.data_mut()[bi * k + l] -= T::one();
            }
            gl.data_mut().iter_mut().for_each(|v| *v *= g);
            vec![Some(gl)]
        }),
    ))
}
