//! Differentiable primitives: elementwise arithmetic with broadcasting,
//! matrix product, axis reductions and shape manipulation.
//!
//! Broadcasting follows numpy: shapes are right-aligned, a missing leading
//! axis counts as extent 1, and an extent-1 axis stretches to match the
//! other operand. Backward sums the incoming gradient over every stretched
//! axis.

use crate::autodiff::tape::Var;
use crate::error::{Error, Result};
use crate::tensor::{broadcast_shape, gemm, strides_of, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// For every flat index of `out_shape`, the flat index into a tensor of
/// shape `in_shape` that broadcasts onto it.
fn broadcast_index(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let in_strides = strides_of(in_shape);
    let mut strides = vec![0; rank];
    for (i, (&n, &s)) in in_shape.iter().zip(&in_strides).enumerate() {
        let axis = rank - in_shape.len() + i;
        strides[axis] = if n == 1 { 0 } else { s };
    }
    map_offsets(out_shape, &strides)
}

/// Walks `shape` in row-major order and returns `sum(index[i] * strides[i])`
/// for every position.
fn map_offsets(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut index = vec![0usize; shape.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(offset);
        for axis in (0..shape.len()).rev() {
            index[axis] += 1;
            offset += strides[axis];
            if index[axis] < shape[axis] {
                break;
            }
            offset -= strides[axis] * shape[axis];
            index[axis] = 0;
        }
    }
    out
}

fn reduce_to<T: Real>(grad: &Tensor<T>, index: &[usize], shape: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(shape.to_vec());
    let data = out.data_mut();
    for (&g, &i) in grad.data().iter().zip(index) {
        data[i] += g;
    }
    out
}

impl<'t, T: Real> Var<'t, T> {
    pub fn binary(self, other: Var<'t, T>, op: BinaryOp) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out_shape =
            broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
                op: "elementwise",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })?;
        let same = a.shape() == b.shape();
        let (ia, ib) = if same {
            (Vec::new(), Vec::new())
        } else {
            (
                broadcast_index(a.shape(), &out_shape),
                broadcast_index(b.shape(), &out_shape),
            )
        };
        let f = |x: T, y: T| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        };
        let data: Vec<T> = if same {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            ia.iter()
                .zip(&ib)
                .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
                .collect()
        };
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        drop((a, b));
        let value = Tensor::new(out_shape, data)?;
        Ok(self.tape().record(
            value,
            &[self, other],
            Box::new(move |args| {
                let g = args.grad;
                let (x, y) = (args.inputs[0], args.inputs[1]);
                let local = |which: usize| -> Tensor<T> {
                    // Gradient before un-broadcasting, in output layout.
                    let at = |k: usize| -> (T, T) {
                        if same {
                            (x.data()[k], y.data()[k])
                        } else {
                            (x.data()[ia[k]], y.data()[ib[k]])
                        }
                    };
                    Tensor::from_fn(g.shape().to_vec(), |k| {
                        let gk = g.data()[k];
                        match (op, which) {
                            (BinaryOp::Add, _) => gk,
                            (BinaryOp::Sub, 0) => gk,
                            (BinaryOp::Sub, _) => -gk,
                            (BinaryOp::Mul, 0) => gk * at(k).1,
                            (BinaryOp::Mul, _) => gk * at(k).0,
                        }
                    })
                };
                let ga = args.needs[0].then(|| {
                    let l = local(0);
                    if same {
                        l
                    } else {
                        reduce_to(&l, &ia, &sa)
                    }
                });
                let gb = args.needs[1].then(|| {
                    let l = local(1);
                    if same {
                        l
                    } else {
                        reduce_to(&l, &ib, &sb)
                    }
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryOp::Add)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryOp::Sub)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryOp::Mul)
    }

    /// Elementwise `a * x + b` with scalar constants.
    pub fn affine(self, a: f64, b: f64) -> Var<'t, T> {
        let (sa, sb) = (T::of(a), T::of(b));
        let value = self.value().map(|v| sa * v + sb);
        self.tape().record(
            value,
            &[self],
            Box::new(move |args| vec![Some(args.grad.map(|g| g * sa))]),
        )
    }

    pub fn scale(self, s: f64) -> Var<'t, T> {
        self.affine(s, 0.0)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t, T> {
        self.affine(1.0, s)
    }

    pub fn neg(self) -> Var<'t, T> {
        self.affine(-1.0, 0.0)
    }

    /// ReLU with subgradient 0 at the origin.
    pub fn relu(self) -> Var<'t, T> {
        let value = self
            .value()
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.tape().record(
            value,
            &[self],
            Box::new(|args| {
                let x = args.inputs[0];
                let g = Tensor::from_fn(x.shape().to_vec(), |i| {
                    if x.data()[i] > T::zero() {
                        args.grad.data()[i]
                    } else {
                        T::zero()
                    }
                });
                vec![Some(g)]
            }),
        )
    }

    /// Product of two rank-2 tensors.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        gemm(
            m,
            k,
            n,
            a.data(),
            false,
            b.data(),
            false,
            out.data_mut(),
            false,
        );
        drop((a, b));
        Ok(self.tape().record(
            out,
            &[self, other],
            Box::new(move |args| {
                let (a, b, g) = (args.inputs[0], args.inputs[1], args.grad);
                let ga = args.needs[0].then(|| {
                    let mut ga = Tensor::zeros(vec![m, k]);
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        false,
                        b.data(),
                        true,
                        ga.data_mut(),
                        false,
                    );
                    ga
                });
                let gb = args.needs[1].then(|| {
                    let mut gb = Tensor::zeros(vec![k, n]);
                    gemm(
                        k,
                        m,
                        n,
                        a.data(),
                        true,
                        g.data(),
                        false,
                        gb.data_mut(),
                        false,
                    );
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Reduces over `axes`. With `keep_dims` the reduced axes remain with
    /// extent 1, otherwise they are dropped.
    pub fn reduce(self, op: ReduceOp, axes: &[usize], keep_dims: bool) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let mut reduced = vec![false; shape.len()];
        for &axis in axes {
            if axis >= shape.len() {
                return Err(Error::InvalidAxis {
                    op: "reduce",
                    axis,
                    rank: shape.len(),
                });
            }
            reduced[axis] = true;
        }
        let kept: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .map(|(&n, &r)| if r { 1 } else { n })
            .collect();
        let count: usize = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&n, _)| n)
            .product();
        if count == 0 {
            return Err(Error::invalid("reduce", "reduction over an empty axis"));
        }
        let kept_strides = strides_of(&kept);
        let strides: Vec<usize> = kept_strides
            .iter()
            .zip(&reduced)
            .map(|(&s, &r)| if r { 0 } else { s })
            .collect();
        let index = map_offsets(&shape, &strides);
        let out_n: usize = kept.iter().product();
        let mut out = vec![T::zero(); out_n];
        let mut argmax = Vec::new();
        match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                for (&v, &i) in x.data().iter().zip(&index) {
                    out[i] += v;
                }
                if op == ReduceOp::Mean {
                    let c = T::of(count as f64);
                    out.iter_mut().for_each(|v| *v /= c);
                }
            }
            ReduceOp::Max => {
                argmax = vec![usize::MAX; out_n];
                for (flat, (&v, &i)) in x.data().iter().zip(&index).enumerate() {
                    if argmax[i] == usize::MAX || v > out[i] {
                        out[i] = v;
                        argmax[i] = flat;
                    }
                }
            }
        }
        drop(x);
        let out_shape: Vec<usize> = if keep_dims {
            kept
        } else {
            shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&n, _)| n)
                .collect()
        };
        let value = Tensor::new(out_shape, out)?;
        Ok(self.tape().record(
            value,
            &[self],
            Box::new(move |args| {
                let g = args.grad.data();
                let gx = match op {
                    ReduceOp::Sum => Tensor::from_fn(shape.clone(), |k| g[index[k]]),
                    ReduceOp::Mean => {
                        let c = T::of(count as f64);
                        Tensor::from_fn(shape.clone(), |k| g[index[k]] / c)
                    }
                    ReduceOp::Max => {
                        let mut gx = Tensor::zeros(shape.clone());
                        for (o, &flat) in argmax.iter().enumerate() {
                            gx.data_mut()[flat] += g[o];
                        }
                        gx
                    }
                };
                vec![Some(gx)]
            }),
        ))
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        self.reduce(ReduceOp::Sum, &axes, false)
            .expect("full reduction over valid axes")
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        self.reduce(ReduceOp::Mean, &axes, false)
            .expect("full reduction over valid axes")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let old = self.shape();
        let value = self.to_tensor().reshape(shape.to_vec())?;
        Ok(self.tape().record(
            value,
            &[self],
            Box::new(move |args| {
                vec![Some(
                    args.grad
                        .clone()
                        .reshape(old.clone())
                        .expect("reshape back to source shape"),
                )]
            }),
        ))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::invalid(
                "permute",
                format!("{perm:?} is not a permutation of {} axes", shape.len()),
            ));
        }
        let in_strides = strides_of(&shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let index = map_offsets(&out_shape, &strides);
        let data: Vec<T> = index.iter().map(|&i| x.data()[i]).collect();
        drop(x);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.tape().record(
            value,
            &[self],
            Box::new(move |args| {
                let mut gx = Tensor::zeros(shape.clone());
                for (&g, &i) in args.grad.data().iter().zip(&index) {
                    gx.data_mut()[i] = g;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] || len == 0 {
            return Err(Error::invalid(
                "narrow",
                format!(
                    "range {start}..{} exceeds extent {}",
                    start + len,
                    shape[axis]
                ),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        drop(x);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.tape().record(
            value,
            &[self],
            Box::new(move |args| {
                let mut gx = Tensor::zeros(shape.clone());
                let g = args.grad.data();
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx.data_mut()[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, T: Real>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    let base = first.shape();
    if axis >= base.len() {
        return Err(Error::InvalidAxis {
            op: "concat",
            axis,
            rank: base.len(),
        });
    }
    let mut sizes = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: base.clone(),
                rhs: s,
            });
        }
        sizes.push(s[axis]);
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let total: usize = sizes.iter().sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        for o in 0..outer {
            for (v, &n) in values.iter().zip(&sizes) {
                data.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
    }
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let value = Tensor::new(out_shape, data)?;
    Ok(first.tape().record(
        value,
        parts,
        Box::new(move |args| {
            let g = args.grad.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(sizes.len());
            for (j, &n) in sizes.iter().enumerate() {
                if !args.needs[j] {
                    grads.push(None);
                    offset += n;
                    continue;
                }
                let mut gj = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    gj.extend_from_slice(&g[start..start + n * inner]);
                }
                let mut shape = args.inputs[j].shape().to_vec();
                shape[axis] = n;
                grads.push(Some(Tensor::new(shape, gj).expect("concat slice")));
                offset += n;
            }
            grads
        }),
    ))
}
