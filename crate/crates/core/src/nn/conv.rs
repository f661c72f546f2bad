//! Convolution and pooling over `N x C x D x H x W` tensors.
//!
//! One im2col + GEMM kernel serves every convolution in the model: 1D
//! temporal convolutions are run with `H = W = 1`, per-frame 2D
//! convolutions with a temporal kernel extent of 1, and the 3D stem
//! directly. Padding is given per side so causal (left-only) temporal
//! padding uses the same path.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub dilation: [usize; 3],
    pub pad_lo: [usize; 3],
    pub pad_hi: [usize; 3],
}

impl ConvGeometry {
    pub fn new(kernel: [usize; 3]) -> Self {
        ConvGeometry {
            kernel,
            stride: [1; 3],
            dilation: [1; 3],
            pad_lo: [0; 3],
            pad_hi: [0; 3],
        }
    }

    pub fn stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn dilation(mut self, dilation: [usize; 3]) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn padding(mut self, lo: [usize; 3], hi: [usize; 3]) -> Self {
        self.pad_lo = lo;
        self.pad_hi = hi;
        self
    }

    /// Symmetric padding on every axis.
    pub fn same_padding(self, pad: [usize; 3]) -> Self {
        self.padding(pad, pad)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3]
            && self.stride == [1; 3]
            && self.pad_lo == [0; 3]
            && self.pad_hi == [0; 3]
    }

    /// Output extents for the given input extents:
    /// `(n + lo + hi - dilation * (k - 1) - 1) / stride + 1`.
    pub fn output_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = self.dilation[a] * (self.kernel[a] - 1) + 1;
            let padded = input[a] + self.pad_lo[a] + self.pad_hi[a];
            if self.kernel[a] == 0 || self.stride[a] == 0 || self.dilation[a] == 0 || padded < span
            {
                return Err(Error::invalid(
                    "conv",
                    format!("axis {a}: padded extent {padded} smaller than kernel span {span}"),
                ));
            }
            out[a] = (padded - span) / self.stride[a] + 1;
        }
        Ok(out)
    }

    fn patch_len(&self) -> usize {
        self.kernel.iter().product()
    }
}

fn dims5(shape: &[usize], what: &'static str) -> Result<[usize; 5]> {
    match shape {
        &[n, c, d, h, w] => Ok([n, c, d, h, w]),
        _ => Err(Error::invalid(
            what,
            format!("expected a rank-5 tensor, got {shape:?}"),
        )),
    }
}

/// Range of output positions `o` along one axis for which
/// `o * stride + offset - lo` lands inside `[0, n)`.
#[inline]
fn valid_range(out: usize, n: usize, stride: usize, offset: usize, lo: usize) -> (usize, usize) {
    // smallest o with o*stride + offset >= lo
    let start = if offset >= lo {
        0
    } else {
        (lo - offset).div_ceil(stride)
    };
    // largest o with o*stride + offset - lo <= n - 1
    let end = if offset > n + lo - 1 {
        0
    } else {
        ((n + lo - 1 - offset) / stride + 1).min(out)
    };
    (start.min(end), end)
}

struct Im2Col {
    channels: usize,
    input: [usize; 3],
    output: [usize; 3],
    geom: ConvGeometry,
}

impl Im2Col {
    fn rows(&self) -> usize {
        self.channels * self.geom.patch_len()
    }

    fn cols(&self) -> usize {
        self.output.iter().product()
    }

    /// Walks every (row, input-offset, column) triple that maps to an
    /// in-bounds input element.
    #[inline]
    fn for_each<F: FnMut(usize, usize, usize)>(&self, mut f: F) {
        let [d, h, w] = self.input;
        let [od, oh, ow] = self.output;
        let g = &self.geom;
        let [kd, kh, kw] = g.kernel;
        let mut row = 0;
        for c in 0..self.channels {
            for i in 0..kd {
                let (d0, d1) = valid_range(od, d, g.stride[0], i * g.dilation[0], g.pad_lo[0]);
                for j in 0..kh {
                    let (h0, h1) = valid_range(oh, h, g.stride[1], j * g.dilation[1], g.pad_lo[1]);
                    for l in 0..kw {
                        let (w0, w1) =
                            valid_range(ow, w, g.stride[2], l * g.dilation[2], g.pad_lo[2]);
                        for zo in d0..d1 {
                            let zi = zo * g.stride[0] + i * g.dilation[0] - g.pad_lo[0];
                            for yo in h0..h1 {
                                let yi = yo * g.stride[1] + j * g.dilation[1] - g.pad_lo[1];
                                let in_base = ((c * d + zi) * h + yi) * w;
                                let col_base = (zo * oh + yo) * ow;
                                for xo in w0..w1 {
                                    let xi = xo * g.stride[2] + l * g.dilation[2] - g.pad_lo[2];
                                    f(row, in_base + xi, col_base + xo);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn fill<T: Real>(&self, x: &[T], col: &mut [T]) {
        let cols = self.cols();
        col.iter_mut().for_each(|v| *v = T::zero());
        self.for_each(|row, src, dst| col[row * cols + dst] = x[src]);
    }

    fn scatter_add<T: Real>(&self, col: &[T], x: &mut [T]) {
        let cols = self.cols();
        self.for_each(|row, dst, src| x[dst] += col[row * cols + src]);
    }
}

/// 3D convolution. `x` is `N x C x D x H x W`, `weight` is
/// `O x C x kd x kh x kw`, `bias` (optional) has `O` entries.
pub fn conv3d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    geom: ConvGeometry,
) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let ws = weight.shape();
    let [n, c, d, h, w] = dims5(&xs, "conv3d")?;
    let [o, wc, kd, kh, kw] = dims5(&ws, "conv3d weight")?;
    if wc != c || [kd, kh, kw] != geom.kernel {
        return Err(Error::ShapeMismatch {
            op: "conv3d",
            lhs: xs,
            rhs: ws,
        });
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::ShapeMismatch {
                op: "conv3d bias",
                lhs: vec![o],
                rhs: b.shape(),
            });
        }
    }
    let out = geom.output_extent([d, h, w])?;
    let plan = Im2Col {
        channels: c,
        input: [d, h, w],
        output: out,
        geom,
    };
    let (rows, cols) = (plan.rows(), plan.cols());
    let in_len = c * d * h * w;
    let pointwise = geom.is_pointwise();

    let mut y = Tensor::zeros(vec![n, o, out[0], out[1], out[2]]);
    {
        let xv = x.value();
        let wv = weight.value();
        let bv = bias.map(|b| b.value());
        let mut col = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); rows * cols]
        };
        for s in 0..n {
            let xs = &xv.data()[s * in_len..(s + 1) * in_len];
            let src: &[T] = if pointwise {
                xs
            } else {
                plan.fill(xs, &mut col);
                &col
            };
            let ys = &mut y.data_mut()[s * o * cols..(s + 1) * o * cols];
            gemm(o, rows, cols, wv.data(), false, src, false, ys, false);
            if let Some(bv) = &bv {
                for (oc, chunk) in ys.chunks_mut(cols).enumerate() {
                    let b = bv.data()[oc];
                    chunk.iter_mut().for_each(|v| *v += b);
                }
            }
        }
    }

    let mut parents = vec![x, weight];
    parents.extend(bias);
    Ok(x.tape().record(
        y,
        &parents,
        Box::new(move |args| {
            let (xv, wv, g) = (args.inputs[0], args.inputs[1], args.grad);
            let mut gx = args.needs[0].then(|| Tensor::zeros(xv.shape().to_vec()));
            let mut gw = args.needs[1].then(|| Tensor::zeros(wv.shape().to_vec()));
            let mut col = if pointwise {
                Vec::new()
            } else {
                vec![T::zero(); rows * cols]
            };
            let mut gcol = if pointwise {
                Vec::new()
            } else {
                vec![T::zero(); rows * cols]
            };
            for s in 0..n {
                let gs = &g.data()[s * o * cols..(s + 1) * o * cols];
                if let Some(gw) = &mut gw {
                    let xs = &xv.data()[s * in_len..(s + 1) * in_len];
                    let src: &[T] = if pointwise {
                        xs
                    } else {
                        plan.fill(xs, &mut col);
                        &col
                    };
                    gemm(o, cols, rows, gs, false, src, true, gw.data_mut(), true);
                }
                if let Some(gx) = &mut gx {
                    let dst = &mut gx.data_mut()[s * in_len..(s + 1) * in_len];
                    if pointwise {
                        gemm(rows, o, cols, wv.data(), true, gs, false, dst, false);
                    } else {
                        gemm(rows, o, cols, wv.data(), true, gs, false, &mut gcol, false);
                        plan.scatter_add(&gcol, dst);
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut gb = Tensor::zeros(vec![o]);
                    for s in 0..n {
                        for oc in 0..o {
                            let start = (s * o + oc) * cols;
                            gb.data_mut()[oc] +=
                                g.data()[start..start + cols].iter().copied().sum();
                        }
                    }
                    gb
                }));
            }
            grads
        }),
    ))
}

/// Max pooling over a rank-5 tensor; padded positions never win.
pub fn max_pool3d<'t, T: Real>(x: Var<'t, T>, geom: ConvGeometry) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let [n, c, d, h, w] = dims5(&xs, "max_pool")?;
    if geom.pad_lo.iter().zip(&geom.kernel).any(|(&p, &k)| p >= k) {
        return Err(Error::invalid(
            "max_pool",
            "padding must be smaller than the kernel",
        ));
    }
    let out = geom.output_extent([d, h, w])?;
    let plan = Im2Col {
        channels: 1,
        input: [d, h, w],
        output: out,
        geom,
    };
    let cols = plan.cols();
    let plane = d * h * w;
    let mut y = vec![T::neg_infinity(); n * c * cols];
    let mut argmax = vec![usize::MAX; n * c * cols];
    {
        let xv = x.value();
        for nc in 0..n * c {
            let src = &xv.data()[nc * plane..(nc + 1) * plane];
            let ys = &mut y[nc * cols..(nc + 1) * cols];
            let am = &mut argmax[nc * cols..(nc + 1) * cols];
            plan.for_each(|_, si, oi| {
                if am[oi] == usize::MAX || src[si] > ys[oi] {
                    ys[oi] = src[si];
                    am[oi] = nc * plane + si;
                }
            });
        }
    }
    let value = Tensor::new(vec![n, c, out[0], out[1], out[2]], y)?;
    Ok(x.tape().record(
        value,
        &[x],
        Box::new(move |args| {
            let mut gx = Tensor::zeros(args.inputs[0].shape().to_vec());
            for (&g, &src) in args.grad.data().iter().zip(&argmax) {
                gx.data_mut()[src] += g;
            }
            vec![Some(gx)]
        }),
    ))
}

/// Length-preserving 1D convolution over `B x C x T` with zero padding.
/// Non-causal mode pads `(k-1)*d/2` on both sides, causal mode pads
/// `(k-1)*d` on the left only.
pub fn conv1d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    dilation: usize,
    causal: bool,
) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let ws = weight.shape();
    let (&[b, c, t], &[o, wc, k]) = (xs.as_slice(), ws.as_slice()) else {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: xs,
            rhs: ws,
        });
    };
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: xs,
            rhs: ws,
        });
    }
    if k == 0 || dilation == 0 {
        return Err(Error::invalid(
            "conv1d",
            "kernel size and dilation must be positive",
        ));
    }
    if !causal && k % 2 == 0 {
        return Err(Error::invalid(
            "conv1d",
            format!("non-causal mode needs an odd kernel, got {k}"),
        ));
    }
    let span = (k - 1) * dilation;
    let (lo, hi) = if causal {
        (span, 0)
    } else {
        (span / 2, span / 2)
    };
    let geom = ConvGeometry::new([k, 1, 1])
        .dilation([dilation, 1, 1])
        .padding([lo, 0, 0], [hi, 0, 0]);
    let x5 = x.reshape(&[b, c, t, 1, 1])?;
    let w5 = weight.reshape(&[o, c, k, 1, 1])?;
    conv3d(x5, w5, bias, geom)?.reshape(&[b, o, t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    /// Direct nested-loop convolution used as a reference.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], g: &ConvGeometry) -> Tensor<f64> {
        let [n, c, d, h, wd] = dims5(x.shape(), "x").unwrap();
        let o = w.shape()[0];
        let out = g.output_extent([d, h, wd]).unwrap();
        let mut y = Tensor::zeros(vec![n, o, out[0], out[1], out[2]]);
        for s in 0..n {
            for oc in 0..o {
                for zo in 0..out[0] {
                    for yo in 0..out[1] {
                        for xo in 0..out[2] {
                            let mut acc = b[oc];
                            for ic in 0..c {
                                for i in 0..g.kernel[0] {
                                    for j in 0..g.kernel[1] {
                                        for l in 0..g.kernel[2] {
                                            let zi = (zo * g.stride[0] + i * g.dilation[0])
                                                as isize
                                                - g.pad_lo[0] as isize;
                                            let yi = (yo * g.stride[1] + j * g.dilation[1])
                                                as isize
                                                - g.pad_lo[1] as isize;
                                            let xi = (xo * g.stride[2] + l * g.dilation[2])
                                                as isize
                                                - g.pad_lo[2] as isize;
                                            if zi < 0
                                                || yi < 0
                                                || xi < 0
                                                || zi >= d as isize
                                                || yi >= h as isize
                                                || xi >= wd as isize
                                            {
                                                continue;
                                            }
                                            acc += x.at(&[
                                                s,
                                                ic,
                                                zi as usize,
                                                yi as usize,
                                                xi as usize,
                                            ]) * w.at(&[oc, ic, i, j, l]);
                                        }
                                    }
                                }
                            }
                            let idx = crate::tensor::flat_index(y.shape(), &[s, oc, zo, yo, xo]);
                            y.data_mut()[idx] = acc;
                        }
                    }
                }
            }
        }
        y
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv3d_matches_naive_loops() {
        let geoms = [
            ConvGeometry::new([3, 3, 3]).same_padding([1, 1, 1]),
            ConvGeometry::new([5, 3, 3])
                .stride([1, 2, 2])
                .padding([2, 1, 1], [2, 1, 1]),
            ConvGeometry::new([3, 1, 1])
                .dilation([2, 1, 1])
                .padding([4, 0, 0], [0, 0, 0]),
            ConvGeometry::new([1, 1, 1]),
            ConvGeometry::new([1, 3, 3])
                .stride([1, 2, 2])
                .same_padding([0, 1, 1]),
        ];
        for (gi, g) in geoms.iter().enumerate() {
            let (n, c, o) = (2, 3, 4);
            let (d, h, w) = (6, 5, 7);
            let x = Tensor::new(vec![n, c, d, h, w], pseudo(n * c * d * h * w, gi as u64)).unwrap();
            let k = g.kernel;
            let wt = Tensor::new(
                vec![o, c, k[0], k[1], k[2]],
                pseudo(o * c * k.iter().product::<usize>(), 99 + gi as u64),
            )
            .unwrap();
            let bias = pseudo(o, 7);
            let expect = naive_conv(&x, &wt, &bias, g);
            let tape = Tape::new();
            let y = conv3d(
                tape.leaf(x),
                tape.leaf(wt),
                Some(tape.leaf(Tensor::new(vec![o], bias).unwrap())),
                *g,
            )
            .unwrap();
            assert_eq!(y.shape(), expect.shape());
            assert!(y.value().max_abs_diff(&expect) < 1e-12, "geometry {gi}");
        }
    }

    #[test]
    fn conv1d_hand_example() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(vec![1, 1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.leaf(Tensor::from_f64(vec![1, 1, 3], &[1.0, 1.0, 1.0]).unwrap());
        let y = conv1d(x, w, None, 1, false).unwrap();
        assert_eq!(y.value().data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn conv1d_identity_kernel() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = pseudo(10, 3);
        let x = tape.leaf(Tensor::new(vec![2, 1, 5], data.clone()).unwrap());
        let w = tape.leaf(Tensor::from_f64(vec![1, 1, 1], &[1.0]).unwrap());
        let b = tape.leaf(Tensor::zeros(vec![1]));
        let y = conv1d(x, w, Some(b), 4, false).unwrap();
        assert_eq!(y.value().data(), data.as_slice());
    }

    #[test]
    fn conv1d_rejects_even_noncausal_and_channel_mismatch() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 5]));
        let w_even = tape.leaf(Tensor::zeros(vec![1, 2, 2]));
        assert!(conv1d(x, w_even, None, 1, false).is_err());
        assert!(conv1d(x, w_even, None, 1, true).is_ok());
        let w_bad = tape.leaf(Tensor::zeros(vec![1, 3, 3]));
        assert!(conv1d(x, w_bad, None, 1, false).is_err());
    }

    #[test]
    fn max_pool_picks_window_max() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(vec![1, 1, 1, 4, 4], |i| i as f64));
        let g = ConvGeometry::new([1, 3, 3])
            .stride([1, 2, 2])
            .same_padding([0, 1, 1]);
        let y = max_pool3d(x, g).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 2, 2]);
        assert_eq!(y.value().data(), &[5.0, 7.0, 13.0, 15.0]);
        let grads = y.sum_all().backward().unwrap();
        let gx = grads.get(x).unwrap();
        assert_eq!(gx.data().iter().sum::<f64>(), 4.0);
        assert_eq!(gx.data()[15], 1.0);
    }

    #[test]
    fn valid_range_bounds() {
        // stride 2, offset 0, lo 1, n 4, out 2 -> o*2 - 1 in [0,4): o in {1}
        assert_eq!(valid_range(2, 4, 2, 0, 1), (1, 2));
        assert_eq!(valid_range(4, 4, 1, 2, 1), (0, 3));
        let (a, b) = valid_range(3, 1, 1, 7, 5);
        assert_eq!(a, b);
    }
}
