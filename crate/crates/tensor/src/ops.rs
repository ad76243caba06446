//! Differentiable ops on [`Tensor`].
//!
//! Shapes are row-major. Binary elementwise ops broadcast numpy-style;
//! `matmul` is 2-D and `bmm` is batched 3-D.

use std::sync::Arc;

use crate::error::{mismatch, Result, TensorError};
use crate::tensor::{numel, Tensor};

/// Value written by [`Tensor::masked_fill`] callers that want a position to
/// vanish under softmax.
pub const MASK_VALUE: f64 = -1e9;

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| {
        let pad = n - s.len();
        if i < pad {
            1
        } else {
            s[i - pad]
        }
    };
    (0..n)
        .map(|i| match (dim(a, i), dim(b, i)) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// For each flat output position, the flat position in `src` it reads.
fn broadcast_index(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let pad = n - src.len();
    let mut strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[i + pad] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let total = numel(out);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut cur = 0usize;
    for _ in 0..total {
        idx.push(cur);
        for d in (0..n).rev() {
            counter[d] += 1;
            cur += strides[d];
            if counter[d] < out[d] {
                break;
            }
            cur -= strides[d] * out[d];
            counter[d] = 0;
        }
    }
    idx
}

type Pointwise = fn(f64, f64) -> f64;
type PointwiseGrad = fn(f64, f64, f64) -> f64;

fn binary(
    name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: Pointwise,
    da: PointwiseGrad,
    db: PointwiseGrad,
) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| mismatch(name, &[a.shape(), b.shape()]))?;
    let n = numel(&out_shape);
    let (ia, ib) = if a.shape() == b.shape() {
        (None, None)
    } else {
        (
            Some(Arc::new(broadcast_index(a.shape(), &out_shape))),
            Some(Arc::new(broadcast_index(b.shape(), &out_shape))),
        )
    };
    let av = a.data_arc();
    let bv = b.data_arc();
    let at = |k: usize, m: &Option<Arc<Vec<usize>>>| m.as_ref().map_or(k, |m| m[k]);
    let data: Vec<f64> = (0..n).map(|k| f(av[at(k, &ia)], bv[at(k, &ib)])).collect();
    let (na, nb) = (a.numel(), b.numel());
    Tensor::from_op(name, data, out_shape, &[a, b], move |g, needs| {
        let idx = |k: usize, m: &Option<Arc<Vec<usize>>>| m.as_ref().map_or(k, |m| m[k]);
        let mut ga = needs[0].then(|| vec![0.0; na]);
        let mut gb = needs[1].then(|| vec![0.0; nb]);
        for (k, &gk) in g.iter().enumerate() {
            let (i, j) = (idx(k, &ia), idx(k, &ib));
            if let Some(ga) = ga.as_mut() {
                ga[i] += da(av[i], bv[j], gk);
            }
            if let Some(gb) = gb.as_mut() {
                gb[j] += db(av[i], bv[j], gk);
            }
        }
        vec![ga, gb]
    })
}

fn unary(
    name: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    // derivative from (input, output)
    df: fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let xv = x.data_arc();
    let data: Vec<f64> = xv.iter().map(|&v| f(v)).collect();
    let yv = Arc::new(data.clone());
    Tensor::from_op(name, data, x.shape().to_vec(), &[x], move |g, _| {
        vec![Some(
            g.iter()
                .zip(xv.iter().zip(yv.iter()))
                .map(|(g, (&x, &y))| g * df(x, y))
                .collect(),
        )]
    })
}

/// `c = a · b` for row-major `a` (m×k, strides given) and `b` (k×n).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the assertion above bounds every index the strides reach; the
    // strides passed by callers describe dense m×k, k×n and m×n layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary("add", self, other, |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary("sub", self, other, |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(
            "mul",
            self,
            other,
            |a, b| a * b,
            |_, b, g| g * b,
            |a, _, g| g * a,
        )
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(
            "div",
            self,
            other,
            |a, b| a / b,
            |_, b, g| g / b,
            |a, b, g| -g * a / (b * b),
        )
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op(
            "scale",
            data,
            self.shape().to_vec(),
            &[self],
            move |g, _| vec![Some(g.iter().map(|g| g * s).collect())],
        )
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v + s).collect();
        Tensor::from_op(
            "add_scalar",
            data,
            self.shape().to_vec(),
            &[self],
            |g, _| vec![Some(g.to_vec())],
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        unary(
            "relu",
            self,
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn tanh(&self) -> Result<Tensor> {
        unary("tanh", self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        unary(
            "sigmoid",
            self,
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    pub fn exp(&self) -> Result<Tensor> {
        unary("exp", self, f64::exp, |_, y| y)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        unary("sqrt", self, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Result<Tensor> {
        unary("square", self, |x| x * x, |x, _| 2.0 * x)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(mismatch("matmul", &[a, b]));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.data(),
            (k as isize, 1),
            other.data(),
            (n as isize, 1),
            &mut out,
        );
        let (av, bv) = (self.data_arc(), other.data_arc());
        Tensor::from_op(
            "matmul",
            out,
            vec![m, n],
            &[self, other],
            move |g, needs| {
                let ga = needs[0].then(|| {
                    // dA = dC · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, (n as isize, 1), &bv, (1, n as isize), &mut ga);
                    ga
                });
                let gb = needs[1].then(|| {
                    // dB = Aᵀ · dC
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, &av, (1, k as isize), g, (n as isize, 1), &mut gb);
                    gb
                });
                vec![ga, gb]
            },
        )
    }

    /// Batched matrix product `[b,m,k] × [b,k,n] → [b,m,n]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 3 || b.len() != 3 || a[0] != b[0] || a[2] != b[1] {
            return Err(mismatch("bmm", &[a, b]));
        }
        let (bs, m, k, n) = (a[0], a[1], a[2], b[2]);
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &self.data()[i * m * k..],
                (k as isize, 1),
                &other.data()[i * k * n..],
                (n as isize, 1),
                &mut out[i * m * n..],
            );
        }
        let (av, bv) = (self.data_arc(), other.data_arc());
        Tensor::from_op(
            "bmm",
            out,
            vec![bs, m, n],
            &[self, other],
            move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..],
                            (n as isize, 1),
                            &bv[i * k * n..],
                            (1, n as isize),
                            &mut ga[i * m * k..],
                        );
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        gemm(
                            k,
                            m,
                            n,
                            &av[i * m * k..],
                            (1, k as isize),
                            &g[i * m * n..],
                            (n as isize, 1),
                            &mut gb[i * k * n..],
                        );
                    }
                    gb
                });
                vec![ga, gb]
            },
        )
    }

    /// Swaps the last two axes of a 2-D or 3-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        let (bs, r, c) = match s.len() {
            2 => (1, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => return Err(mismatch("transpose", &[s])),
        };
        let permute = move |src: &[f64], rows: usize, cols: usize| {
            let mut out = vec![0.0; src.len()];
            for b in 0..bs {
                let off = b * rows * cols;
                for i in 0..rows {
                    for j in 0..cols {
                        out[off + j * rows + i] = src[off + i * cols + j];
                    }
                }
            }
            out
        };
        let mut shape = s.to_vec();
        let n = shape.len();
        shape.swap(n - 1, n - 2);
        let data = permute(self.data(), r, c);
        Tensor::from_op("transpose", data, shape, &[self], move |g, _| {
            vec![Some(permute(g, c, r))]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(mismatch("reshape", &[self.shape(), shape]));
        }
        Ok(Tensor::view_op("reshape", self, shape.to_vec()))
    }

    /// Joins tensors along `axis`; all other axes must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(mismatch("concat", &[first.shape()]));
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape()).collect();
                return Err(mismatch("concat", &shapes));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total_width: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total_width);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Tensor::from_op("concat", data, shape, parts, move |g, needs| {
            let mut offset = 0;
            let mut out = Vec::with_capacity(widths.len());
            for (&w, &need) in widths.iter().zip(needs) {
                if need {
                    let mut gp = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        let start = o * total_width + offset;
                        gp.extend_from_slice(&g[start..start + w]);
                    }
                    out.push(Some(gp));
                } else {
                    out.push(None);
                }
                offset += w;
            }
            out
        })
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                detail: format!("axis {axis} range {start}..{end} of shape {s:?}"),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let (full, w, off) = (s[axis] * inner, (end - start) * inner, start * inner);
        let mut data = Vec::with_capacity(outer * w);
        for o in 0..outer {
            data.extend_from_slice(&self.data()[o * full + off..o * full + off + w]);
        }
        let mut shape = s.to_vec();
        shape[axis] = end - start;
        let n = self.numel();
        Tensor::from_op("slice", data, shape, &[self], move |g, _| {
            let mut gx = vec![0.0; n];
            for o in 0..outer {
                gx[o * full + off..o * full + off + w].copy_from_slice(&g[o * w..(o + 1) * w]);
            }
            vec![Some(gx)]
        })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Result<Tensor> {
        let n = self.numel();
        let total = self.data().iter().sum();
        Tensor::from_op("sum", vec![total], vec![1], &[self], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel().max(1) as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(mismatch("sum_axis", &[s]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len = s[axis];
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &self.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                data[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, v)| *d += v);
            }
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::from_op("sum_axis", data, shape, &[self], move |g, _| {
            let mut gx = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                for _ in 0..len {
                    gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| mismatch("mean_axis", &[self.shape()]))?;
        self.sum_axis(axis)?.scale(1.0 / len.max(1) as f64)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let s = self.shape();
        let width = *s.last().ok_or_else(|| mismatch("softmax", &[s]))?;
        let mut data = self.to_vec();
        for row in data.chunks_mut(width.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let y = Arc::new(data.clone());
        Tensor::from_op("softmax", data, s.to_vec(), &[self], move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), out) in g
                .chunks(width.max(1))
                .zip(y.chunks(width.max(1)))
                .zip(gx.chunks_mut(width.max(1)))
            {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                    *o = yi * (gi - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Replaces positions where `mask` is true by `value`; those positions
    /// pass no gradient.
    pub fn masked_fill(&self, mask: &[bool], value: f64) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(mismatch("masked_fill", &[self.shape(), &[mask.len()]]));
        }
        let data = self
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let mask: Arc<Vec<bool>> = Arc::new(mask.to_vec());
        Tensor::from_op(
            "masked_fill",
            data,
            self.shape().to_vec(),
            &[self],
            move |g, _| {
                vec![Some(
                    g.iter()
                        .zip(mask.iter())
                        .map(|(&g, &m)| if m { 0.0 } else { g })
                        .collect(),
                )]
            },
        )
    }

    /// Normalizes each contiguous block of `group` elements to zero mean and
    /// unit (biased) variance.
    pub fn standardize(&self, group: usize, eps: f64) -> Result<Tensor> {
        if group == 0 || !self.numel().is_multiple_of(group) {
            return Err(TensorError::InvalidArgument {
                op: "standardize",
                detail: format!("group {group} does not divide {:?}", self.shape()),
            });
        }
        let mut y = vec![0.0; self.numel()];
        let mut inv_std = Vec::with_capacity(self.numel() / group);
        for (xs, ys) in self.data().chunks(group).zip(y.chunks_mut(group)) {
            let mean = xs.iter().sum::<f64>() / group as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / group as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, x) in ys.iter_mut().zip(xs) {
                *o = (x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let ys = Arc::new(y.clone());
        Tensor::from_op(
            "standardize",
            y,
            self.shape().to_vec(),
            &[self],
            move |g, _| {
                let mut gx = vec![0.0; g.len()];
                let n = group as f64;
                for (((gr, yr), out), inv) in g
                    .chunks(group)
                    .zip(ys.chunks(group))
                    .zip(gx.chunks_mut(group))
                    .zip(inv_std.iter())
                {
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = inv * (gi - mean_g - yi * mean_gy);
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Row gather on a 2-D tensor: output row `i` is input row `index[i]`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || index.iter().any(|&i| i >= s[0]) {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                detail: format!("index out of range for shape {s:?}"),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            data.extend_from_slice(&self.data()[i * cols..(i + 1) * cols]);
        }
        let index: Arc<Vec<usize>> = Arc::new(index.to_vec());
        let shape = vec![index.len(), cols];
        Tensor::from_op("gather_rows", data, shape, &[self], move |g, _| {
            let mut gx = vec![0.0; rows * cols];
            for (k, &i) in index.iter().enumerate() {
                gx[i * cols..(i + 1) * cols]
                    .iter_mut()
                    .zip(&g[k * cols..(k + 1) * cols])
                    .for_each(|(a, b)| *a += b);
            }
            vec![Some(gx)]
        })
    }

    /// Message aggregation on a 2-D tensor of node rows: for each directed
    /// pair `(dst, src)`, row `src` is added into output row `dst`.
    pub fn aggregate_rows(&self, pairs: &Arc<Vec<(usize, usize)>>) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || pairs.iter().any(|&(d, r)| d >= s[0] || r >= s[0]) {
            return Err(TensorError::InvalidArgument {
                op: "aggregate_rows",
                detail: format!("pair out of range for shape {s:?}"),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let mut data = vec![0.0; rows * cols];
        for &(dst, src) in pairs.iter() {
            for c in 0..cols {
                data[dst * cols + c] += self.data()[src * cols + c];
            }
        }
        let pairs = pairs.clone();
        Tensor::from_op("aggregate_rows", data, s.to_vec(), &[self], move |g, _| {
            let mut gx = vec![0.0; rows * cols];
            for &(dst, src) in pairs.iter() {
                for c in 0..cols {
                    gx[src * cols + c] += g[dst * cols + c];
                }
            }
            vec![Some(gx)]
        })
    }

    /// Mean squared error between same-shaped tensors.
    pub fn mse_loss(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(mismatch("mse_loss", &[self.shape(), target.shape()]));
        }
        self.sub(target)?.square()?.mean()
    }
}
