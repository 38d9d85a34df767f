//! Forward and adjoint kernels for the parameter-free layers.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;


use crate::filters::Subband;
use crate::nn::Tensor;
use crate::scalar::Real;
use crate::transform::{analyze_block, read_octant, synthesize_block, write_octant, LinePair};

pub(crate) const BN_EPS: f64 = 1e-5;

/// 2x2x2 max pooling. `argmax[i]` is the flat plane index of the winning
/// input voxel for output element `i`; ties keep the first in z-y-x order.
pub(crate) fn maxpool_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [b, c, d, m, n] = x.shape();
    let (hd, hm, hn) = (d / 2, m / 2, n / 2);
    let mut out = Tensor::zeros([b, c, hd, hm, hn]);
    let mut argmax = Vec::with_capacity(out.len());
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane(bi, ci);
            let dst = out.plane_mut(bi, ci);
            let mut o = 0;
            for z in 0..hd {
                for y in 0..hm {
                    for xx in 0..hn {
                        let mut best = T::neg_infinity();
                        let mut best_i = 0usize;
                        for a in 0..2 {
                            for bb in 0..2 {
                                for cc in 0..2 {
                                    let i = ((2 * z + a) * m + 2 * y + bb) * n + 2 * xx + cc;
                                    if src[i] > best {
                                        best = src[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        dst[o] = best;
                        argmax.push(best_i as u32);
                        o += 1;
                    }
                }
            }
        }
    }
    (out, argmax)
}

/// Scatters `x` to the recorded positions of a tensor with the pooling
/// input's shape; everything else is zero.
pub(crate) fn maxunpool_forward<T: Real>(x: &Tensor<T>, argmax: &[u32], out_shape: [usize; 5]) -> Tensor<T> {
    let mut out = Tensor::zeros(out_shape);
    let p = x.plane_len();
    for bi in 0..x.batch() {
        for ci in 0..x.channels() {
            let src = x.plane(bi, ci);
            let base = (bi * x.channels() + ci) * p;
            let dst = out.plane_mut(bi, ci);
            for (v, &i) in src.iter().zip(&argmax[base..base + p]) {
                dst[i as usize] = *v;
            }
        }
    }
    out
}

/// Gathers the recorded positions of `g` (the adjoint of both the pooling
/// gradient scatter and the unpooling forward).
pub(crate) fn gather_argmax<T: Real>(g: &Tensor<T>, argmax: &[u32], small_shape: [usize; 5]) -> Tensor<T> {
    let mut out = Tensor::zeros(small_shape);
    let p = out.plane_len();
    for bi in 0..small_shape[0] {
        for ci in 0..small_shape[1] {
            let src = g.plane(bi, ci);
            let base = (bi * small_shape[1] + ci) * p;
            let dst = out.plane_mut(bi, ci);
            for (o, &i) in dst.iter_mut().zip(&argmax[base..base + p]) {
                *o = src[i as usize];
            }
        }
    }
    out
}

/// Corner-aligned linear interpolation weights for `n -> 2n`:
/// output `i` samples input position `i (n - 1) / (2n - 1)`.
fn interp_weights<T: Real>(n: usize) -> Vec<(usize, usize, T)> {
    let out = 2 * n;
    (0..out)
        .map(|i| {
            if n == 1 {
                return (0, 0, T::zero());
            }
            let pos = (i * (n - 1)) as f64 / (out - 1) as f64;
            let i0 = (pos.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, T::lit(pos - i0 as f64))
        })
        .collect()
}

/// Runs `f(src_line, dst_line)` over all lines along `axis` of a plane,
/// changing that axis from `src_dims[axis]` to `dst_len`.
fn resample_plane<T: Real>(
    src: &[T],
    src_dims: [usize; 3],
    axis: usize,
    dst_len: usize,
    mut f: impl FnMut(&[T], &mut [T]),
) -> (Vec<T>, [usize; 3]) {
    let mut dst_dims = src_dims;
    dst_dims[axis] = dst_len;
    let s_str = [src_dims[1] * src_dims[2], src_dims[2], 1];
    let d_str = [dst_dims[1] * dst_dims[2], dst_dims[2], 1];
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut dst = vec![T::zero(); dst_dims.iter().product()];
    let mut line_in = vec![T::zero(); src_dims[axis]];
    let mut line_out = vec![T::zero(); dst_len];
    for i in 0..src_dims[a] {
        for j in 0..src_dims[b] {
            let sb = i * s_str[a] + j * s_str[b];
            let db = i * d_str[a] + j * d_str[b];
            for (t, v) in line_in.iter_mut().enumerate() {
                *v = src[sb + t * s_str[axis]];
            }
            f(&line_in, &mut line_out);
            for (t, v) in line_out.iter().enumerate() {
                dst[db + t * d_str[axis]] = *v;
            }
        }
    }
    (dst, dst_dims)
}

pub(crate) fn interp_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, d, m, n] = x.shape();
    let mut out = Tensor::zeros([b, c, 2 * d, 2 * m, 2 * n]);
    let weights = [interp_weights::<T>(d), interp_weights::<T>(m), interp_weights::<T>(n)];
    for bi in 0..b {
        for ci in 0..c {
            let mut cur = x.plane(bi, ci).to_vec();
            let mut dims = [d, m, n];
            for axis in 0..3 {
                let w = &weights[axis];
                let (next, nd) = resample_plane(&cur, dims, axis, 2 * dims[axis], |s, o| {
                    for (dst, &(i0, i1, t)) in o.iter_mut().zip(w) {
                        *dst = s[i0] * (T::one() - t) + s[i1] * t;
                    }
                });
                cur = next;
                dims = nd;
            }
            out.plane_mut(bi, ci).copy_from_slice(&cur);
        }
    }
    out
}

pub(crate) fn interp_backward<T: Real>(g: &Tensor<T>, x_shape: [usize; 5]) -> Tensor<T> {
    let [b, c, d, m, n] = x_shape;
    let mut dx = Tensor::zeros(x_shape);
    let weights = [interp_weights::<T>(d), interp_weights::<T>(m), interp_weights::<T>(n)];
    for bi in 0..b {
        for ci in 0..c {
            let mut cur = g.plane(bi, ci).to_vec();
            let mut dims = [2 * d, 2 * m, 2 * n];
            for axis in (0..3).rev() {
                let w = &weights[axis];
                let (next, nd) = resample_plane(&cur, dims, axis, dims[axis] / 2, |s, o| {
                    o.iter_mut().for_each(|v| *v = T::zero());
                    for (&gv, &(i0, i1, t)) in s.iter().zip(w) {
                        o[i0] += gv * (T::one() - t);
                        o[i1] += gv * t;
                    }
                });
                cur = next;
                dims = nd;
            }
            dx.plane_mut(bi, ci).copy_from_slice(&cur);
        }
    }
    dx
}

/// Per-channel mean and biased variance over batch and space.
pub(crate) fn channel_moments<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let [b, c, ..] = x.shape();
    let count = T::lit((b * x.plane_len()) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ci in 0..c {
        let mut s = 0.0f64;
        for bi in 0..b {
            s += x.plane(bi, ci).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = s / count.as_f64();
        let mut q = 0.0f64;
        for bi in 0..b {
            q += x.plane(bi, ci).iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>();
        }
        mean[ci] = T::lit(mu);
        var[ci] = T::lit(q / count.as_f64());
    }
    (mean, var)
}

pub(crate) fn batchnorm_apply<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T], mean: &[T], inv_std: &[T]) -> Tensor<T> {
    let mut out = x.clone();
    for bi in 0..x.batch() {
        for ci in 0..x.channels() {
            let (g, bt, mu, is) = (gamma[ci], beta[ci], mean[ci], inv_std[ci]);
            out.plane_mut(bi, ci).iter_mut().for_each(|v| *v = g * (*v - mu) * is + bt);
        }
    }
    out
}

pub(crate) struct BnGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub(crate) fn batchnorm_backward<T: Real>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    train: bool,
    need_dx: bool,
) -> BnGrads<T> {
    let [b, c, ..] = x.shape();
    let count = T::lit((b * x.plane_len()) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ci in 0..c {
        for bi in 0..b {
            for (&xv, &gv) in x.plane(bi, ci).iter().zip(g.plane(bi, ci)) {
                dbeta[ci] += gv;
                dgamma[ci] += gv * (xv - mean[ci]) * inv_std[ci];
            }
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        for ci in 0..c {
            let scale = gamma[ci] * inv_std[ci];
            for bi in 0..b {
                let xs = x.plane(bi, ci);
                let gs = g.plane(bi, ci);
                let dst = dx.plane_mut(bi, ci);
                if train {
                    for ((d, &xv), &gv) in dst.iter_mut().zip(xs).zip(gs) {
                        let xhat = (xv - mean[ci]) * inv_std[ci];
                        *d = scale * (gv - dbeta[ci] / count - xhat * dgamma[ci] / count);
                    }
                } else {
                    for (d, &gv) in dst.iter_mut().zip(gs) {
                        *d = scale * gv;
                    }
                }
            }
        }
        dx
    });
    BnGrads {
        dx,
        dgamma: Tensor::channel_vector(dgamma),
        dbeta: Tensor::channel_vector(dbeta),
    }
}

/// Per-plane DWT. Output channel `s * c + ch` holds subband `s` of input
/// channel `ch`, so the first `c` channels are the low-frequency part.
pub(crate) fn dwt_forward<T: Real>(x: &Tensor<T>, pair: &LinePair<T>) -> Tensor<T> {
    let [b, c, d, m, n] = x.shape();
    let dims = [d, m, n];
    let mut out = Tensor::zeros([b, 8 * c, d / 2, m / 2, n / 2]);
    let mut packed = vec![T::zero(); x.plane_len()];
    for bi in 0..b {
        for ci in 0..c {
            packed.copy_from_slice(x.plane(bi, ci));
            analyze_block(&mut packed, dims, pair);
            for s in Subband::ALL {
                read_octant(&packed, dims, s, out.plane_mut(bi, s.index() * c + ci));
            }
        }
    }
    out
}

/// Inverse of the packing in [`dwt_forward`]; `synth` is applied per plane.
/// With the analysis pair this is the adjoint of [`dwt_forward`]; with the
/// synthesis pair it is the IDWT.
pub(crate) fn packed_synthesis<T: Real>(
    bands: &Tensor<T>,
    c: usize,
    low_offset: Option<&Tensor<T>>,
    pair: &LinePair<T>,
) -> Tensor<T> {
    let [b, _, h0, h1, h2] = bands.shape();
    let dims = [2 * h0, 2 * h1, 2 * h2];
    let mut out = Tensor::zeros([b, c, dims[0], dims[1], dims[2]]);
    let mut packed = vec![T::zero(); out.plane_len()];
    for bi in 0..b {
        for ci in 0..c {
            for s in Subband::ALL {
                let src = match (low_offset, s) {
                    (Some(low), Subband::Lll) => low.plane(bi, ci),
                    (Some(_), _) => bands.plane(bi, (s.index() - 1) * c + ci),
                    (None, _) => bands.plane(bi, s.index() * c + ci),
                };
                write_octant(&mut packed, dims, s, src);
            }
            synthesize_block(&mut packed, dims, pair);
            out.plane_mut(bi, ci).copy_from_slice(&packed);
        }
    }
    out
}

/// Weighted softmax cross-entropy over two or more classes, normalized by
/// the sum of applied weights. Returns `(loss, dloss/dlogits)`.
pub(crate) fn weighted_ce<T: Real>(logits: &Tensor<T>, labels: &[u8], weights: &[T]) -> (T, Tensor<T>) {
    let [b, k, ..] = logits.shape();
    let p = logits.plane_len();
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0f64;
    let mut wsum = 0.0f64;
    let mut probs = vec![0.0f64; k];
    for bi in 0..b {
        for v in 0..p {
            let y = labels[bi * p + v] as usize;
            let mut mx = f64::NEG_INFINITY;
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = logits.plane(bi, c)[v].as_f64();
                mx = mx.max(*pr);
            }
            let mut z = 0.0;
            for pr in probs.iter_mut() {
                *pr = (*pr - mx).exp();
                z += *pr;
            }
            let w = weights[y].as_f64();
            let logp = (logits.plane(bi, y)[v].as_f64() - mx) - z.ln();
            total -= w * logp;
            wsum += w;
            for (c, pr) in probs.iter().enumerate() {
                let target = if c == y { 1.0 } else { 0.0 };
                grad.plane_mut(bi, c)[v] = T::lit(w * (pr / z - target));
            }
        }
    }
    let inv = if wsum > 0.0 { 1.0 / wsum } else { 0.0 };
    grad.as_mut_slice().iter_mut().for_each(|g| *g *= T::lit(inv));
    (T::lit(total * inv), grad)
}
