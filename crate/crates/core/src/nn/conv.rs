//! Direct 3D convolution and 2x2x2 transposed convolution kernels.
//!
//! Weights are `out x in x kz x ky x kx` for convolution and
//! `in x out x 2 x 2 x 2` for the transposed variant; biases are
//! per-channel vectors.

use crate::nn::Tensor;
use crate::scalar::Real;

#[inline]
pub(crate) fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// `out[i..j] += w * src[i + shift .. j + shift]` over the indices where
/// both ends are in range.
#[inline]
fn axpy_shifted<T: Real>(out: &mut [T], src: &[T], w: T, shift: isize) {
    let n_out = out.len() as isize;
    let n_src = src.len() as isize;
    let lo = (-shift).max(0);
    let hi = n_out.min(n_src - shift);
    if lo >= hi {
        return;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let s = (lo as isize + shift) as usize;
    for (o, &v) in out[lo..hi].iter_mut().zip(&src[s..s + (hi - lo)]) {
        *o += w * v;
    }
}

#[inline]
fn dot_shifted<T: Real>(g: &[T], src: &[T], shift: isize) -> T {
    let n_g = g.len() as isize;
    let n_src = src.len() as isize;
    let lo = (-shift).max(0);
    let hi = n_g.min(n_src - shift);
    if lo >= hi {
        return T::zero();
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let s = (lo as isize + shift) as usize;
    let mut acc = T::zero();
    for (&a, &b) in g[lo..hi].iter().zip(&src[s..s + (hi - lo)]) {
        acc += a * b;
    }
    acc
}

pub(crate) fn conv_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let [b, cin, id, im, in_] = x.shape();
    let [cout, _, kd, km, kn] = w.shape();
    let od = out_extent(id, kd, stride, pad);
    let om = out_extent(im, km, stride, pad);
    let on = out_extent(in_, kn, stride, pad);
    let mut out = Tensor::zeros([b, cout, od, om, on]);
    let wd = w.as_slice();
    let ksz = kd * km * kn;
    for bi in 0..b {
        for co in 0..cout {
            let bv = bias.map_or(T::zero(), |t| t.as_slice()[co]);
            let dst = out.plane_mut(bi, co);
            dst.iter_mut().for_each(|v| *v = bv);
            for oz in 0..od {
                for oy in 0..om {
                    let row = &mut dst[(oz * om + oy) * on..(oz * om + oy + 1) * on];
                    for ci in 0..cin {
                        let src = x.plane(bi, ci);
                        let wk = &wd[(co * cin + ci) * ksz..(co * cin + ci + 1) * ksz];
                        for kz in 0..kd {
                            let iz = (oz * stride + kz) as isize - pad as isize;
                            if iz < 0 || iz >= id as isize {
                                continue;
                            }
                            for ky in 0..km {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= im as isize {
                                    continue;
                                }
                                let base = (iz as usize * im + iy as usize) * in_;
                                let srow = &src[base..base + in_];
                                for kx in 0..kn {
                                    let wv = wk[(kz * km + ky) * kn + kx];
                                    if stride == 1 {
                                        axpy_shifted(row, srow, wv, kx as isize - pad as isize);
                                    } else {
                                        for (ox, o) in row.iter_mut().enumerate() {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix >= 0 && ix < in_ as isize {
                                                *o += wv * srow[ix as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub(crate) fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> ConvGrads<T> {
    let [b, cin, id, im, in_] = x.shape();
    let [cout, _, kd, km, kn] = w.shape();
    let [_, _, od, om, on] = gout.shape();
    let ksz = kd * km * kn;
    let wd = w.as_slice();

    let mut db = Tensor::zeros([cout, 1, 1, 1, 1]);
    for bi in 0..b {
        for co in 0..cout {
            db.as_mut_slice()[co] += gout.plane(bi, co).iter().copied().sum::<T>();
        }
    }

    let mut dw = Tensor::zeros(w.shape());
    {
        let dwd = dw.as_mut_slice();
        for bi in 0..b {
            for co in 0..cout {
                let g = gout.plane(bi, co);
                for ci in 0..cin {
                    let src = x.plane(bi, ci);
                    let acc = &mut dwd[(co * cin + ci) * ksz..(co * cin + ci + 1) * ksz];
                    for oz in 0..od {
                        for kz in 0..kd {
                            let iz = (oz * stride + kz) as isize - pad as isize;
                            if iz < 0 || iz >= id as isize {
                                continue;
                            }
                            for oy in 0..om {
                                let grow = &g[(oz * om + oy) * on..(oz * om + oy + 1) * on];
                                for ky in 0..km {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= im as isize {
                                        continue;
                                    }
                                    let base = (iz as usize * im + iy as usize) * in_;
                                    let srow = &src[base..base + in_];
                                    for kx in 0..kn {
                                        let v = if stride == 1 {
                                            dot_shifted(grow, srow, kx as isize - pad as isize)
                                        } else {
                                            let mut s = T::zero();
                                            for (ox, &gv) in grow.iter().enumerate() {
                                                let ix = (ox * stride + kx) as isize - pad as isize;
                                                if ix >= 0 && ix < in_ as isize {
                                                    s += gv * srow[ix as usize];
                                                }
                                            }
                                            s
                                        };
                                        acc[(kz * km + ky) * kn + kx] += v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        for bi in 0..b {
            for ci in 0..cin {
                let dst = dx.plane_mut(bi, ci);
                for co in 0..cout {
                    let g = gout.plane(bi, co);
                    let wk = &wd[(co * cin + ci) * ksz..(co * cin + ci + 1) * ksz];
                    for oz in 0..od {
                        for kz in 0..kd {
                            let iz = (oz * stride + kz) as isize - pad as isize;
                            if iz < 0 || iz >= id as isize {
                                continue;
                            }
                            for oy in 0..om {
                                let grow = &g[(oz * om + oy) * on..(oz * om + oy + 1) * on];
                                for ky in 0..km {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= im as isize {
                                        continue;
                                    }
                                    let base = (iz as usize * im + iy as usize) * in_;
                                    let drow = &mut dst[base..base + in_];
                                    for kx in 0..kn {
                                        let wv = wk[(kz * km + ky) * kn + kx];
                                        if stride == 1 {
                                            // drow[ix] += w * g[ix - kx + pad]
                                            axpy_shifted(drow, grow, wv, pad as isize - kx as isize);
                                        } else {
                                            for (ox, &gv) in grow.iter().enumerate() {
                                                let ix = (ox * stride + kx) as isize - pad as isize;
                                                if ix >= 0 && ix < in_ as isize {
                                                    drow[ix as usize] += wv * gv;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    });

    ConvGrads { dx, dw, db }
}

/// Transposed convolution, kernel 2x2x2, stride 2: every input voxel
/// expands into a 2x2x2 output block.
pub(crate) fn deconv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let [b, cin, d, m, n] = x.shape();
    let cout = w.shape()[1];
    let mut out = Tensor::zeros([b, cout, 2 * d, 2 * m, 2 * n]);
    let wd = w.as_slice();
    let (om, on) = (2 * m, 2 * n);
    for bi in 0..b {
        for co in 0..cout {
            let bv = bias.map_or(T::zero(), |t| t.as_slice()[co]);
            let dst = out.plane_mut(bi, co);
            dst.iter_mut().for_each(|v| *v = bv);
            for ci in 0..cin {
                let src = x.plane(bi, ci);
                let wk = &wd[(ci * cout + co) * 8..(ci * cout + co + 1) * 8];
                for z in 0..d {
                    for y in 0..m {
                        for xx in 0..n {
                            let v = src[(z * m + y) * n + xx];
                            for a in 0..2 {
                                for bb in 0..2 {
                                    let row = ((2 * z + a) * om + 2 * y + bb) * on + 2 * xx;
                                    dst[row] += wk[a * 4 + bb * 2] * v;
                                    dst[row + 1] += wk[a * 4 + bb * 2 + 1] * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn deconv_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, gout: &Tensor<T>, need_dx: bool) -> ConvGrads<T> {
    let [b, cin, d, m, n] = x.shape();
    let cout = w.shape()[1];
    let (om, on) = (2 * m, 2 * n);
    let wd = w.as_slice();
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([cout, 1, 1, 1, 1]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for bi in 0..b {
        for co in 0..cout {
            let g = gout.plane(bi, co);
            db.as_mut_slice()[co] += g.iter().copied().sum::<T>();
            for ci in 0..cin {
                let src = x.plane(bi, ci);
                let k0 = (ci * cout + co) * 8;
                let mut acc = [T::zero(); 8];
                for z in 0..d {
                    for y in 0..m {
                        for xx in 0..n {
                            let v = src[(z * m + y) * n + xx];
                            let mut back = T::zero();
                            for a in 0..2 {
                                for bb in 0..2 {
                                    let row = ((2 * z + a) * om + 2 * y + bb) * on + 2 * xx;
                                    for c in 0..2 {
                                        let gv = g[row + c];
                                        acc[a * 4 + bb * 2 + c] += gv * v;
                                        back += gv * wd[k0 + a * 4 + bb * 2 + c];
                                    }
                                }
                            }
                            if let Some(dx) = dx.as_mut() {
                                dx.plane_mut(bi, ci)[(z * m + y) * n + xx] += back;
                            }
                        }
                    }
                }
                for (dst, v) in dw.as_mut_slice()[k0..k0 + 8].iter_mut().zip(acc) {
                    *dst += v;
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}
