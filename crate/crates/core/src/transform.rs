//! Single-level separable 3D DWT/IDWT with periodic boundaries, the naive
//! 2x samplers and hard shrinkage of high-frequency subbands.
//!
//! The forward transform correlates each axis with the analysis filter and
//! keeps even positions: `a[k] = sum_i f[i] * x[(2k + i) mod N]`. Axes are
//! processed z, then y, then x. The inverse scatters each coefficient back
//! through the synthesis filter, `x[(2k + i) mod N] += f~[i] * a[k]`, which
//! is the exact transpose of the forward pass when `f~ = f`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::filters::{FilterBank, Role, Subband};
use crate::scalar::Real;
use crate::volume::{Volume, VolumeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("extent {0:?} has an odd axis")]
    OddExtent([usize; 3]),
    #[error("subband shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
    #[error("shrink threshold must be a nonnegative finite number, got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Analysis along one line. `dst[..N/2]` receives the low band, `dst[N/2..]`
/// the high band. `src.len()` must be even.
pub fn analyze_line<T: Real>(src: &[T], lo: &[T], hi: &[T], dst: &mut [T]) {
    let n = src.len();
    let half = n / 2;
    debug_assert_eq!(dst.len(), n);
    for k in 0..half {
        let mut a = T::zero();
        let mut d = T::zero();
        let base = 2 * k;
        if base + lo.len() <= n {
            let win = &src[base..base + lo.len()];
            for ((&s, &l), &h) in win.iter().zip(lo).zip(hi) {
                a += l * s;
                d += h * s;
            }
        } else {
            for (i, (&l, &h)) in lo.iter().zip(hi).enumerate() {
                let s = src[(base + i) % n];
                a += l * s;
                d += h * s;
            }
        }
        dst[k] = a;
        dst[half + k] = d;
    }
}

/// Synthesis along one line, the transpose of [`analyze_line`] for the same
/// filters. `src` holds the low band followed by the high band.
pub fn synthesize_line<T: Real>(src: &[T], lo: &[T], hi: &[T], dst: &mut [T]) {
    let n = src.len();
    let half = n / 2;
    dst.iter_mut().for_each(|v| *v = T::zero());
    for k in 0..half {
        let a = src[k];
        let d = src[half + k];
        let base = 2 * k;
        if base + lo.len() <= n {
            for ((o, &l), &h) in dst[base..base + lo.len()].iter_mut().zip(lo).zip(hi) {
                *o += l * a + h * d;
            }
        } else {
            for (i, (&l, &h)) in lo.iter().zip(hi).enumerate() {
                dst[(base + i) % n] += l * a + h * d;
            }
        }
    }
}

/// Applies `f(line_in, line_out)` to every line of a z-y-x block along `axis`.
fn map_lines<T: Real>(data: &mut [T], dims: [usize; 3], axis: usize, mut f: impl FnMut(&[T], &mut [T])) {
    let strides = [dims[1] * dims[2], dims[2], 1];
    let len = dims[axis];
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut line = vec![T::zero(); len];
    let mut out = vec![T::zero(); len];
    for i in 0..dims[a] {
        for j in 0..dims[b] {
            let base = i * strides[a] + j * strides[b];
            let s = strides[axis];
            if s == 1 {
                f(&data[base..base + len], &mut out);
                data[base..base + len].copy_from_slice(&out);
            } else {
                for (t, v) in line.iter_mut().enumerate() {
                    *v = data[base + t * s];
                }
                f(&line, &mut out);
                for (t, v) in out.iter().enumerate() {
                    data[base + t * s] = *v;
                }
            }
        }
    }
}

/// Filters converted once to the working precision.
#[derive(Debug, Clone)]
pub(crate) struct LinePair<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> LinePair<T> {
    pub fn new(bank: &FilterBank, role: Role) -> Self {
        let (lo, hi) = bank.pair(role);
        Self {
            lo: lo.iter().map(|&v| T::lit(v)).collect(),
            hi: hi.iter().map(|&v| T::lit(v)).collect(),
        }
    }
}

/// In-place forward transform of one even-extent block into the packed
/// octant layout: octant `(c0, c1, c2)` holds subband `c0 c1 c2`.
pub(crate) fn analyze_block<T: Real>(data: &mut [T], dims: [usize; 3], pair: &LinePair<T>) {
    for axis in 0..3 {
        map_lines(data, dims, axis, |s, d| analyze_line(s, &pair.lo, &pair.hi, d));
    }
}

/// In-place transpose-style synthesis of a packed block.
pub(crate) fn synthesize_block<T: Real>(data: &mut [T], dims: [usize; 3], pair: &LinePair<T>) {
    for axis in (0..3).rev() {
        map_lines(data, dims, axis, |s, d| synthesize_line(s, &pair.lo, &pair.hi, d));
    }
}

/// Copies octant `band` of a packed block into `out` (length `dims/2` cubed).
pub(crate) fn read_octant<T: Copy>(packed: &[T], dims: [usize; 3], band: Subband, out: &mut [T]) {
    let h = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
    let [oz, oy, ox] = band.high_axes().map(usize::from);
    let mut idx = 0;
    for z in 0..h[0] {
        for y in 0..h[1] {
            let src = ((oz * h[0] + z) * dims[1] + oy * h[1] + y) * dims[2] + ox * h[2];
            out[idx..idx + h[2]].copy_from_slice(&packed[src..src + h[2]]);
            idx += h[2];
        }
    }
}

pub(crate) fn write_octant<T: Copy>(packed: &mut [T], dims: [usize; 3], band: Subband, src: &[T]) {
    let h = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
    let [oz, oy, ox] = band.high_axes().map(usize::from);
    let mut idx = 0;
    for z in 0..h[0] {
        for y in 0..h[1] {
            let dst = ((oz * h[0] + z) * dims[1] + oy * h[1] + y) * dims[2] + ox * h[2];
            packed[dst..dst + h[2]].copy_from_slice(&src[idx..idx + h[2]]);
            idx += h[2];
        }
    }
}

/// The eight components of a single-level 3D DWT.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet<T> {
    wavelet: String,
    bands: Vec<Volume<T>>,
}

impl<T: Real> SubbandSet<T> {
    /// `bands` in tag order `lll .. hhh`; all eight must share one shape.
    pub fn new(wavelet: impl Into<String>, bands: Vec<Volume<T>>) -> Result<Self, TransformError> {
        assert_eq!(bands.len(), 8, "a subband set has eight components");
        let d0 = bands[0].dims();
        if let Some(b) = bands.iter().find(|b| b.dims() != d0) {
            return Err(TransformError::ShapeMismatch(d0, b.dims()));
        }
        Ok(Self {
            wavelet: wavelet.into(),
            bands,
        })
    }

    pub fn wavelet(&self) -> &str {
        &self.wavelet
    }

    /// Shape shared by every component.
    pub fn dims(&self) -> [usize; 3] {
        self.bands[0].dims()
    }

    pub fn band(&self, s: Subband) -> &Volume<T> {
        &self.bands[s.index()]
    }

    pub fn band_mut(&mut self, s: Subband) -> &mut Volume<T> {
        &mut self.bands[s.index()]
    }

    pub fn bands(&self) -> &[Volume<T>] {
        &self.bands
    }

    pub fn into_bands(self) -> Vec<Volume<T>> {
        self.bands
    }

    pub fn sum_squares(&self) -> T {
        self.bands.iter().map(Volume::sum_squares).sum()
    }
}

fn check_even(dims: [usize; 3]) -> Result<(), TransformError> {
    if dims.iter().any(|d| d % 2 != 0) {
        Err(TransformError::OddExtent(dims))
    } else {
        Ok(())
    }
}

/// One-level separable 3D DWT with periodic extension. Every extent must be
/// even; extents shorter than the filter wrap around more than once.
pub fn dwt3<T: Real>(x: &Volume<T>, bank: &FilterBank) -> Result<SubbandSet<T>, TransformError> {
    let dims = x.dims();
    check_even(dims)?;
    let pair = LinePair::new(bank, Role::Decomposition);
    let mut packed = x.as_slice().to_vec();
    analyze_block(&mut packed, dims, &pair);
    let half = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
    let mut bands = Vec::with_capacity(8);
    for s in Subband::ALL {
        let mut buf = vec![T::zero(); half[0] * half[1] * half[2]];
        read_octant(&packed, dims, s, &mut buf);
        bands.push(Volume::from_vec(half, buf)?);
    }
    SubbandSet::new(bank.name(), bands)
}

pub fn idwt3<T: Real>(s: &SubbandSet<T>, bank: &FilterBank) -> Result<Volume<T>, TransformError> {
    let h = s.dims();
    if let Some(b) = s.bands.iter().find(|b| b.dims() != h) {
        return Err(TransformError::ShapeMismatch(h, b.dims()));
    }
    let dims = [2 * h[0], 2 * h[1], 2 * h[2]];
    let mut packed = vec![T::zero(); dims[0] * dims[1] * dims[2]];
    for band in Subband::ALL {
        write_octant(&mut packed, dims, band, s.band(band).as_slice());
    }
    synthesize_block(&mut packed, dims, &LinePair::new(bank, Role::Reconstruction));
    Ok(Volume::from_vec(dims, packed)?)
}

/// `out[i, j, k] = x[2i, 2j, 2k]`, extents halved with floor.
pub fn downsample2<T: Copy>(x: &Volume<T>) -> Result<Volume<T>, TransformError> {
    let [d, m, n] = x.dims();
    let h = [d / 2, m / 2, n / 2];
    Ok(Volume::from_fn(h, |z, y, w| x.get(2 * z, 2 * y, 2 * w))?)
}

/// Zero-filled 2x upsampling: even lattice carries the input.
pub fn upsample2<T: Copy + Default>(x: &Volume<T>) -> Result<Volume<T>, TransformError> {
    let [d, m, n] = x.dims();
    let mut out = Volume::zeros([2 * d, 2 * m, 2 * n])?;
    for z in 0..d {
        for y in 0..m {
            for w in 0..n {
                out.set(2 * z, 2 * y, 2 * w, x.get(z, y, w));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkConfig {
    threshold: f64,
}

impl ShrinkConfig {
    /// Threshold used by the denoising block.
    pub const DEFAULT_THRESHOLD: f64 = 0.25;

    pub fn new(threshold: f64) -> Result<Self, TransformError> {
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(TransformError::InvalidThreshold(threshold));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for ShrinkConfig {
    fn default() -> Self {
        Self {
            threshold: Self::DEFAULT_THRESHOLD,
        }
    }
}

/// Keeps `x` when `|x| > lambda`, zero otherwise (the boundary maps to zero).
#[inline]
pub fn shrink_value<T: Real>(x: T, lambda: T) -> T {
    if x > lambda || x < -lambda {
        x
    } else {
        T::zero()
    }
}

/// Zeroes small coefficients of the seven high-frequency subbands; `lll`
/// passes through unchanged.
pub fn hard_shrink<T: Real>(s: &SubbandSet<T>, cfg: ShrinkConfig) -> SubbandSet<T> {
    let lambda = T::lit(cfg.threshold);
    let mut out = s.clone();
    for band in Subband::HIGH {
        out.band_mut(band)
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = shrink_value(*v, lambda));
    }
    out
}
