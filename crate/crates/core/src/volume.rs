//! Dense 3D grids stored in z-y-x row-major order.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VolumeError {
    #[error("extent {0:?} has a zero axis")]
    ZeroExtent([usize; 3]),
    #[error("extent {dims:?} needs {expected} values, got {actual}")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("label value {value} at flat index {index} is not 0 or 1")]
    NotBinary { index: usize, value: u8 },
    #[error("region at {origin:?} with extent {dims:?} exceeds volume {bounds:?}")]
    OutOfBounds {
        origin: [usize; 3],
        dims: [usize; 3],
        bounds: [usize; 3],
    },
}

/// A `d x m x n` grid. Element `(z, y, x)` lives at `(z * m + y) * n + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

/// Binary segmentation labels: 0 background, 1 nerve fiber.
pub type LabelVolume = Volume<u8>;

impl<T: Copy> Volume<T> {
    pub fn filled(dims: [usize; 3], value: T) -> Result<Self, VolumeError> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            data: vec![value; dims[0] * dims[1] * dims[2]],
        })
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Result<Self, VolumeError> {
        check_dims(dims)?;
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self, VolumeError> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: T) {
        let i = self.index(z, y, x);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Copies the `dims` block starting at `origin`.
    pub fn crop(&self, origin: [usize; 3], dims: [usize; 3]) -> Result<Self, VolumeError> {
        check_dims(dims)?;
        self.check_region(origin, dims)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                let start = self.index(origin[0] + z, origin[1] + y, origin[2]);
                data.extend_from_slice(&self.data[start..start + dims[2]]);
            }
        }
        Ok(Self { dims, data })
    }

    /// Writes `src` into this volume with its first voxel at `origin`.
    pub fn paste(&mut self, origin: [usize; 3], src: &Volume<T>) -> Result<(), VolumeError> {
        self.check_region(origin, src.dims)?;
        let [d, m, n] = src.dims;
        for z in 0..d {
            for y in 0..m {
                let dst = self.index(origin[0] + z, origin[1] + y, origin[2]);
                let s = src.index(z, y, 0);
                self.data[dst..dst + n].copy_from_slice(&src.data[s..s + n]);
            }
        }
        Ok(())
    }

    /// Extends the volume at the high end of every axis with `fill`.
    pub fn pad_to(&self, dims: [usize; 3], fill: T) -> Result<Self, VolumeError> {
        if dims.iter().zip(self.dims.iter()).any(|(p, o)| p < o) {
            return Err(VolumeError::OutOfBounds {
                origin: [0; 3],
                dims: self.dims,
                bounds: dims,
            });
        }
        if dims == self.dims {
            return Ok(self.clone());
        }
        let mut out = Self::filled(dims, fill)?;
        out.paste([0; 3], self)?;
        Ok(out)
    }

    fn check_region(&self, origin: [usize; 3], dims: [usize; 3]) -> Result<(), VolumeError> {
        if (0..3).any(|a| origin[a] + dims[a] > self.dims[a]) {
            return Err(VolumeError::OutOfBounds {
                origin,
                dims,
                bounds: self.dims,
            });
        }
        Ok(())
    }
}

impl<T: Copy + Default> Volume<T> {
    pub fn zeros(dims: [usize; 3]) -> Result<Self, VolumeError> {
        Self::filled(dims, T::default())
    }
}

impl<T: Real> Volume<T> {
    pub fn ensure_finite(&self) -> Result<(), VolumeError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(VolumeError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn cast<U: Real>(&self) -> Volume<U> {
        self.map(|v| U::lit(v.as_f64()))
    }
}

impl Volume<u8> {
    pub fn ensure_binary(&self) -> Result<(), VolumeError> {
        match self.data.iter().position(|&v| v > 1) {
            Some(index) => Err(VolumeError::NotBinary {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

fn check_dims(dims: [usize; 3]) -> Result<(), VolumeError> {
    if dims.contains(&0) {
        Err(VolumeError::ZeroExtent(dims))
    } else {
        Ok(())
    }
}
