use alloc::vec;
use alloc::vec::Vec;

use crate::nn::NnError;
use crate::scalar::Real;
use crate::volume::Volume;

/// Dense 5D array `batch x channels x depth x height x width`.
///
/// Activations flow through the network in this layout; parameters reuse it
/// (a 3D kernel is `out x in x kz x ky x kx`, a per-channel vector is
/// `c x 1 x 1 x 1 x 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 5],
    data: Vec<T>,
}

pub type Activation<T> = Tensor<T>;

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: [usize; 5], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NnError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: [1; 5],
            data: vec![v],
        }
    }

    /// Per-channel vector of length `c`.
    pub fn channel_vector(values: Vec<T>) -> Self {
        Self {
            shape: [values.len(), 1, 1, 1, 1],
            data: values,
        }
    }

    /// A `1 x 1 x d x m x n` activation holding `v`.
    pub fn from_volume(v: &Volume<T>) -> Self {
        let [d, m, n] = v.dims();
        Self {
            shape: [1, 1, d, m, n],
            data: v.as_slice().to_vec(),
        }
    }

    /// Stacks equally shaped volumes into a `b x 1 x d x m x n` batch.
    pub fn stack(volumes: &[&Volume<T>]) -> Result<Self, NnError> {
        let first = volumes.first().ok_or(NnError::EmptyBatch)?.dims();
        let mut data = Vec::with_capacity(volumes.len() * first.iter().product::<usize>());
        for v in volumes {
            if v.dims() != first {
                return Err(NnError::ShapeMismatch {
                    layer: "stack",
                    left: [1, 1, first[0], first[1], first[2]],
                    right: [1, 1, v.dims()[0], v.dims()[1], v.dims()[2]],
                });
            }
            data.extend_from_slice(v.as_slice());
        }
        Ok(Self {
            shape: [volumes.len(), 1, first[0], first[1], first[2]],
            data,
        })
    }

    /// Copies plane `(b, c)` out as a volume.
    pub fn to_volume(&self, b: usize, c: usize) -> Volume<T> {
        Volume::from_vec(self.spatial(), self.plane(b, c).to_vec()).expect("plane matches spatial extent")
    }

    #[inline]
    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
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
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let start = (b * self.shape[1] + c) * p;
        &self.data[start..start + p]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let p = self.plane_len();
        let start = (b * self.shape[1] + c) * p;
        &mut self.data[start..start + p]
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T, NnError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(NnError::NotScalar(self.shape))
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl FnMut(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
