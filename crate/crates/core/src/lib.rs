//! Separable 3D wavelet transforms, wavelet-integrated encoder-decoder
//! segmentation networks and volume tiling for line-shaped structures.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the training
//! driver that writes checkpoints and the command line live in the
//! `wavecube` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod arch;
pub mod data;
pub mod filters;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod train;
pub mod transform;
pub mod volume;

pub use crate::arch::{DualStructure, Network, NetworkSpec};
pub use crate::filters::{FilterBank, Subband};
pub use crate::scalar::Real;
pub use crate::transform::SubbandSet;
pub use crate::volume::{LabelVolume, Volume};
