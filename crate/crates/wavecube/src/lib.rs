//! File formats, checkpoints, the training driver and parallel volume
//! segmentation on top of `wavecube-core`.

pub mod checkpoint;
pub mod nvol;
pub mod run;
pub mod segment;
