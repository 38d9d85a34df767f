//! Label generation and training data: SWC traces, rasterization into 0-1
//! label volumes, random cube cutting and synthetic tube phantoms.
//!
//! Coordinates follow the SWC convention in voxel units: `x` runs along the
//! innermost (width) axis, `y` along height and `z` along depth, with the
//! origin at the center of voxel (0, 0, 0).

mod cubes;
mod phantom;
mod raster;
mod swc;

pub use self::cubes::{cut_cubes, CubeRecord, CutError, CutReport, DEFAULT_MIN_FOREGROUND};
pub use self::phantom::{generate_phantom, PhantomConfig, PhantomError};
pub use self::raster::{frustum_distance, rasterize};
pub use self::swc::{parse_swc, SwcError, SwcMorphology, SwcNode};
