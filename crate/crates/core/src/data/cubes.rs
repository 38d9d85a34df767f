use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::volume::{LabelVolume, Volume, VolumeError};

/// Minimum labeled fraction for training cubes.
pub const DEFAULT_MIN_FOREGROUND: f64 = 0.001;

/// Rejected draws allowed per requested cube before giving up.
const ATTEMPTS_PER_CUBE: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CutError {
    #[error("image extents {image:?} differ from label extents {labels:?}")]
    ExtentMismatch { image: [usize; 3], labels: [usize; 3] },
    #[error("cube shape {0:?} has a zero extent")]
    EmptyCube([usize; 3]),
    #[error("min_foreground {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// An image/label cube pair and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeRecord<T> {
    pub image: Volume<T>,
    pub labels: LabelVolume,
    /// (z, y, x) offset in the padded parent volume.
    pub origin: [usize; 3],
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutReport<T> {
    pub cubes: Vec<CubeRecord<T>>,
    pub requested: usize,
    pub attempts: usize,
    /// The retry budget ran out before `requested` cubes were accepted.
    pub exhausted: bool,
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Cuts up to `count` cubes at seeded uniform origins. Both volumes are
/// zero-padded at the high end to multiples of `cube`. Draws whose label
/// fraction is below `min_foreground` are rejected and redrawn.
pub fn cut_cubes<T: Copy + Default>(
    image: &Volume<T>,
    labels: &LabelVolume,
    cube: [usize; 3],
    count: usize,
    seed: u64,
    min_foreground: f64,
    source: &str,
) -> Result<CutReport<T>, CutError> {
    if image.dims() != labels.dims() {
        return Err(CutError::ExtentMismatch {
            image: image.dims(),
            labels: labels.dims(),
        });
    }
    if cube.contains(&0) {
        return Err(CutError::EmptyCube(cube));
    }
    if !(0.0..=1.0).contains(&min_foreground) {
        return Err(CutError::InvalidFraction(min_foreground));
    }
    let d = image.dims();
    let padded = [round_up(d[0], cube[0]), round_up(d[1], cube[1]), round_up(d[2], cube[2])];
    let image = image.pad_to(padded, T::default())?;
    let labels = labels.pad_to(padded, 0)?;
    let cube_len = (cube[0] * cube[1] * cube[2]) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = count.saturating_mul(ATTEMPTS_PER_CUBE);
    let mut cubes = Vec::with_capacity(count);
    let mut attempts = 0;
    while cubes.len() < count && attempts < budget {
        attempts += 1;
        let origin = [
            rng.random_range(0..=padded[0] - cube[0]),
            rng.random_range(0..=padded[1] - cube[1]),
            rng.random_range(0..=padded[2] - cube[2]),
        ];
        let l = labels.crop(origin, cube)?;
        if (l.count_ones() as f64) / cube_len < min_foreground {
            continue;
        }
        cubes.push(CubeRecord {
            image: image.crop(origin, cube)?,
            labels: l,
            origin,
            source: source.into(),
        });
    }
    Ok(CutReport {
        exhausted: cubes.len() < count,
        cubes,
        requested: count,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(dims: [usize; 3]) -> (Volume<f32>, LabelVolume) {
        let img = Volume::from_fn(dims, |z, y, x| (z * 31 + y * 7 + x) as f32).unwrap();
        let lab = Volume::from_fn(dims, |z, y, x| ((z + y + x) % 3 == 0) as u8).unwrap();
        (img, lab)
    }

    #[test]
    fn exact_size_volume_gives_origin_zero() {
        let (img, lab) = pair([16, 32, 32]);
        let r = cut_cubes(&img, &lab, [16, 32, 32], 1, 9, 0.0, "v").unwrap();
        assert_eq!(r.cubes.len(), 1);
        assert_eq!(r.cubes[0].origin, [0, 0, 0]);
        assert_eq!(r.cubes[0].image, img);
        assert_eq!(r.cubes[0].labels, lab);
    }

    #[test]
    fn same_seed_same_origins() {
        let (img, lab) = pair([20, 50, 40]);
        let a = cut_cubes(&img, &lab, [8, 16, 16], 12, 77, 0.0, "v").unwrap();
        let b = cut_cubes(&img, &lab, [8, 16, 16], 12, 77, 0.0, "v").unwrap();
        let origins = |r: &CutReport<f32>| r.cubes.iter().map(|c| c.origin).collect::<Vec<_>>();
        assert_eq!(origins(&a), origins(&b));
        for c in &a.cubes {
            assert_eq!(c.image, img.pad_to([24, 64, 48], 0.0).unwrap().crop(c.origin, [8, 16, 16]).unwrap());
        }
    }

    #[test]
    fn unreachable_foreground_exhausts() {
        let img = Volume::<f32>::zeros([8, 8, 8]).unwrap();
        let lab = LabelVolume::zeros([8, 8, 8]).unwrap();
        let r = cut_cubes(&img, &lab, [4, 4, 4], 3, 1, 1.0, "v").unwrap();
        assert!(r.cubes.is_empty());
        assert!(r.exhausted);
        assert_eq!(r.attempts, 3 * ATTEMPTS_PER_CUBE);
    }

    #[test]
    fn argument_errors() {
        let (img, lab) = pair([8, 8, 8]);
        let (_, other) = pair([8, 8, 4]);
        assert!(matches!(cut_cubes(&img, &other, [4, 4, 4], 1, 0, 0.0, ""), Err(CutError::ExtentMismatch { .. })));
        assert!(matches!(cut_cubes(&img, &lab, [0, 4, 4], 1, 0, 0.0, ""), Err(CutError::EmptyCube(_))));
        assert!(matches!(cut_cubes(&img, &lab, [4, 4, 4], 1, 0, 1.5, ""), Err(CutError::InvalidFraction(_))));
    }

    #[test]
    fn origins_in_bounds_for_many_seeds() {
        let (img, lab) = pair([21, 37, 19]);
        let cube = [8, 16, 16];
        for seed in 0..1000 {
            let r = cut_cubes(&img, &lab, cube, 2, seed, 0.0, "").unwrap();
            for c in &r.cubes {
                for ax in 0..3 {
                    assert!(c.origin[ax] + cube[ax] <= round_up(img.dims()[ax], cube[ax]));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn accepted_cubes_meet_threshold(seed in any::<u64>(), frac in 0.0f64..0.5) {
            let (img, lab) = pair([12, 12, 12]);
            let r = cut_cubes(&img, &lab, [4, 4, 4], 5, seed, frac, "").unwrap();
            for c in &r.cubes {
                prop_assert!(c.labels.count_ones() as f64 / 64.0 >= frac);
            }
        }
    }
}
