//! Whole-volume inference: tile into cubes, segment each cube, reassemble,
//! and score against ground truth.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::arch::{ArchError, Network};
use crate::scalar::Real;
use crate::volume::{LabelVolume, Volume, VolumeError};

/// Cube extents must be multiples of this so four halvings stay integral.
pub const CUBE_MULTIPLE: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("cube shape {0:?} is not a positive multiple of 16 per axis")]
    CubeShape([usize; 3]),
    #[error("no cube supplied for origin {0:?}")]
    MissingCube([usize; 3]),
    #[error("cube origin {0:?} is not on the grid or appears twice")]
    UnexpectedCube([usize; 3]),
    #[error("cube at {origin:?} has extent {actual:?}, grid expects {expected:?}")]
    CubeExtent {
        origin: [usize; 3],
        expected: [usize; 3],
        actual: [usize; 3],
    },
    #[error("extents differ: {left:?} vs {right:?}")]
    ExtentMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("cube at {origin:?}: {source}")]
    Network { origin: [usize; 3], source: ArchError },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Non-overlapping tiling of a zero-padded volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubeGrid {
    original: [usize; 3],
    padded: [usize; 3],
    cube: [usize; 3],
    origins: Vec<[usize; 3]>,
}

impl CubeGrid {
    pub fn new(original: [usize; 3], cube: [usize; 3]) -> Result<Self, PipelineError> {
        if cube.iter().any(|&c| c == 0 || c % CUBE_MULTIPLE != 0) {
            return Err(PipelineError::CubeShape(cube));
        }
        let padded = [0, 1, 2].map(|a| original[a].div_ceil(cube[a]) * cube[a]);
        let mut origins = Vec::new();
        for z in (0..padded[0]).step_by(cube[0]) {
            for y in (0..padded[1]).step_by(cube[1]) {
                for x in (0..padded[2]).step_by(cube[2]) {
                    origins.push([z, y, x]);
                }
            }
        }
        Ok(Self {
            original,
            padded,
            cube,
            origins,
        })
    }

    pub fn original(&self) -> [usize; 3] {
        self.original
    }

    pub fn padded(&self) -> [usize; 3] {
        self.padded
    }

    pub fn cube(&self) -> [usize; 3] {
        self.cube
    }

    /// Origins in z-major order.
    pub fn origins(&self) -> &[[usize; 3]] {
        &self.origins
    }
}

/// Zero-pads `v` at the high end and cuts it into grid cubes, returned in
/// the order of [`CubeGrid::origins`].
pub fn partition<T: Copy + Default>(v: &Volume<T>, cube: [usize; 3]) -> Result<(CubeGrid, Vec<Volume<T>>), PipelineError> {
    let grid = CubeGrid::new(v.dims(), cube)?;
    let padded = v.pad_to(grid.padded, T::default())?;
    let cubes = grid
        .origins
        .iter()
        .map(|&o| padded.crop(o, cube))
        .collect::<Result<_, _>>()?;
    Ok((grid, cubes))
}

/// Places each cube at its origin and crops the padding. The order of
/// `cubes` is irrelevant; every grid origin must appear exactly once.
pub fn assemble<T: Copy + Default>(grid: &CubeGrid, cubes: Vec<([usize; 3], Volume<T>)>) -> Result<Volume<T>, PipelineError> {
    let mut pending: BTreeMap<[usize; 3], Option<Volume<T>>> = grid.origins.iter().map(|&o| (o, None)).collect();
    for (origin, cube) in cubes {
        let slot = pending.get_mut(&origin).ok_or(PipelineError::UnexpectedCube(origin))?;
        if slot.is_some() {
            return Err(PipelineError::UnexpectedCube(origin));
        }
        if cube.dims() != grid.cube {
            return Err(PipelineError::CubeExtent {
                origin,
                expected: grid.cube,
                actual: cube.dims(),
            });
        }
        *slot = Some(cube);
    }
    let mut out = Volume::zeros(grid.padded)?;
    for (origin, cube) in pending {
        let cube = cube.ok_or(PipelineError::MissingCube(origin))?;
        out.paste(origin, &cube)?;
    }
    Ok(out.crop([0; 3], grid.original)?)
}

/// Identifies the model behind a segmentation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub arch: String,
    pub wavelet: Option<String>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Binary labels at the original (unpadded) extents.
    pub labels: LabelVolume,
    pub provenance: Provenance,
}

/// Segments one cube. Implemented by [`Network`]; tests substitute simple
/// rules.
pub trait Segmenter<T> {
    fn segment_cube(&self, cube: &Volume<T>) -> Result<LabelVolume, ArchError>;
}

impl<T: Real> Segmenter<T> for Network<T> {
    fn segment_cube(&self, cube: &Volume<T>) -> Result<LabelVolume, ArchError> {
        Network::segment_cube(self, cube)
    }
}

impl<T, F: Fn(&Volume<T>) -> Result<LabelVolume, ArchError>> Segmenter<T> for F {
    fn segment_cube(&self, cube: &Volume<T>) -> Result<LabelVolume, ArchError> {
        self(cube)
    }
}

/// Sequential tile-segment-assemble.
pub fn segment_volume<T: Real, S: Segmenter<T> + ?Sized>(
    v: &Volume<T>,
    segmenter: &S,
    cube: [usize; 3],
    provenance: Provenance,
) -> Result<SegmentationResult, PipelineError> {
    let (grid, cubes) = partition(v, cube)?;
    let mut out = Vec::with_capacity(cubes.len());
    for (&origin, c) in grid.origins().iter().zip(&cubes) {
        let labels = segmenter
            .segment_cube(c)
            .map_err(|source| PipelineError::Network { origin, source })?;
        out.push((origin, labels));
    }
    Ok(SegmentationResult {
        labels: assemble(&grid, out)?,
        provenance,
    })
}

/// Per-class intersection over union.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouScores {
    pub background: f64,
    pub foreground: f64,
    pub mean: f64,
}

/// Confusion counts, for pooling IoU over several volumes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    /// `[truth][pred]`
    pub counts: [[u64; 2]; 2],
}

impl Confusion {
    pub fn add(&mut self, pred: &LabelVolume, truth: &LabelVolume) -> Result<(), PipelineError> {
        if pred.dims() != truth.dims() {
            return Err(PipelineError::ExtentMismatch {
                left: pred.dims(),
                right: truth.dims(),
            });
        }
        for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
            self.counts[(t != 0) as usize][(p != 0) as usize] += 1;
        }
        Ok(())
    }

    /// A class absent from both prediction and truth scores 1.
    pub fn scores(&self) -> IouScores {
        let class = |k: usize| {
            let inter = self.counts[k][k];
            let union = self.counts[k][0] + self.counts[k][1] + self.counts[1 - k][k];
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        };
        let (background, foreground) = (class(0), class(1));
        IouScores {
            background,
            foreground,
            mean: 0.5 * (background + foreground),
        }
    }
}

pub fn iou(pred: &LabelVolume, truth: &LabelVolume) -> Result<IouScores, PipelineError> {
    let mut c = Confusion::default();
    c.add(pred, truth)?;
    Ok(c.scores())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn ramp(dims: [usize; 3]) -> Volume<u8> {
        Volume::from_fn(dims, |z, y, x| ((z * 7 + y * 3 + x) % 251) as u8 + 1).unwrap()
    }

    #[test]
    fn grid_examples() {
        let g = CubeGrid::new([64, 128, 128], [32, 128, 128]).unwrap();
        assert_eq!(g.origins(), &[[0, 0, 0], [32, 0, 0]]);
        let g = CubeGrid::new([40, 130, 128], [32, 128, 128]).unwrap();
        assert_eq!(g.padded(), [64, 256, 128]);
        assert_eq!(g.origins().len(), 4);
        let g = CubeGrid::new([32, 128, 128], [32, 128, 128]).unwrap();
        assert_eq!((g.origins().len(), g.padded()), (1, [32, 128, 128]));
        assert_eq!(CubeGrid::new([8, 8, 8], [8, 16, 16]), Err(PipelineError::CubeShape([8, 16, 16])));
    }

    #[test]
    fn single_cube_assemble_crops() {
        let v = ramp([20, 30, 10]);
        let (g, cubes) = partition(&v, [32, 32, 16]).unwrap();
        assert_eq!(cubes.len(), 1);
        assert_eq!(cubes[0].get(25, 31, 15), 0);
        assert_eq!(assemble(&g, vec![([0; 3], cubes[0].clone())]).unwrap(), v);
    }

    #[test]
    fn shuffled_cubes_assemble_identically() {
        let v = ramp([40, 50, 20]);
        let (g, cubes) = partition(&v, [16, 16, 16]).unwrap();
        let mut tagged: Vec<_> = g.origins().iter().copied().zip(cubes).collect();
        tagged.reverse();
        tagged.swap(1, 4);
        assert_eq!(assemble(&g, tagged).unwrap(), v);
    }

    #[test]
    fn assemble_errors() {
        let v = ramp([32, 16, 16]);
        let (g, cubes) = partition(&v, [16, 16, 16]).unwrap();
        assert_eq!(
            assemble(&g, vec![([0; 3], cubes[0].clone())]),
            Err(PipelineError::MissingCube([16, 0, 0]))
        );
        let mut extra: Vec<_> = g.origins().iter().copied().zip(cubes.clone()).collect();
        extra.push(([0, 0, 0], cubes[0].clone()));
        assert_eq!(assemble(&g, extra), Err(PipelineError::UnexpectedCube([0, 0, 0])));
        let bad = vec![([0, 0, 0], cubes[0].clone()), ([16, 0, 0], ramp([16, 16, 8]))];
        assert!(matches!(assemble(&g, bad), Err(PipelineError::CubeExtent { .. })));
        let off = vec![([0, 0, 0], cubes[0].clone()), ([8, 0, 0], cubes[1].clone())];
        assert_eq!(assemble(&g, off), Err(PipelineError::UnexpectedCube([8, 0, 0])));
    }

    #[test]
    fn iou_examples() {
        let mixed = Volume::from_fn([4, 4, 4], |z, y, x| ((z + y * x) % 2) as u8).unwrap();
        let s = iou(&mixed, &mixed).unwrap();
        assert_eq!((s.background, s.foreground, s.mean), (1.0, 1.0, 1.0));

        let none = LabelVolume::zeros([4, 4, 4]).unwrap();
        assert_eq!(iou(&none, &mixed).unwrap().foreground, 0.0);
        let all_bg = iou(&none, &none).unwrap();
        assert_eq!(all_bg.foreground, 1.0);

        let cube = |off: usize| Volume::from_fn([6, 6, 6], |z, y, x| (z < 2 && y < 2 && (off..off + 2).contains(&x)) as u8).unwrap();
        let s = iou(&cube(1), &cube(0)).unwrap();
        assert!((s.foreground - 4.0 / 12.0).abs() < 1e-15);

        assert!(matches!(
            iou(&none, &LabelVolume::zeros([4, 4, 5]).unwrap()),
            Err(PipelineError::ExtentMismatch { .. })
        ));
    }

    #[test]
    fn segment_volume_with_rule() {
        let v = Volume::from_fn([20, 20, 20], |z, _, _| z as f32).unwrap();
        let rule = |c: &Volume<f32>| -> Result<LabelVolume, ArchError> { Ok(c.map(|x| (x > 9.5) as u8)) };
        let r = segment_volume(&v, &rule, [16, 16, 16], Provenance::default()).unwrap();
        assert_eq!(r.labels, v.map(|x| (x > 9.5) as u8));
        let failing = |_: &Volume<f32>| -> Result<LabelVolume, ArchError> {
            Err(ArchError::IndivisibleExtent { spatial: [1, 1, 1], factor: 16 })
        };
        assert!(matches!(
            segment_volume(&v, &failing, [16, 16, 16], Provenance::default()),
            Err(PipelineError::Network { origin: [0, 0, 0], .. })
        ));
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_exact(a in proptest::collection::vec(0u8..2, 27), b in proptest::collection::vec(0u8..2, 27)) {
            let a = Volume::from_vec([3, 3, 3], a).unwrap();
            let b = Volume::from_vec([3, 3, 3], b).unwrap();
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            let s = iou(&a, &b).unwrap();
            prop_assert_eq!(s.mean == 1.0, a == b);
        }

        #[test]
        fn partition_assemble_identity(d in 1usize..70, m in 1usize..70, n in 1usize..70) {
            let v = ramp([d, m, n]);
            let (g, cubes) = partition(&v, [16, 32, 16]).unwrap();
            let tagged = g.origins().iter().copied().zip(cubes).collect();
            prop_assert_eq!(assemble(&g, tagged).unwrap(), v);
        }
    }
}
