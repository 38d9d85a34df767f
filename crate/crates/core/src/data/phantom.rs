#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::raster::rasterize;
use super::swc::{SwcMorphology, SwcNode};
use crate::scalar::Real;
use crate::volume::{LabelVolume, Volume};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhantomError {
    #[error("phantom extents {0:?} contain a zero")]
    ZeroExtent([usize; 3]),
    #[error("radius range ({0}, {1}) must satisfy 0 < min <= max")]
    RadiusRange(f64, f64),
    #[error("{name} must be finite and non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
}

/// Synthetic volume of smooth random tubes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub tubes: usize,
    pub radius: (f64, f64),
    pub foreground: f64,
    pub background: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f64,
    /// Fraction of voxels replaced by salt (foreground) or pepper
    /// (background) values.
    pub impulse_fraction: f64,
    /// Number of short image stretches reset to background while the labels
    /// keep the tube, imitating disconnected fibers.
    pub gaps: usize,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [32, 128, 128],
            tubes: 4,
            radius: (1.0, 2.5),
            foreground: 1.0,
            background: 0.0,
            noise_sigma: 0.0,
            impulse_fraction: 0.0,
            gaps: 0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.dims.contains(&0) {
            return Err(PhantomError::ZeroExtent(self.dims));
        }
        let (lo, hi) = self.radius;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(PhantomError::RadiusRange(lo, hi));
        }
        for (name, value) in [
            ("noise_sigma", self.noise_sigma),
            ("impulse_fraction", self.impulse_fraction),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(PhantomError::Negative { name, value });
            }
        }
        if self.impulse_fraction > 1.0 {
            return Err(PhantomError::Negative {
                name: "impulse_fraction",
                value: self.impulse_fraction,
            });
        }
        Ok(())
    }
}

/// Vertex spacing of the tube polylines, in voxels.
const STEP: f64 = 6.0;
/// Stream for noise draws, kept apart from geometry so labels do not depend
/// on the noise settings.
const NOISE_STREAM: u64 = 1;

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Random polyline tubes through the volume. Depth excursions are damped so
/// tubes run mostly within planes, like neurites in a thin slab.
fn tube_geometry(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> SwcMorphology {
    let d = cfg.dims.map(|v| v as f64);
    let span = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let steps = (span / STEP).ceil() as usize / 2 + 1;
    let wiggle = Normal::new(0.0, 0.35).expect("positive std");
    let mut nodes: Vec<SwcNode> = Vec::new();
    for _ in 0..cfg.tubes {
        let start = [
            rng.random_range(0.0..d[0]),
            rng.random_range(0.0..d[1]),
            rng.random_range(0.0..d[2]),
        ];
        let dir = unit([
            0.3 * rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]);
        // Walk both ways from the start point, then join the halves.
        let mut halves: [Vec<([f64; 3], f64)>; 2] = [Vec::new(), Vec::new()];
        for (h, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut p = start;
            let mut v = [dir[0] * sign, dir[1] * sign, dir[2] * sign];
            for _ in 0..steps {
                v = unit([
                    v[0] + 0.3 * wiggle.sample(rng),
                    v[1] + wiggle.sample(rng),
                    v[2] + wiggle.sample(rng),
                ]);
                p = [p[0] + STEP * v[0], p[1] + STEP * v[1], p[2] + STEP * v[2]];
                halves[h].push((p, rng.random_range(cfg.radius.0..=cfg.radius.1)));
            }
        }
        let [fwd, back] = halves;
        let r0 = rng.random_range(cfg.radius.0..=cfg.radius.1);
        let chain = back.into_iter().rev().chain(core::iter::once((start, r0))).chain(fwd);
        let mut parent = -1;
        for (p, radius) in chain {
            let id = nodes.len() as i64 + 1;
            nodes.push(SwcNode {
                id,
                type_code: 3,
                x: p[2],
                y: p[1],
                z: p[0],
                radius,
                parent,
            });
            parent = id;
        }
    }
    SwcMorphology::new(nodes).expect("generated chains are valid trees")
}

/// Image and labels of a seeded tube phantom. Labels are the rasterized
/// tubes; noise and gaps only touch the image.
pub fn generate_phantom<T: Real>(cfg: &PhantomConfig) -> Result<(Volume<T>, LabelVolume), PhantomError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let morph = tube_geometry(cfg, &mut rng);
    let labels = rasterize(&morph, cfg.dims);
    let mut image: Vec<f64> = labels
        .as_slice()
        .iter()
        .map(|&l| if l == 1 { cfg.foreground } else { cfg.background })
        .collect();

    let nodes = morph.nodes();
    if !nodes.is_empty() {
        let [dz, dy, dx] = cfg.dims;
        for _ in 0..cfg.gaps {
            let n = &nodes[rng.random_range(0..nodes.len())];
            let reach = cfg.radius.1 + 1.0;
            let c = n.zyx();
            for z in 0..dz {
                for y in 0..dy {
                    for x in 0..dx {
                        let dd = (z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2);
                        if dd <= reach * reach {
                            image[(z * dy + y) * dx + x] = cfg.background;
                        }
                    }
                }
            }
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(NOISE_STREAM);
    if cfg.noise_sigma > 0.0 {
        let g = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        for v in image.iter_mut() {
            *v += g.sample(&mut noise_rng);
        }
    }
    if cfg.impulse_fraction > 0.0 {
        for v in image.iter_mut() {
            if noise_rng.random_bool(cfg.impulse_fraction) {
                *v = if noise_rng.random_bool(0.5) { cfg.foreground } else { cfg.background };
            }
        }
    }
    let image = Volume::from_vec(cfg.dims, image.into_iter().map(T::lit).collect()).expect("extent checked");
    Ok((image, labels))
}
