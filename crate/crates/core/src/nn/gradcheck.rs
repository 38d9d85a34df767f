//! Central finite-difference checks of tape gradients.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NnError, NodeId, Tape, Tensor};

/// Worst disagreement over the sampled coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over
    /// coordinates where either side exceeds `floor`.
    pub worst_relative: f64,
    pub worst_absolute: f64,
}

impl GradCheck {
    pub(crate) fn new() -> Self {
        Self {
            checked: 0,
            worst_relative: 0.0,
            worst_absolute: 0.0,
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst_relative <= tolerance
    }

    pub(crate) fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        self.worst_absolute = self.worst_absolute.max(diff);
        let scale = analytic.abs().max(numeric.abs());
        if scale > floor {
            self.worst_relative = self.worst_relative.max(diff / scale);
        }
    }
}

/// Settings shared by the checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    pub step: f64,
    /// Coordinates sampled per input tensor (all when larger than the
    /// tensor).
    pub samples: usize,
    /// Magnitudes below this are compared in absolute terms only.
    pub floor: f64,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: 24,
            floor: 1e-7,
            seed: 0,
        }
    }
}

pub(crate) fn sample_indices(len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    (0..count).map(|_| rng.random_range(0..len)).collect()
}

/// Compares `d loss / d input` for every tensor in `inputs`, where `build`
/// records a scalar loss from the input leaves.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], build: F, cfg: CheckConfig) -> Result<GradCheck, NnError>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId, NnError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| tape.input(v.clone(), false)).collect();
        let loss = build(&mut tape, &ids)?;
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| tape.input(v.clone(), true)).collect();
    let loss = build(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheck::new();
    let mut values = inputs.to_vec();
    for (k, id) in ids.iter().enumerate() {
        let zero = Tensor::zeros(inputs[k].shape());
        let g = grads.wrt(*id).unwrap_or(&zero);
        for i in sample_indices(inputs[k].len(), cfg.samples, &mut rng) {
            let orig = values[k].as_slice()[i];
            values[k].as_mut_slice()[i] = orig + cfg.step;
            let up = eval(&values)?;
            values[k].as_mut_slice()[i] = orig - cfg.step;
            let down = eval(&values)?;
            values[k].as_mut_slice()[i] = orig;
            report.record(g.as_slice()[i], (up - down) / (2.0 * cfg.step), cfg.floor);
        }
    }
    Ok(report)
}

/// Deterministic pseudo-random tensor with entries in `[-1, 1)`.
pub fn random_tensor(shape: [usize; 5], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("length matches")
}
