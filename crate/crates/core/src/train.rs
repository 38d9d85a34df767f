//! Weighted cross-entropy training with SGD, momentum, weight decay and
//! polynomial learning-rate decay.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::arch::{argmax_labels, ArchError, ForwardMode, Network, NetworkSpec};
use crate::nn::{NnError, ParamKind, ParamStore, Tape, Tensor, BN_MOMENTUM};
use crate::pipeline::{Confusion, IouScores, PipelineError};
use crate::scalar::Real;
use crate::volume::{LabelVolume, Volume};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("sample {index}: image extent {image:?} differs from label extent {labels:?}")]
    SampleExtent {
        index: usize,
        image: [usize; 3],
        labels: [usize; 3],
    },
    #[error("max_iter must be positive")]
    ZeroMaxIter,
    #[error("iteration {iter} beyond max_iter {max_iter}")]
    IterationRange { iter: usize, max_iter: usize },
    #[error("{expected} gradients expected, got {actual}")]
    GradientCount { expected: usize, actual: usize },
    #[error("gradient of {param} has shape {actual:?}, parameter has {expected:?}")]
    GradientShape {
        param: String,
        expected: [usize; 5],
        actual: [usize; 5],
    },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("observer: {0}")]
    Observer(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Cubes per iteration; a value above the dataset size gives one batch
    /// per epoch.
    pub batch_size: usize,
    /// Loss weights for background and fiber.
    pub class_weights: [f64; 2],
    pub poly_power: f64,
    pub seed: u64,
    /// Share of cubes held out when no validation split is supplied.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            class_weights: [1.0, 5.0],
            poly_power: 0.9,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !pos(self.base_lr) || !pos(self.poly_power) {
            return bad("base_lr and poly_power must be positive");
        }
        if !nonneg(self.momentum) || self.momentum >= 1.0 || !nonneg(self.weight_decay) {
            return bad("momentum must lie in [0, 1) and weight_decay be non-negative");
        }
        if !self.class_weights.iter().all(|&w| pos(w)) {
            return bad("class weights must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Optimizer state carried across iterations.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub iteration: usize,
    /// One buffer per parameter store entry; buffers of non-trainable
    /// entries stay zero.
    pub velocity: Vec<Tensor<T>>,
    pub rng: ChaCha8Rng,
    pub best_val_miou: f64,
}

impl<T: Real> TrainState<T> {
    pub fn new(store: &ParamStore<T>, seed: u64) -> Self {
        Self {
            iteration: 0,
            velocity: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            best_val_miou: f64::NEG_INFINITY,
        }
    }
}

/// Weighted cross-entropy of `b x 2 x ...` logits against per-voxel labels,
/// normalized by the summed weights of the labels present.
pub fn weighted_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[u8], weights: [f64; 2]) -> Result<T, TrainError> {
    let mut tape = Tape::new();
    let x = tape.input(logits.clone(), false);
    let loss = tape.weighted_cross_entropy(x, labels, &weights.map(T::lit))?;
    Ok(tape.value(loss).item()?)
}

/// `base_lr * (1 - iter / max_iter) ^ poly_power`.
pub fn poly_lr(iter: usize, max_iter: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if max_iter == 0 {
        return Err(TrainError::ZeroMaxIter);
    }
    if iter > max_iter {
        return Err(TrainError::IterationRange { iter, max_iter });
    }
    Ok(cfg.base_lr * (1.0 - iter as f64 / max_iter as f64).powf(cfg.poly_power))
}

/// `v = momentum * v + g + weight_decay * p; p -= lr * v` for every
/// trainable entry. Gradients are checked before anything is modified.
pub fn sgd_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut TrainState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.len() != store.len() || state.velocity.len() != store.len() {
        return Err(TrainError::GradientCount {
            expected: store.len(),
            actual: grads.len().min(state.velocity.len()),
        });
    }
    for (p, g) in store.iter().zip(grads) {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        if g.shape() != p.value.shape() {
            return Err(TrainError::GradientShape {
                param: p.name.clone(),
                expected: p.value.shape(),
                actual: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(p.name.clone()));
        }
    }
    let (mu, wd, lr) = (T::lit(cfg.momentum), T::lit(cfg.weight_decay), T::lit(lr));
    for ((p, g), v) in store.iter_mut().zip(grads).zip(&mut state.velocity) {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        for ((w, &g), v) in p.value.as_mut_slice().iter_mut().zip(g.as_slice()).zip(v.as_mut_slice()) {
            *v = mu * *v + g + wd * *w;
            *w -= lr * *v;
        }
    }
    state.iteration += 1;
    Ok(())
}

/// One training cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Volume<T>,
    pub labels: LabelVolume,
}

/// Seeded split of `n` items into (train, validation) index lists, each
/// sorted. At least one item stays in training.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut val = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: usize,
    pub mean_loss: f64,
    /// Scores pooled over all validation voxels, if a split exists.
    pub validation: Option<IouScores>,
}

pub enum FitEvent<'a, T> {
    Iteration(IterationRecord),
    Epoch {
        record: EpochRecord,
        network: &'a Network<T>,
        state: &'a TrainState<T>,
    },
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub network: Network<T>,
    pub state: TrainState<T>,
    pub epochs: Vec<EpochRecord>,
    pub iterations: Vec<IterationRecord>,
}

fn check_samples<T: Copy>(data: &[Sample<T>]) -> Result<(), TrainError> {
    for (index, s) in data.iter().enumerate() {
        if s.image.dims() != s.labels.dims() {
            return Err(TrainError::SampleExtent {
                index,
                image: s.image.dims(),
                labels: s.labels.dims(),
            });
        }
    }
    Ok(())
}

fn batch<T: Real>(data: &[Sample<T>], idx: &[usize]) -> Result<(Tensor<T>, Vec<u8>), TrainError> {
    let images: Vec<&Volume<T>> = idx.iter().map(|&i| &data[i].image).collect();
    let x = Tensor::stack(&images)?;
    let labels = idx.iter().flat_map(|&i| data[i].labels.as_slice().iter().copied()).collect();
    Ok((x, labels))
}

/// IoU pooled over every voxel of `data`, using running batch-norm
/// statistics.
pub fn evaluate<T: Real>(network: &Network<T>, data: &[Sample<T>]) -> Result<IouScores, TrainError> {
    let mut c = Confusion::default();
    for s in data {
        let logits = network.predict(Tensor::from_volume(&s.image))?;
        c.add(&argmax_labels(&logits, 0), &s.labels)?;
    }
    Ok(c.scores())
}

/// Trains a freshly built network. Batches follow a per-epoch seeded
/// shuffle of `train`; the observer sees every iteration and every finished
/// epoch and may abort by returning an error.
pub fn fit<T: Real>(
    spec: &NetworkSpec,
    train: &[Sample<T>],
    validation: &[Sample<T>],
    cfg: &TrainConfig,
    mut observer: impl FnMut(FitEvent<'_, T>) -> Result<(), String>,
) -> Result<FitOutcome<T>, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_samples(train)?;
    check_samples(validation)?;
    let mut network = Network::<T>::build(spec, cfg.seed)?;
    let mut state = TrainState::new(network.params(), cfg.seed);
    let weights = cfg.class_weights.map(T::lit);
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let max_iter = per_epoch * cfg.epochs;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut iterations = Vec::with_capacity(max_iter);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut state.rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = poly_lr(state.iteration, max_iter, cfg)?;
            let (x, labels) = batch(train, chunk)?;
            let mut tape = Tape::new();
            let x = tape.input(x, false);
            let out = network.forward(&mut tape, x, ForwardMode::Train)?;
            let loss = tape.weighted_cross_entropy(out.logits, &labels, &weights)?;
            let loss_value = tape.value(loss).item()?.as_f64();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss(state.iteration));
            }
            let grads = tape.backward(loss)?.into_param_grads(network.params());
            sgd_step(network.params_mut(), &grads, &mut state, lr, cfg)?;
            network.apply_running_updates(&out.running, BN_MOMENTUM);
            total += loss_value;
            let rec = IterationRecord {
                epoch,
                iteration: state.iteration,
                lr,
                loss: loss_value,
            };
            iterations.push(rec);
            observer(FitEvent::Iteration(rec)).map_err(TrainError::Observer)?;
        }
        let validation_scores = if validation.is_empty() {
            None
        } else {
            Some(evaluate(&network, validation)?)
        };
        if let Some(s) = validation_scores {
            state.best_val_miou = state.best_val_miou.max(s.mean);
        }
        let record = EpochRecord {
            epoch,
            iterations: per_epoch,
            mean_loss: total / per_epoch as f64,
            validation: validation_scores,
        };
        epochs.push(record);
        observer(FitEvent::Epoch {
            record,
            network: &network,
            state: &state,
        })
        .map_err(TrainError::Observer)?;
    }
    Ok(FitOutcome {
        network,
        state,
        epochs,
        iterations,
    })
}

/// Trailing mean over `window` losses, defined from the first full window.
pub fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || losses.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(losses.len() + 1 - window);
    let mut acc: f64 = losses[..window].iter().sum();
    out.push(acc / window as f64);
    for i in window..losses.len() {
        acc += losses[i] - losses[i - window];
        out.push(acc / window as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::DualStructure;
    use crate::nn::Param;
    use alloc::vec;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn cross_entropy_examples() {
        let l = weighted_cross_entropy(&Tensor::<f64>::zeros([1, 2, 1, 1, 4]), &[0; 4], [1.0, 5.0]).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        let l = weighted_cross_entropy(&Tensor::<f64>::zeros([1, 2, 1, 1, 4]), &[0, 1, 0, 1], [1.0, 5.0]).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        let confident = Tensor::from_vec([1, 2, 1, 1, 2], vec![20.0, -20.0, -20.0, 20.0]).unwrap();
        assert!(weighted_cross_entropy::<f64>(&confident, &[0, 1], [1.0, 5.0]).unwrap() < 1e-3);
        assert!(matches!(
            weighted_cross_entropy::<f64>(&confident, &[0, 2], [1.0, 5.0]),
            Err(TrainError::Nn(NnError::LabelOutOfRange { index: 1, value: 2 }))
        ));
    }

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(0, 100, &cfg()).unwrap(), 0.1);
        assert_eq!(poly_lr(100, 100, &cfg()).unwrap(), 0.0);
        assert!((poly_lr(50, 100, &cfg()).unwrap() - 0.05359).abs() < 1e-5);
        assert_eq!(poly_lr(0, 0, &cfg()), Err(TrainError::ZeroMaxIter));
        assert!(poly_lr(101, 100, &cfg()).is_err());
    }

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v), ParamKind::Trainable);
        s.add("running", Tensor::scalar(v), ParamKind::Buffer);
        s
    }

    #[test]
    fn sgd_examples() {
        let plain = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..cfg()
        };
        let mut s = scalar_store(1.0);
        let mut st = TrainState::new(&s, 0);
        sgd_step(&mut s, &[Tensor::scalar(0.0), Tensor::scalar(0.0)], &mut st, 0.1, &plain).unwrap();
        assert_eq!(s.iter().next().unwrap().value.as_slice(), &[1.0]);
        sgd_step(&mut s, &[Tensor::scalar(1.0), Tensor::scalar(1.0)], &mut st, 0.1, &plain).unwrap();
        assert!((s.iter().next().unwrap().value.as_slice()[0] - 0.9).abs() < 1e-15);
        assert_eq!(s.iter().nth(1).unwrap().value.as_slice(), &[1.0]);

        let mom = TrainConfig { weight_decay: 0.0, ..cfg() };
        let mut s = scalar_store(1.0);
        let mut st = TrainState::new(&s, 0);
        for _ in 0..2 {
            sgd_step(&mut s, &[Tensor::scalar(1.0), Tensor::scalar(0.0)], &mut st, 0.1, &mom).unwrap();
        }
        assert!((1.0 - s.iter().next().unwrap().value.as_slice()[0] - 0.29).abs() < 1e-12);
        assert_eq!(st.iteration, 2);
    }

    #[test]
    fn zero_lr_is_bitwise_noop() {
        let mut net = Network::<f32>::build(&NetworkSpec::published(DualStructure::Di, Some("haar")).unwrap(), 2).unwrap();
        let before: Vec<Param<f32>> = net.params().iter().cloned().collect();
        let grads: Vec<_> = net.params().iter().map(|p| p.value.map(|v| v * 3.0 + 1.0)).collect();
        let mut st = TrainState::new(net.params(), 0);
        sgd_step(net.params_mut(), &grads, &mut st, 0.0, &cfg()).unwrap();
        for (a, b) in before.iter().zip(net.params().iter()) {
            assert!(a.value.as_slice().iter().zip(b.value.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut st = TrainState::new(&s, 0);
        let err = sgd_step(&mut s, &[Tensor::scalar(f64::NAN), Tensor::scalar(0.0)], &mut st, 0.1, &cfg()).unwrap_err();
        assert_eq!(err, TrainError::NonFiniteGradient("w".into()));
        assert_eq!(s.iter().next().unwrap().value.as_slice(), &[1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(TrainConfig { base_lr: 0.0, ..cfg() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..cfg() }.validate().is_err());
        assert!(TrainConfig { class_weights: [1.0, -1.0], ..cfg() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn validation_split_is_seeded_partition() {
        let (t, v) = split_validation(50, 0.1, 3);
        assert_eq!((t.len(), v.len()), (45, 5));
        let mut all: Vec<_> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_validation(50, 0.1, 3), (t, v));
        assert_eq!(split_validation(1, 0.5, 0).0, vec![0]);
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smoothed(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(smoothed(&[1.0], 2).is_empty());
    }

    #[test]
    fn fit_rejects_empty_dataset() {
        let spec = NetworkSpec::published(DualStructure::Pu, None).unwrap();
        let r = fit::<f32>(&spec, &[], &[], &cfg(), |_| Ok(()));
        assert!(matches!(r, Err(TrainError::EmptyDataset)));
    }
}
