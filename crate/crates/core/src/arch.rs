//! The seven encoder-decoder segmentation networks.
//!
//! Every network nests `levels` dual structures around a two-convolution
//! bottom block. A dual structure pairs a forward process (two
//! conv-BN-ReLU blocks, then down-sampling) with a reverse process
//! (up-sampling, then two conv-BN-ReLU blocks); its branch path carries
//! pooling indices, a skip copy or the DWT high-frequency subbands.
//!
//! | structure | down | up | branch |
//! |---|---|---|---|
//! | PU   | max-pool   | max-unpool  | pooling indices |
//! | PDc  | max-pool   | deconv      | skip copy (concatenated) |
//! | ScIn | strided conv | trilinear | skip copy (concatenated) |
//! | DDc  | DWT (keep lll) | deconv  | skip copy (concatenated) |
//! | DIn  | DWT (keep lll) | trilinear | skip copy (concatenated) |
//! | DI   | DWT        | IDWT        | high-frequency subbands |
//! | DIDn | DWT        | IDWT        | hard-shrunk high-frequency subbands |
//!
//! Body convolutions are 3x3x3 with unit padding; the head is a 1x1x1
//! convolution producing one logit per class (0 background, 1 fiber).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::filters::{FilterBank, FilterError};
use crate::nn::gradcheck::{sample_indices, CheckConfig, GradCheck};
use crate::nn::{BatchNormMode, BatchStats, NnError, NodeId, ParamId, ParamKind, ParamStore, Tape, Tensor};
use crate::scalar::Real;
use crate::transform::ShrinkConfig;
use crate::volume::{LabelVolume, Volume};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchError {
    #[error("unknown dual structure `{0}` (valid: PU, PDc, ScIn, DDc, DIn, DI, DIDn)")]
    UnknownStructure(String),
    #[error("{0} needs a wavelet")]
    WaveletRequired(DualStructure),
    #[error("{0} does not use a wavelet")]
    WaveletNotAllowed(DualStructure),
    #[error(transparent)]
    Wavelet(#[from] FilterError),
    #[error("invalid channel schedule: {0}")]
    ChannelSchedule(String),
    #[error("spatial extent {spatial:?} is not divisible by {factor}")]
    IndivisibleExtent { spatial: [usize; 3], factor: usize },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DualStructure {
    Pu,
    Pdc,
    ScIn,
    Ddc,
    Din,
    Di,
    Didn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Downsample {
    MaxPool,
    StridedConv,
    Dwt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsample {
    MaxUnpool,
    Deconv,
    Interpolate,
    Idwt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchPayload {
    PoolIndices,
    SkipCopy,
    HighFrequency,
    HighFrequencyDenoised,
}

impl DualStructure {
    pub const ALL: [DualStructure; 7] = [
        DualStructure::Pu,
        DualStructure::Pdc,
        DualStructure::ScIn,
        DualStructure::Ddc,
        DualStructure::Din,
        DualStructure::Di,
        DualStructure::Didn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DualStructure::Pu => "PU",
            DualStructure::Pdc => "PDc",
            DualStructure::ScIn => "ScIn",
            DualStructure::Ddc => "DDc",
            DualStructure::Din => "DIn",
            DualStructure::Di => "DI",
            DualStructure::Didn => "DIDn",
        }
    }

    pub fn uses_wavelet(self) -> bool {
        matches!(self, DualStructure::Ddc | DualStructure::Din | DualStructure::Di | DualStructure::Didn)
    }

    pub fn downsample(self) -> Downsample {
        match self {
            DualStructure::Pu | DualStructure::Pdc => Downsample::MaxPool,
            DualStructure::ScIn => Downsample::StridedConv,
            _ => Downsample::Dwt,
        }
    }

    pub fn upsample(self) -> Upsample {
        match self {
            DualStructure::Pu => Upsample::MaxUnpool,
            DualStructure::Pdc | DualStructure::Ddc => Upsample::Deconv,
            DualStructure::ScIn | DualStructure::Din => Upsample::Interpolate,
            DualStructure::Di | DualStructure::Didn => Upsample::Idwt,
        }
    }

    pub fn branch(self) -> BranchPayload {
        match self {
            DualStructure::Pu => BranchPayload::PoolIndices,
            DualStructure::Pdc | DualStructure::ScIn | DualStructure::Ddc | DualStructure::Din => BranchPayload::SkipCopy,
            DualStructure::Di => BranchPayload::HighFrequency,
            DualStructure::Didn => BranchPayload::HighFrequencyDenoised,
        }
    }

    fn concatenates(self) -> bool {
        self.branch() == BranchPayload::SkipCopy
    }
}

impl fmt::Display for DualStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DualStructure {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| ArchError::UnknownStructure(s.to_string()))
    }
}

/// Architecture description. Channel pairs follow the configuration table:
/// encoder pairs are the input channels of a level's two convolutions
/// (finest level first), decoder pairs are their output channels (deepest
/// level first).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub dual_structure: DualStructure,
    pub wavelet: Option<String>,
    pub levels: usize,
    pub encoder_channels: Vec<(usize, usize)>,
    pub bottom_channels: (usize, usize),
    pub decoder_channels: Vec<(usize, usize)>,
    pub classes: usize,
    /// Hard-shrink threshold of the DIDn denoising block.
    pub shrink_threshold: f64,
}

impl NetworkSpec {
    /// The published four-level channel schedule.
    pub fn published(dual_structure: DualStructure, wavelet: Option<&str>) -> Result<Self, ArchError> {
        let spec = Self {
            dual_structure,
            wavelet: wavelet.map(str::to_string),
            levels: 4,
            encoder_channels: vec![(1, 4), (4, 8), (8, 16), (16, 32)],
            bottom_channels: (32, 32),
            decoder_channels: vec![(32, 16), (16, 8), (8, 4), (4, 4)],
            classes: 2,
            shrink_threshold: ShrinkConfig::DEFAULT_THRESHOLD,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let ds = self.dual_structure;
        match (&self.wavelet, ds.uses_wavelet()) {
            (None, true) => return Err(ArchError::WaveletRequired(ds)),
            (Some(_), false) => return Err(ArchError::WaveletNotAllowed(ds)),
            (Some(w), true) => {
                FilterBank::builtin(w)?;
            }
            (None, false) => {}
        }
        let bad = |m: String| Err(ArchError::ChannelSchedule(m));
        if self.levels == 0 || self.encoder_channels.len() != self.levels || self.decoder_channels.len() != self.levels {
            return bad(format!(
                "{} levels need {0} encoder and {0} decoder pairs",
                self.levels
            ));
        }
        if self.classes < 2 {
            return bad("at least two classes".into());
        }
        if !(self.shrink_threshold >= 0.0 && self.shrink_threshold.is_finite()) {
            return bad(format!("shrink threshold {}", self.shrink_threshold));
        }
        let all = self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain(core::iter::once(&self.bottom_channels));
        if all.clone().any(|&(a, b)| a == 0 || b == 0) {
            return bad("zero channels".into());
        }
        for l in 0..self.levels {
            let out = self.encoder_features(l);
            let next_in = if l + 1 < self.levels {
                self.encoder_channels[l + 1].0
            } else {
                self.bottom_channels.0
            };
            if out != next_in {
                return bad(format!("encoder level {} emits {out} channels, next stage expects {next_in}", l + 1));
            }
            if !ds.concatenates() {
                let mainstream = self.decoder_input(l);
                if mainstream != out {
                    return bad(format!(
                        "{ds} level {}: up-sampled mainstream has {mainstream} channels, branch carries {out}",
                        l + 1
                    ));
                }
            }
        }
        Ok(())
    }

    /// Channels of the level-`l` encoder output (0 = finest level).
    fn encoder_features(&self, l: usize) -> usize {
        self.encoder_channels[l].1
    }

    /// Output pair of the decoder at level `l` (0 = finest level).
    fn decoder_pair(&self, l: usize) -> (usize, usize) {
        self.decoder_channels[self.levels - 1 - l]
    }

    /// Channels of the mainstream arriving at the decoder of level `l`.
    fn decoder_input(&self, l: usize) -> usize {
        if l + 1 == self.levels {
            self.bottom_channels.1
        } else {
            self.decoder_pair(l + 1).1
        }
    }

    pub fn filter_bank(&self) -> Result<Option<FilterBank>, ArchError> {
        Ok(match &self.wavelet {
            Some(w) => Some(FilterBank::builtin(w)?),
            None => None,
        })
    }

    /// `key=value` text form, one key per line.
    pub fn to_config(&self) -> String {
        let pairs = |v: &[(usize, usize)]| {
            v.iter()
                .map(|(a, b)| format!("{a}:{b}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "arch={}\nwavelet={}\nlevels={}\nencoder_channels={}\nbottom_channels={}:{}\ndecoder_channels={}\nclasses={}\nshrink_threshold={}\n",
            self.dual_structure,
            self.wavelet.as_deref().unwrap_or("none"),
            self.levels,
            pairs(&self.encoder_channels),
            self.bottom_channels.0,
            self.bottom_channels.1,
            pairs(&self.decoder_channels),
            self.classes,
            self.shrink_threshold,
        )
    }

    /// Parses [`NetworkSpec::to_config`] output. Missing keys take the
    /// published defaults; `#` starts a comment line.
    pub fn from_config(text: &str) -> Result<Self, ArchError> {
        let mut arch = None;
        let mut wavelet: Option<Option<String>> = None;
        let mut rest: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| ArchError::Config {
                line: i + 1,
                message: message.to_string(),
            };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "arch" => arch = Some(v.parse::<DualStructure>()?),
                "wavelet" => wavelet = Some((v != "none").then(|| v.to_string())),
                _ => rest.push((i + 1, k.to_string(), v.to_string())),
            }
        }
        let arch = arch.ok_or(ArchError::Config {
            line: 0,
            message: "missing arch".into(),
        })?;
        let wavelet = wavelet.unwrap_or_else(|| arch.uses_wavelet().then(|| "haar".to_string()));
        let mut spec = Self::published(arch, wavelet.as_deref()).or_else(|e| match e {
            ArchError::ChannelSchedule(_) => unreachable!("published schedule is valid"),
            other => Err(other),
        })?;
        for (line, k, v) in rest {
            let err = |message: String| ArchError::Config { line, message };
            let num = |s: &str| s.trim().parse::<usize>().map_err(|_| err(format!("bad integer `{s}`")));
            let pair = |s: &str| -> Result<(usize, usize), ArchError> {
                let (a, b) = s.split_once(':').ok_or_else(|| err(format!("bad pair `{s}`")))?;
                Ok((num(a)?, num(b)?))
            };
            match k.as_str() {
                "levels" => spec.levels = num(&v)?,
                "encoder_channels" => spec.encoder_channels = v.split(',').map(pair).collect::<Result<_, _>>()?,
                "decoder_channels" => spec.decoder_channels = v.split(',').map(pair).collect::<Result<_, _>>()?,
                "bottom_channels" => spec.bottom_channels = pair(&v)?,
                "classes" => spec.classes = num(&v)?,
                "shrink_threshold" => {
                    spec.shrink_threshold = v.parse().map_err(|_| err(format!("bad number `{v}`")))?
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// One entry of [`describe`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel extent per axis, 0 for parameter-free operations.
    pub kernel: usize,
    /// Output spatial extent for the described input.
    pub output: [usize; 3],
    pub params: usize,
}

impl fmt::Display for LayerInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = if self.kernel > 0 {
            format!("{0}x{0}x{0}", self.kernel)
        } else {
            "-".to_string()
        };
        write!(
            f,
            "{:<18} {:<16} {:>3} -> {:<3} kernel {:<6} out {}x{}x{}  params {}",
            self.name,
            self.kind,
            self.in_channels,
            self.out_channels,
            k,
            self.output[0],
            self.output[1],
            self.output[2],
            self.params
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    conv: ConvIds,
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone)]
struct Level {
    enc: [BlockIds; 2],
    strided: Option<ConvIds>,
    deconv: Option<ConvIds>,
    dec: [BlockIds; 2],
}

#[derive(Debug, Clone)]
struct Layout {
    levels: Vec<Level>,
    bottom: [BlockIds; 2],
    head: ConvIds,
}

/// How a forward pass treats batch norm and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch statistics, parameter gradients recorded.
    Train,
    /// Running statistics, parameter gradients recorded.
    Eval,
    /// Running statistics, parameters recorded as constants.
    Inference,
}

/// Batch statistics collected by a training forward pass.
#[derive(Debug, Clone)]
pub struct RunningUpdate<T> {
    mean: ParamId,
    var: ParamId,
    stats: BatchStats<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: NodeId,
    pub running: Vec<RunningUpdate<T>>,
}

/// A built network: immutable wiring plus its parameter store.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    bank: Option<FilterBank>,
    store: ParamStore<T>,
    layout: Layout,
}

/// Layer enumeration shared by [`Network::build`] and [`describe`] so the
/// report and the parameter store cannot drift apart.
struct Planner<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    report: Vec<LayerInfo>,
}

impl<T: Real> Planner<'_, T> {
    fn conv(&mut self, name: &str, kind: &'static str, cin: usize, cout: usize, k: usize, output: [usize; 3], transposed: bool) -> ConvIds {
        let fan_in = (cin * k * k * k) as f64;
        let normal = Normal::new(0.0, libm_sqrt(2.0 / fan_in)).expect("positive std");
        let shape = if transposed { [cin, cout, k, k, k] } else { [cout, cin, k, k, k] };
        let count: usize = shape.iter().product();
        let w: Vec<T> = (0..count).map(|_| T::lit(normal.sample(&mut *self.rng))).collect();
        let w = self.store.add(
            format!("{name}.weight"),
            Tensor::from_vec(shape, w).expect("shape matches"),
            ParamKind::Trainable,
        );
        let b = self
            .store
            .add(format!("{name}.bias"), Tensor::zeros([cout, 1, 1, 1, 1]), ParamKind::Trainable);
        self.report.push(LayerInfo {
            name: name.to_string(),
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            output,
            params: count + cout,
        });
        ConvIds { w, b }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, output: [usize; 3]) -> BlockIds {
        let conv = self.conv(name, "conv+bn+relu", cin, cout, 3, output, false);
        let ones = Tensor::filled([cout, 1, 1, 1, 1], T::one());
        let gamma = self.store.add(format!("{name}.bn.weight"), ones.clone(), ParamKind::Trainable);
        let beta = self
            .store
            .add(format!("{name}.bn.bias"), Tensor::zeros([cout, 1, 1, 1, 1]), ParamKind::Trainable);
        let mean = self
            .store
            .add(format!("{name}.bn.running_mean"), Tensor::zeros([cout, 1, 1, 1, 1]), ParamKind::Buffer);
        let var = self.store.add(format!("{name}.bn.running_var"), ones, ParamKind::Buffer);
        self.report.last_mut().expect("conv just pushed").params += 2 * cout;
        BlockIds {
            conv,
            gamma,
            beta,
            mean,
            var,
        }
    }

    fn op(&mut self, name: String, kind: &'static str, cin: usize, cout: usize, output: [usize; 3]) {
        self.report.push(LayerInfo {
            name,
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel: 0,
            output,
            params: 0,
        });
    }
}

fn libm_sqrt(v: f64) -> f64 {
    num_traits::Float::sqrt(v)
}

fn plan<T: Real>(spec: &NetworkSpec, input: [usize; 3], seed: u64) -> Result<(ParamStore<T>, Layout, Vec<LayerInfo>), ArchError> {
    spec.validate()?;
    let ds = spec.dual_structure;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Planner {
        store: &mut store,
        rng: &mut rng,
        report: Vec::new(),
    };
    let at = |l: usize| [input[0] >> l, input[1] >> l, input[2] >> l];

    let mut enc = Vec::with_capacity(spec.levels);
    for l in 0..spec.levels {
        let (a, b) = spec.encoder_channels[l];
        let c0 = p.block(&format!("enc{}.conv1", l + 1), a, b, at(l));
        let c1 = p.block(&format!("enc{}.conv2", l + 1), b, b, at(l));
        let strided = match ds.downsample() {
            Downsample::StridedConv => {
                Some(p.conv(&format!("enc{}.down", l + 1), "strided conv", b, b, 2, at(l + 1), false))
            }
            Downsample::MaxPool => {
                p.op(format!("enc{}.down", l + 1), "max-pool", b, b, at(l + 1));
                None
            }
            Downsample::Dwt => {
                p.op(format!("enc{}.down", l + 1), "dwt", b, b, at(l + 1));
                if ds == DualStructure::Didn {
                    p.op(format!("enc{}.denoise", l + 1), "hard shrink", 7 * b, 7 * b, at(l + 1));
                }
                None
            }
        };
        enc.push(([c0, c1], strided));
    }
    let (ba, bb) = spec.bottom_channels;
    let deep = at(spec.levels);
    let bottom = [
        p.block("bottom.conv1", spec.encoder_features(spec.levels - 1), ba, deep),
        p.block("bottom.conv2", ba, bb, deep),
    ];

    let mut levels: Vec<Option<Level>> = vec![None; spec.levels];
    for l in (0..spec.levels).rev() {
        let up_in = spec.decoder_input(l);
        let skip = spec.encoder_features(l);
        let deconv = match ds.upsample() {
            Upsample::Deconv => Some(p.conv(&format!("dec{}.up", l + 1), "deconv", up_in, up_in, 2, at(l), true)),
            Upsample::MaxUnpool => {
                p.op(format!("dec{}.up", l + 1), "max-unpool", up_in, up_in, at(l));
                None
            }
            Upsample::Interpolate => {
                p.op(format!("dec{}.up", l + 1), "trilinear", up_in, up_in, at(l));
                None
            }
            Upsample::Idwt => {
                p.op(format!("dec{}.up", l + 1), "idwt", up_in + 7 * skip, up_in, at(l));
                None
            }
        };
        let cin = if ds.concatenates() {
            p.op(format!("dec{}.concat", l + 1), "concat", skip + up_in, skip + up_in, at(l));
            skip + up_in
        } else {
            up_in
        };
        let (o1, o2) = spec.decoder_pair(l);
        let d0 = p.block(&format!("dec{}.conv1", l + 1), cin, o1, at(l));
        let d1 = p.block(&format!("dec{}.conv2", l + 1), o1, o2, at(l));
        let (e, strided) = enc[l];
        levels[l] = Some(Level {
            enc: e,
            strided,
            deconv,
            dec: [d0, d1],
        });
    }
    let head = p.conv("head", "conv", spec.decoder_pair(0).1, spec.classes, 1, at(0), false);
    let report = p.report;
    let layout = Layout {
        levels: levels.into_iter().map(|l| l.expect("every level planned")).collect(),
        bottom,
        head,
    };
    Ok((store, layout, report))
}

/// Exact number of trainable scalars (conv weights and biases, batch-norm
/// scale and shift).
pub fn count_parameters(spec: &NetworkSpec) -> Result<usize, ArchError> {
    Ok(describe(spec, [32, 128, 128])?.iter().map(|l| l.params).sum())
}

/// Ordered layer report for an input of extent `input` (z, y, x).
pub fn describe(spec: &NetworkSpec, input: [usize; 3]) -> Result<Vec<LayerInfo>, ArchError> {
    let (_, _, report) = plan::<f32>(spec, input, 0)?;
    Ok(report)
}

impl<T: Real> Network<T> {
    /// Builds the network with Kaiming-normal weights drawn from `seed`,
    /// zero biases, unit batch-norm scale.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self, ArchError> {
        let bank = spec.filter_bank()?;
        let (store, layout, _) = plan(spec, [0; 3], seed)?;
        Ok(Self {
            spec: spec.clone(),
            bank,
            store,
            layout,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Records the forward pass of a `b x 1 x d x m x n` input on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, x: NodeId, mode: ForwardMode) -> Result<ForwardOutput<T>, ArchError> {
        let s = tape.value(x).shape();
        let factor = 1usize << self.spec.levels;
        let spatial = [s[2], s[3], s[4]];
        if spatial.iter().any(|v| v % factor != 0) {
            return Err(ArchError::IndivisibleExtent { spatial, factor });
        }
        let mut run = Run {
            net: self,
            tape,
            mode,
            running: Vec::new(),
        };
        let logits = run.network(x)?;
        let running = run.running;
        Ok(ForwardOutput { logits, running })
    }

    /// Folds training batch statistics into the running estimates.
    pub fn apply_running_updates(&mut self, updates: &[RunningUpdate<T>], momentum: f64) {
        let m = T::lit(momentum);
        let keep = T::one() - m;
        for u in updates {
            for (r, &v) in self.store.get_mut(u.mean).as_mut_slice().iter_mut().zip(&u.stats.mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in self.store.get_mut(u.var).as_mut_slice().iter_mut().zip(&u.stats.var) {
                *r = keep * *r + m * v;
            }
        }
    }

    /// Inference logits for a batch.
    pub fn predict(&self, input: Tensor<T>) -> Result<Tensor<T>, ArchError> {
        let mut tape = Tape::new();
        let x = tape.input(input, false);
        let out = self.forward(&mut tape, x, ForwardMode::Inference)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Per-voxel argmax of the logits; ties resolve to background.
    pub fn segment_cube(&self, cube: &Volume<T>) -> Result<LabelVolume, ArchError> {
        let logits = self.predict(Tensor::from_volume(cube))?;
        Ok(argmax_labels(&logits, 0))
    }
}

/// Finite-difference check of every trainable parameter tensor (sampled
/// coordinates) of a 64-bit network, with the weighted cross-entropy of
/// `labels` as loss and batch norm in eval mode.
pub fn check_parameter_gradients(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    labels: &[u8],
    weights: [f64; 2],
    cfg: CheckConfig,
) -> Result<GradCheck, ArchError> {
    let loss_of = |net: &Network<f64>, tape: &mut Tape<f64>| -> Result<NodeId, ArchError> {
        let x = tape.input(input.clone(), false);
        let out = net.forward(tape, x, ForwardMode::Eval)?;
        Ok(tape.weighted_cross_entropy(out.logits, labels, &weights)?)
    };
    let mut tape = Tape::new();
    let loss = loss_of(net, &mut tape)?;
    let grads = tape.backward(loss)?.into_param_grads(net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheck::new();
    let ids: Vec<ParamId> = net.params().ids().collect();
    for id in ids {
        if net.params().param(id).kind != ParamKind::Trainable {
            continue;
        }
        for i in sample_indices(net.params().get(id).len(), cfg.samples, &mut rng) {
            let orig = net.params().get(id).as_slice()[i];
            let mut at = |v: f64| -> Result<f64, ArchError> {
                net.params_mut().get_mut(id).as_mut_slice()[i] = v;
                let mut tape = Tape::new();
                let loss = loss_of(net, &mut tape)?;
                Ok(tape.value(loss).item()?)
            };
            let up = at(orig + cfg.step)?;
            let down = at(orig - cfg.step)?;
            net.params_mut().get_mut(id).as_mut_slice()[i] = orig;
            report.record(grads[id.index()].as_slice()[i], (up - down) / (2.0 * cfg.step), cfg.floor);
        }
    }
    Ok(report)
}

/// Class map of batch item `b`; on ties the lower class index wins.
pub fn argmax_labels<T: Real>(logits: &Tensor<T>, b: usize) -> LabelVolume {
    let p = logits.plane_len();
    let mut out = alloc::vec![0u8; p];
    for c in 1..logits.channels() {
        let plane = logits.plane(b, c);
        for (v, o) in out.iter_mut().enumerate() {
            if plane[v] > logits.plane(b, *o as usize)[v] {
                *o = c as u8;
            }
        }
    }
    Volume::from_vec(logits.spatial(), out).expect("plane matches spatial extent")
}

struct Run<'a, T> {
    net: &'a Network<T>,
    tape: &'a mut Tape<T>,
    mode: ForwardMode,
    running: Vec<RunningUpdate<T>>,
}

impl<T: Real> Run<'_, T> {
    fn param(&mut self, id: ParamId) -> NodeId {
        match self.mode {
            ForwardMode::Inference => self.tape.constant_param(&self.net.store, id),
            _ => self.tape.param(&self.net.store, id),
        }
    }

    fn conv(&mut self, x: NodeId, ids: ConvIds, stride: usize, pad: usize) -> Result<NodeId, ArchError> {
        let w = self.param(ids.w);
        let b = self.param(ids.b);
        Ok(self.tape.conv(x, w, Some(b), stride, pad)?)
    }

    fn block(&mut self, x: NodeId, ids: BlockIds) -> Result<NodeId, ArchError> {
        let h = self.conv(x, ids.conv, 1, 1)?;
        let gamma = self.param(ids.gamma);
        let beta = self.param(ids.beta);
        let store = &self.net.store;
        let mode = match self.mode {
            ForwardMode::Train => BatchNormMode::Train,
            _ => BatchNormMode::Eval {
                mean: store.get(ids.mean).as_slice(),
                var: store.get(ids.var).as_slice(),
            },
        };
        let (h, stats) = self.tape.batchnorm(h, gamma, beta, mode)?;
        if let Some(stats) = stats {
            self.running.push(RunningUpdate {
                mean: ids.mean,
                var: ids.var,
                stats,
            });
        }
        Ok(self.tape.relu(h))
    }

    fn network(&mut self, x: NodeId) -> Result<NodeId, ArchError> {
        let net = self.net;
        let ds = net.spec.dual_structure;
        let lambda = T::lit(net.spec.shrink_threshold);
        let mut skips = Vec::with_capacity(net.spec.levels);
        let mut h = x;
        for level in &net.layout.levels {
            h = self.block(h, level.enc[0])?;
            h = self.block(h, level.enc[1])?;
            let feature = h;
            let c = self.tape.value(feature).channels();
            let branch = match ds.downsample() {
                Downsample::MaxPool => {
                    h = self.tape.maxpool2(feature)?;
                    // PU hands the pooling node on for its indices.
                    if ds == DualStructure::Pu {
                        h
                    } else {
                        feature
                    }
                }
                Downsample::StridedConv => {
                    let ids = level.strided.expect("strided conv planned");
                    h = self.conv(feature, ids, 2, 0)?;
                    feature
                }
                Downsample::Dwt => {
                    let bank = net.bank.as_ref().expect("wavelet structures carry a bank");
                    let all = self.tape.dwt(feature, bank)?;
                    h = self.tape.slice_channels(all, 0, c)?;
                    match ds.branch() {
                        BranchPayload::HighFrequency => self.tape.slice_channels(all, c, 7 * c)?,
                        BranchPayload::HighFrequencyDenoised => {
                            let high = self.tape.slice_channels(all, c, 7 * c)?;
                            self.tape.hard_shrink(high, lambda)
                        }
                        _ => feature,
                    }
                }
            };
            skips.push(branch);
        }
        h = self.block(h, net.layout.bottom[0])?;
        h = self.block(h, net.layout.bottom[1])?;
        for (level, &branch) in net.layout.levels.iter().zip(&skips).rev() {
            h = match ds.upsample() {
                Upsample::MaxUnpool => self.tape.maxunpool2(h, branch)?,
                Upsample::Deconv => {
                    let ids = level.deconv.expect("deconv planned");
                    let w = self.param(ids.w);
                    let b = self.param(ids.b);
                    self.tape.deconv2(h, w, Some(b))?
                }
                Upsample::Interpolate => self.tape.interpolate2(h),
                Upsample::Idwt => {
                    let bank = net.bank.as_ref().expect("wavelet structures carry a bank");
                    self.tape.idwt(h, branch, bank)?
                }
            };
            if ds.concatenates() {
                h = self.tape.concat_channels(branch, h)?;
            }
            h = self.block(h, level.dec[0])?;
            h = self.block(h, level.dec[1])?;
        }
        self.conv(h, net.layout.head, 1, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ds: DualStructure) -> NetworkSpec {
        NetworkSpec::published(ds, ds.uses_wavelet().then_some("haar")).unwrap()
    }

    #[test]
    fn wavelet_presence_matches_structure() {
        assert_eq!(
            NetworkSpec::published(DualStructure::Di, None),
            Err(ArchError::WaveletRequired(DualStructure::Di))
        );
        assert_eq!(
            NetworkSpec::published(DualStructure::Pu, Some("haar")),
            Err(ArchError::WaveletNotAllowed(DualStructure::Pu))
        );
        assert!(matches!(
            NetworkSpec::published(DualStructure::Di, Some("db9")),
            Err(ArchError::Wavelet(_))
        ));
    }

    #[test]
    fn branch_payloads() {
        use BranchPayload::*;
        let got: Vec<_> = DualStructure::ALL.iter().map(|d| d.branch()).collect();
        assert_eq!(
            got,
            vec![PoolIndices, SkipCopy, SkipCopy, SkipCopy, SkipCopy, HighFrequency, HighFrequencyDenoised]
        );
    }

    #[test]
    fn names_round_trip() {
        for d in DualStructure::ALL {
            assert_eq!(d.as_str().parse::<DualStructure>().unwrap(), d);
        }
        assert!("Unet".parse::<DualStructure>().is_err());
    }

    #[test]
    fn config_round_trip() {
        for d in DualStructure::ALL {
            let s = spec(d);
            assert_eq!(NetworkSpec::from_config(&s.to_config()).unwrap(), s);
        }
        let parsed = NetworkSpec::from_config("# comment\narch=DIDn\nwavelet=db4\nshrink_threshold=0\n").unwrap();
        assert_eq!(parsed.wavelet.as_deref(), Some("db4"));
        assert_eq!(parsed.shrink_threshold, 0.0);
        assert!(matches!(
            NetworkSpec::from_config("arch=DI\nbogus=1\n"),
            Err(ArchError::Config { line: 2, .. })
        ));
    }

    #[test]
    fn idwt_channel_wiring_is_checked() {
        let mut s = spec(DualStructure::Di);
        s.decoder_channels[1] = (16, 6);
        assert!(matches!(s.validate(), Err(ArchError::ChannelSchedule(_))));
        let mut c = spec(DualStructure::Ddc);
        c.decoder_channels[1] = (16, 6);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn describe_endpoints_and_sums() {
        for d in DualStructure::ALL {
            let s = spec(d);
            let report = describe(&s, [32, 128, 128]).unwrap();
            let first = &report[0];
            assert_eq!((first.kind, first.in_channels, first.out_channels, first.kernel), ("conv+bn+relu", 1, 4, 3));
            let last = report.last().unwrap();
            assert_eq!((last.kind, last.in_channels, last.out_channels, last.kernel), ("conv", 4, 2, 1));
            assert_eq!(last.output, [32, 128, 128]);
            let total: usize = report.iter().map(|l| l.params).sum();
            assert_eq!(total, count_parameters(&s).unwrap());
            assert_eq!(total, Network::<f32>::build(&s, 1).unwrap().parameter_count());
        }
    }

    #[test]
    fn denoising_block_has_no_parameters() {
        assert_eq!(
            count_parameters(&spec(DualStructure::Di)).unwrap(),
            count_parameters(&spec(DualStructure::Didn)).unwrap()
        );
    }

    #[test]
    fn output_shape_matches_input() {
        for d in DualStructure::ALL {
            let net = Network::<f32>::build(&spec(d), 3).unwrap();
            let logits = net.predict(Tensor::zeros([1, 1, 16, 32, 32])).unwrap();
            assert_eq!(logits.shape(), [1, 2, 16, 32, 32], "{d}");
        }
    }

    #[test]
    fn indivisible_extent_rejected() {
        let net = Network::<f32>::build(&spec(DualStructure::Di), 3).unwrap();
        assert_eq!(
            net.predict(Tensor::zeros([1, 1, 16, 24, 32])).unwrap_err(),
            ArchError::IndivisibleExtent {
                spatial: [16, 24, 32],
                factor: 16
            }
        );
    }

    #[test]
    fn zero_weights_give_head_bias() {
        let mut net = Network::<f64>::build(&spec(DualStructure::Di), 3).unwrap();
        let head_b = net.params().find("head.bias").unwrap();
        for p in net.params_mut().iter_mut() {
            if p.kind == ParamKind::Trainable {
                p.value.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        net.params_mut().get_mut(head_b).as_mut_slice().copy_from_slice(&[0.3, -0.2]);
        let mut x = Tensor::zeros([1, 1, 16, 16, 16]);
        x.as_mut_slice().iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f64);
        let logits = net.predict(x).unwrap();
        assert!(logits.plane(0, 0).iter().all(|&v| v == 0.3));
        assert!(logits.plane(0, 1).iter().all(|&v| v == -0.2));
    }

    #[test]
    fn argmax_ties_go_to_background() {
        let logits = Tensor::from_vec([1, 2, 1, 1, 3], vec![0.0, 1.0, 2.0, 0.0, 1.0, 3.0]).unwrap();
        assert_eq!(argmax_labels(&logits, 0).as_slice(), &[0, 0, 1]);
    }
}
