use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use wavecube::checkpoint::{self, CheckpointError};
use wavecube::nvol::{self, AnyVolume, NvolError};
use wavecube::run::{self, RunError};
use wavecube::segment::segment_volume_parallel;
use wavecube_core::arch::{describe, ArchError};
use wavecube_core::data::{cut_cubes, generate_phantom, parse_swc, rasterize, PhantomConfig, DEFAULT_MIN_FOREGROUND};
use wavecube_core::filters::{FilterBank, FilterError};
use wavecube_core::pipeline::{iou, PipelineError, Provenance};
use wavecube_core::train::{TrainConfig, TrainError};
use wavecube_core::transform::{dwt3, hard_shrink, idwt3, ShrinkConfig, TransformError};
use wavecube_core::{DualStructure, Network, NetworkSpec, Real, Subband, SubbandSet, Volume};

#[derive(Parser, Debug)]
#[command(name = "wavecube", version, about = "3D wavelet-integrated segmentation of line-shaped structures")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a noisy tube phantom and its labels.
    GenPhantom(GenPhantomArgs),
    /// Rasterize an SWC reconstruction into a binary label volume.
    Swc2label(Swc2LabelArgs),
    /// Cut seeded training cubes from an image/label pair.
    MakeCubes(MakeCubesArgs),
    /// One-level 3D DWT into eight subband volumes.
    Dwt(DwtArgs),
    /// Inverse of `dwt`.
    Idwt(IdwtArgs),
    /// DWT, hard shrinkage of the high-frequency subbands, IDWT.
    Denoise(DenoiseArgs),
    /// Print the layer table of a network.
    Describe(DescribeArgs),
    /// Print the number of trainable parameters.
    CountParams(NetArgs),
    /// Train on a directory of cubes.
    Train(TrainArgs),
    /// Segment a volume with a checkpoint.
    Segment(SegmentArgs),
    /// Foreground/background IoU of a prediction against ground truth.
    Eval(EvalArgs),
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got `{s}`"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.trim().parse::<T>().map_err(|_| format!("bad value `{p}`"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let d = parse_triple::<usize>(s)?;
    if d.contains(&0) {
        return Err("extents must be positive".into());
    }
    Ok(d)
}

fn parse_scale(s: &str) -> Result<[f64; 3], String> {
    parse_triple::<f64>(s)
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse().map_err(|_| format!("bad value `{p}`"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected two comma-separated values".to_string())
}

#[derive(Args, Debug)]
struct GenPhantomArgs {
    /// Image output (single-volume mode).
    #[arg(long, requires = "labels", conflicts_with = "out_dir")]
    out: Option<PathBuf>,
    /// Label output (single-volume mode).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Write `--count` cube pairs here instead, seeded seed, seed+1, ...
    #[arg(long, requires = "count")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// Extent as z,y,x.
    #[arg(long, value_parser = parse_dims, default_value = "32,128,128")]
    dims: [usize; 3],
    #[arg(long, default_value_t = 4)]
    tubes: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    impulse_fraction: f64,
    #[arg(long, default_value_t = 0)]
    gaps: usize,
}

#[derive(Args, Debug)]
struct Swc2LabelArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output extent as z,y,x.
    #[arg(long, value_parser = parse_dims)]
    dims: [usize; 3],
    /// Scale for the SWC x,y,z columns, in that order.
    #[arg(long, value_parser = parse_scale, default_value = "1,1,1")]
    scale: [f64; 3],
}

#[derive(Args, Debug)]
struct MakeCubesArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, value_parser = parse_dims, default_value = "16,64,64")]
    cube: [usize; 3],
    /// Minimum labeled fraction for a cube to be kept.
    #[arg(long, default_value_t = DEFAULT_MIN_FOREGROUND)]
    min_foreground: f64,
}

#[derive(Args, Debug)]
struct DwtArgs {
    /// haar, db2, db3, db4, ch2.2 or ch4.4
    #[arg(long)]
    wavelet: String,
    #[arg(long = "in")]
    input: PathBuf,
    /// Subbands go to PREFIX{lll,...,hhh}.nvol.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args, Debug)]
struct IdwtArgs {
    #[arg(long)]
    wavelet: String,
    #[arg(long)]
    in_prefix: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    wavelet: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ShrinkConfig::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct NetArgs {
    /// PU, PDc, ScIn, DDc, DIn, DI or DIDn
    #[arg(long, default_value = "DIDn")]
    arch: DualStructure,
    /// Required by DDc, DIn, DI and DIDn (default haar); rejected by the others.
    #[arg(long)]
    wavelet: Option<String>,
    /// Network config file; overrides --arch and --wavelet.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DescribeArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, value_parser = parse_dims, default_value = "32,128,128")]
    dims: [usize; 3],
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Directory of cube_*_image.nvol / cube_*_label.nvol pairs.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoints and metrics.tsv go here.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().base_lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    momentum: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    weight_decay: f64,
    /// Background,foreground loss weights.
    #[arg(long, value_parser = parse_pair, default_value = "1,5")]
    class_weights: [f64; 2],
    #[arg(long, default_value_t = TrainConfig::default().validation_fraction)]
    validation_fraction: f64,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Must match the checkpoint when given.
    #[arg(long)]
    arch: Option<DualStructure>,
    /// Must match the checkpoint when given.
    #[arg(long)]
    wavelet: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Cube extent; every axis a multiple of 16.
    #[arg(long, value_parser = parse_dims, default_value = "16,64,64")]
    cube: [usize; 3],
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

/// A reported failure and its exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<NvolError> for Failure {
    fn from(e: NvolError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<FilterError> for Failure {
    fn from(e: FilterError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<TransformError> for Failure {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::InvalidThreshold(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<ArchError> for Failure {
    fn from(e: ArchError) -> Self {
        match e {
            ArchError::IndivisibleExtent { .. } | ArchError::Nn(_) => Failure::Data(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::CubeShape(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient(_) | TrainError::NonFiniteLoss(_) => Failure::Numeric(e.to_string()),
            TrainError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            TrainError::Arch(a) => a.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Train(t) => t.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn resolve_spec(net: &NetArgs) -> Result<NetworkSpec, Failure> {
    if let Some(path) = &net.config {
        let text = fs::read_to_string(path).map_err(io_failure(path))?;
        return Ok(NetworkSpec::from_config(&text)?);
    }
    let wavelet = match (&net.wavelet, net.arch.uses_wavelet()) {
        (None, true) => Some("haar"),
        (w, _) => w.as_deref(),
    };
    let spec = NetworkSpec::published(net.arch, wavelet)?;
    spec.validate()?;
    Ok(spec)
}

fn band_path(prefix: &str, s: Subband) -> PathBuf {
    PathBuf::from(format!("{prefix}{}.nvol", s.tag()))
}

fn write_bands<T: Real>(set: SubbandSet<T>, prefix: &str) -> Result<(), Failure>
where
    AnyVolume: From<Volume<T>>,
{
    for (s, band) in Subband::ALL.into_iter().zip(set.into_bands()) {
        let path = band_path(prefix, s);
        nvol::write_volume(&path, &band.into())?;
        println!("{}", path.display());
    }
    Ok(())
}

fn dwt_any(v: AnyVolume, bank: &FilterBank, prefix: &str) -> Result<(), Failure> {
    match v {
        AnyVolume::F64(v) => write_bands(dwt3(&v, bank)?, prefix),
        other => write_bands(dwt3(&other.into_f32(), bank)?, prefix),
    }
}

fn denoise_any(v: AnyVolume, bank: &FilterBank, cfg: ShrinkConfig) -> Result<AnyVolume, Failure> {
    Ok(match v {
        AnyVolume::F64(v) => idwt3(&hard_shrink(&dwt3(&v, bank)?, cfg), bank)?.into(),
        other => idwt3(&hard_shrink(&dwt3(&other.into_f32(), bank)?, cfg), bank)?.into(),
    })
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let seed = cli.seed;
    match &cli.command {
        Command::GenPhantom(a) => {
            let cfg = |seed| PhantomConfig {
                dims: a.dims,
                tubes: a.tubes,
                noise_sigma: a.noise_sigma,
                impulse_fraction: a.impulse_fraction,
                gaps: a.gaps,
                seed,
                ..Default::default()
            };
            let phantom = |seed| generate_phantom::<f32>(&cfg(seed)).map_err(|e| Failure::Usage(e.to_string()));
            match (&a.out, &a.labels, &a.out_dir, a.count) {
                (Some(out), Some(labels), None, _) => {
                    let (img, lab) = phantom(seed)?;
                    nvol::write_volume(out, &img.into())?;
                    nvol::write_volume(labels, &lab.into())?;
                }
                (None, _, Some(dir), Some(count)) => {
                    fs::create_dir_all(dir).map_err(io_failure(dir))?;
                    for i in 0..count {
                        let (img, lab) = phantom(seed.wrapping_add(i as u64))?;
                        nvol::write_volume(run::image_path(dir, i), &img.into())?;
                        nvol::write_volume(run::label_path(dir, i), &lab.into())?;
                    }
                    println!("{count}");
                }
                _ => return Err(Failure::Usage("give either --out and --labels, or --out-dir and --count".into())),
            }
        }
        Command::Swc2label(a) => {
            let text = fs::read_to_string(&a.input).map_err(io_failure(&a.input))?;
            let morph = parse_swc(&text).map_err(|e| Failure::Data(e.to_string()))?;
            let [sx, sy, sz] = a.scale;
            let labels = rasterize(&morph.scaled(sx, sy, sz), a.dims);
            println!("{}", labels.count_ones());
            nvol::write_volume(&a.out, &labels.into())?;
        }
        Command::MakeCubes(a) => {
            let image = nvol::read_volume(&a.image)?.into_f32();
            let labels = nvol::read_volume(&a.labels)?.into_labels()?;
            let source = a.image.display().to_string();
            let report = cut_cubes(&image, &labels, a.cube, a.count, seed, a.min_foreground, &source)
                .map_err(|e| Failure::Data(e.to_string()))?;
            fs::create_dir_all(&a.out_dir).map_err(io_failure(&a.out_dir))?;
            let mut index = String::from("index\tz\ty\tx\tforeground_fraction\tsource\n");
            for (i, c) in report.cubes.iter().enumerate() {
                nvol::write_volume(run::image_path(&a.out_dir, i), &c.image.clone().into())?;
                nvol::write_volume(run::label_path(&a.out_dir, i), &c.labels.clone().into())?;
                let frac = c.labels.count_ones() as f64 / c.labels.len() as f64;
                let [z, y, x] = c.origin;
                let _ = writeln!(index, "{i}\t{z}\t{y}\t{x}\t{frac:.6}\t{}", c.source);
            }
            let path = a.out_dir.join("index.tsv");
            fs::write(&path, index).map_err(io_failure(&path))?;
            println!("{}", report.cubes.len());
            if report.exhausted {
                return Err(Failure::Data(format!(
                    "only {} of {} cubes met the foreground minimum after {} draws",
                    report.cubes.len(),
                    report.requested,
                    report.attempts
                )));
            }
        }
        Command::Dwt(a) => {
            let bank = FilterBank::builtin(&a.wavelet)?;
            dwt_any(nvol::read_volume(&a.input)?, &bank, &a.out_prefix)?;
        }
        Command::Idwt(a) => {
            let bank = FilterBank::builtin(&a.wavelet)?;
            let bands: Vec<AnyVolume> = Subband::ALL
                .into_iter()
                .map(|s| nvol::read_volume(band_path(&a.in_prefix, s)))
                .collect::<Result<_, _>>()?;
            let out: AnyVolume = if bands.iter().all(|b| matches!(b, AnyVolume::F64(_))) {
                let vols = bands.into_iter().map(|b| match b {
                    AnyVolume::F64(v) => v,
                    _ => unreachable!(),
                });
                idwt3(&SubbandSet::new(&a.wavelet, vols.collect())?, &bank)?.into()
            } else {
                let vols = bands.into_iter().map(AnyVolume::into_f32).collect();
                idwt3(&SubbandSet::new(&a.wavelet, vols)?, &bank)?.into()
            };
            nvol::write_volume(&a.out, &out)?;
        }
        Command::Denoise(a) => {
            let bank = FilterBank::builtin(&a.wavelet)?;
            let cfg = ShrinkConfig::new(a.threshold)?;
            let out = denoise_any(nvol::read_volume(&a.input)?, &bank, cfg)?;
            nvol::write_volume(&a.out, &out)?;
        }
        Command::Describe(a) => {
            let spec = resolve_spec(&a.net)?;
            let layers = describe(&spec, a.dims)?;
            for l in &layers {
                println!("{l}");
            }
            println!("total parameters: {}", layers.iter().map(|l| l.params).sum::<usize>());
        }
        Command::CountParams(a) => {
            let spec = resolve_spec(a)?;
            println!("{}", wavecube_core::arch::count_parameters(&spec)?);
        }
        Command::Train(a) => {
            let spec = resolve_spec(&a.net)?;
            let cfg = TrainConfig {
                epochs: a.epochs,
                base_lr: a.lr,
                momentum: a.momentum,
                weight_decay: a.weight_decay,
                batch_size: a.batch_size,
                class_weights: a.class_weights,
                seed,
                validation_fraction: a.validation_fraction,
                ..Default::default()
            };
            cfg.validate()?;
            let data = run::load_dataset(&a.data)?;
            let meta = BTreeMap::from([
                ("seed".to_string(), seed.to_string()),
                ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("train_config".to_string(), format!("{cfg:?}")),
            ]);
            let outcome = run::train_to_dir(&spec, &data, &cfg, &a.out, &meta, |line| eprintln!("{line}"))?;
            match outcome.epochs.last().and_then(|e| e.validation) {
                Some(s) => println!("{:.6}\t{:.6}\t{:.6}", s.background, s.foreground, s.mean),
                None => println!("-\t-\t-"),
            }
        }
        Command::Segment(a) => {
            let (ck, id) = checkpoint::load(&a.ckpt)?;
            if let Some(arch) = a.arch {
                if arch != ck.spec.dual_structure {
                    return Err(Failure::Usage(format!("--arch {arch} but checkpoint holds {}", ck.spec.dual_structure)));
                }
            }
            if a.wavelet.is_some() && a.wavelet != ck.spec.wavelet {
                return Err(Failure::Usage(format!(
                    "--wavelet {} but checkpoint holds {}",
                    a.wavelet.as_deref().unwrap_or("none"),
                    ck.spec.wavelet.as_deref().unwrap_or("none")
                )));
            }
            let provenance = Provenance {
                arch: ck.spec.dual_structure.to_string(),
                wavelet: ck.spec.wavelet.clone(),
                checkpoint: Some(id.clone()),
            };
            let net: Network<f32> = ck.into_network()?;
            let volume = nvol::read_volume(&a.input)?.into_f32();
            volume.ensure_finite().map_err(|e| Failure::Numeric(e.to_string()))?;
            let result = segment_volume_parallel(&volume, &net, a.cube, a.workers, provenance)?;
            nvol::write_volume(&a.out, &result.labels.clone().into())?;
            println!(
                "{}\t{}\t{}\t{}",
                result.provenance.arch,
                result.provenance.wavelet.as_deref().unwrap_or("none"),
                id,
                result.labels.count_ones()
            );
        }
        Command::Eval(a) => {
            let pred = nvol::read_volume(&a.pred)?.into_labels()?;
            let truth = nvol::read_volume(&a.truth)?.into_labels()?;
            let s = iou(&pred, &truth)?;
            println!("{:.6}\t{:.6}\t{:.6}", s.background, s.foreground, s.mean);
        }
    }
    Ok(())
}

fn provenance_header(cli: &Cli) -> String {
    let params = format!("{:?}", cli.command);
    let digest: String = Sha256::digest(params.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    format!(
        "# wavecube {} seed={} config_sha256={}\n# params: {params}",
        env!("CARGO_PKG_VERSION"),
        cli.seed,
        digest
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    eprintln!("{}", provenance_header(&cli));
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
