//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Criterion 6 trains two networks and takes several
//! minutes on one core.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavecube::segment::segment_volume_parallel;
use wavecube_core::arch::{check_parameter_gradients, count_parameters};
use wavecube_core::data::{generate_phantom, rasterize, PhantomConfig, SwcMorphology, SwcNode};
use wavecube_core::filters::{tensor_filters, Role, BUILTIN_WAVELETS};
use wavecube_core::nn::gradcheck::{check_inputs, random_tensor, CheckConfig, GradCheck};
use wavecube_core::nn::{BatchNormMode, NnError, NodeId, ParamKind, Tape, Tensor};
use wavecube_core::pipeline::{assemble, partition, segment_volume, Provenance};
use wavecube_core::train::{fit, smoothed, FitEvent, Sample, TrainConfig};
use wavecube_core::transform::{dwt3, hard_shrink, idwt3, shrink_value, ShrinkConfig};
use wavecube_core::{DualStructure, FilterBank, Network, NetworkSpec, Real, Subband, SubbandSet, Volume};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("runtime {elapsed:.1?} exceeds {limit:?}"))
}

fn random_volume<T: Real>(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Volume<T> {
    Volume::from_fn(dims, |_, _, _| T::lit(rng.random_range(-1.0..1.0))).unwrap()
}

fn max_relative_error<T: Real>(a: &Volume<T>, b: &Volume<T>) -> f64 {
    let diff = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max);
    diff / a.max_abs().as_f64()
}

fn perfect_reconstruction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    for name in BUILTIN_WAVELETS {
        let bank = FilterBank::builtin(name).unwrap();
        for dims in [[8, 8, 8], [16, 32, 32], [32, 128, 128]] {
            for _ in 0..20 {
                let x = random_volume::<f32>(dims, &mut rng);
                let e = max_relative_error(&x, &idwt3(&dwt3(&x, &bank).unwrap(), &bank).unwrap());
                ensure(e <= 1e-5, || format!("{name} {dims:?} f32 error {e:.3e}"))?;
                worst32 = worst32.max(e);
                let x = random_volume::<f64>(dims, &mut rng);
                let e = max_relative_error(&x, &idwt3(&dwt3(&x, &bank).unwrap(), &bank).unwrap());
                ensure(e <= 1e-10, || format!("{name} {dims:?} f64 error {e:.3e}"))?;
                worst64 = worst64.max(e);
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "6 wavelets x 3 shapes x 20 volumes, worst f32 {worst32:.2e}, worst f64 {worst64:.2e}, {:.1?}",
        start.elapsed()
    ))
}

fn haar_anchor() -> Outcome {
    let bank = FilterBank::haar();
    let anchor = 2.0 * 2f64.sqrt();
    let mut worst = 0.0f64;
    for dims in [[2, 2, 2], [8, 8, 8], [16, 32, 32]] {
        let set = dwt3(&Volume::<f64>::filled(dims, 1.0).unwrap(), &bank).unwrap();
        for s in Subband::ALL {
            let want = if s == Subband::Lll { anchor } else { 0.0 };
            for &v in set.band(s).as_slice() {
                worst = worst.max((v - want).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("constant volume deviates by {worst:.2e}"))?;

    // Signs of the eight 2x2x2 filters, [z][y][x], in lll..hhh order; every
    // entry has magnitude 1/(2*sqrt(2)).
    let signs: [[[[i8; 2]; 2]; 2]; 8] = [
        [[[1, 1], [1, 1]], [[1, 1], [1, 1]]],
        [[[1, -1], [1, -1]], [[1, -1], [1, -1]]],
        [[[1, 1], [-1, -1]], [[1, 1], [-1, -1]]],
        [[[1, -1], [-1, 1]], [[1, -1], [-1, 1]]],
        [[[1, 1], [1, 1]], [[-1, -1], [-1, -1]]],
        [[[1, -1], [1, -1]], [[-1, 1], [-1, 1]]],
        [[[1, 1], [-1, -1]], [[-1, -1], [1, 1]]],
        [[[1, -1], [-1, 1]], [[-1, 1], [1, -1]]],
    ];
    let filters = tensor_filters(&bank, Role::Decomposition);
    ensure(filters.len() == 8, || format!("{} filters", filters.len()))?;
    for (f, s) in filters.iter().zip(&signs) {
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let want = f64::from(s[i][j][k]) / anchor;
                    let got = f.get(i, j, k);
                    ensure((got - want).abs() <= 1e-15, || format!("{} [{i},{j},{k}] = {got}, want {want}", f.tag()))?;
                }
            }
        }
    }
    Ok(format!("lll = 2*sqrt(2), high bands zero (max deviation {worst:.1e}); 8 filters x 8 entries match"))
}

fn probe(tape: &mut Tape<f64>, y: NodeId, seed: u64) -> Result<NodeId, NnError> {
    let coeffs = random_tensor(tape.value(y).shape(), seed).into_vec();
    tape.dot(y, coeffs)
}

fn layer_checks() -> Vec<(&'static str, GradCheck)> {
    let cfg = CheckConfig::default();
    let run = |inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId, NnError>| {
        check_inputs(inputs, build, cfg).unwrap()
    };
    let haar = FilterBank::haar();
    let db2 = FilterBank::builtin("db2").unwrap();
    let x = random_tensor([2, 2, 4, 4, 4], 1);
    let w3 = random_tensor([3, 2, 3, 3, 3], 2);
    let b3 = random_tensor([3, 1, 1, 1, 1], 3);
    let gamma = random_tensor([2, 1, 1, 1, 1], 4);
    let beta = random_tensor([2, 1, 1, 1, 1], 5);
    let mean = [0.1, -0.3];
    let var = [0.7, 1.4];
    let away_from_kink = random_tensor([1, 2, 2, 2, 2], 6).map(|v| if (v.abs() - 0.25).abs() < 0.01 { v + 0.05 } else { v });
    let labels: Vec<u8> = (0..128).map(|i| (i % 3 == 0) as u8).collect();
    vec![
        ("conv 3x3x3", run(&[x.clone(), w3.clone(), b3.clone()], &|tp, ids| {
            let y = tp.conv(ids[0], ids[1], Some(ids[2]), 1, 1)?;
            probe(tp, y, 10)
        })),
        ("strided conv", run(&[x.clone(), random_tensor([3, 2, 2, 2, 2], 7)], &|tp, ids| {
            let y = tp.conv(ids[0], ids[1], None, 2, 0)?;
            probe(tp, y, 11)
        })),
        ("deconv", run(&[random_tensor([1, 3, 2, 2, 2], 8), random_tensor([3, 2, 2, 2, 2], 9)], &|tp, ids| {
            let y = tp.deconv2(ids[0], ids[1], None)?;
            probe(tp, y, 12)
        })),
        ("batch norm (train)", run(&[x.clone(), gamma.clone(), beta.clone()], &|tp, ids| {
            let (y, _) = tp.batchnorm(ids[0], ids[1], ids[2], BatchNormMode::Train)?;
            probe(tp, y, 13)
        })),
        ("batch norm (eval)", run(&[x.clone(), gamma, beta], &|tp, ids| {
            let (y, _) = tp.batchnorm(ids[0], ids[1], ids[2], BatchNormMode::Eval { mean: &mean, var: &var })?;
            probe(tp, y, 14)
        })),
        ("relu", run(&[x.clone()], &|tp, ids| {
            let y = tp.relu(ids[0]);
            probe(tp, y, 15)
        })),
        ("max-pool", run(&[x.clone()], &|tp, ids| {
            let y = tp.maxpool2(ids[0])?;
            probe(tp, y, 16)
        })),
        ("max-unpool", run(&[random_tensor([2, 2, 2, 2, 2], 17)], &|tp, ids| {
            let src = tp.input(x.clone(), false);
            let p = tp.maxpool2(src)?;
            let y = tp.maxunpool2(ids[0], p)?;
            probe(tp, y, 18)
        })),
        ("trilinear interpolation", run(&[random_tensor([1, 2, 2, 3, 2], 19)], &|tp, ids| {
            let y = tp.interpolate2(ids[0]);
            probe(tp, y, 20)
        })),
        ("concat", run(&[random_tensor([1, 2, 2, 2, 2], 21), random_tensor([1, 3, 2, 2, 2], 22)], &|tp, ids| {
            let y = tp.concat_channels(ids[0], ids[1])?;
            probe(tp, y, 23)
        })),
        ("dwt (haar)", run(&[x.clone()], &|tp, ids| {
            let y = tp.dwt(ids[0], &haar)?;
            probe(tp, y, 24)
        })),
        ("dwt (db2)", run(&[x.clone()], &|tp, ids| {
            let y = tp.dwt(ids[0], &db2)?;
            probe(tp, y, 25)
        })),
        ("idwt (db2)", run(&[random_tensor([1, 2, 2, 4, 2], 26), random_tensor([1, 14, 2, 4, 2], 27)], &|tp, ids| {
            let y = tp.idwt(ids[0], ids[1], &db2)?;
            probe(tp, y, 28)
        })),
        ("hard shrink", run(&[away_from_kink], &|tp, ids| {
            let y = tp.hard_shrink(ids[0], 0.25);
            probe(tp, y, 29)
        })),
        ("weighted cross entropy", run(&[random_tensor([1, 2, 4, 4, 8], 30)], &|tp, ids| {
            tp.weighted_cross_entropy(ids[0], &labels, &[1.0, 5.0])
        })),
    ]
}

fn network_check(spec: &NetworkSpec, input: [usize; 5]) -> GradCheck {
    let mut net = Network::<f64>::build(spec, 11).unwrap();
    // Random running statistics so eval-mode batch norm is not the identity.
    for (i, p) in net.params_mut().iter_mut().enumerate() {
        if p.kind == ParamKind::Buffer {
            let noise = random_tensor(p.value.shape(), 500 + i as u64);
            let is_var = p.name.ends_with("running_var");
            for (v, n) in p.value.as_mut_slice().iter_mut().zip(noise.as_slice()) {
                *v = if is_var { 1.0 + 0.5 * n } else { 0.2 * n };
            }
        }
    }
    let n = input[2] * input[3] * input[4];
    let labels: Vec<u8> = (0..n).map(|i| ((i * 7919) % 5 == 0) as u8).collect();
    let cfg = CheckConfig { step: 1e-6, samples: 2, floor: 1e-6, seed: 13 };
    check_parameter_gradients(&mut net, &random_tensor(input, 12), &labels, [1.0, 5.0], cfg).unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let tol = 2e-2;
    let layers = layer_checks();
    let mut worst = 0.0f64;
    for (name, r) in &layers {
        ensure(r.checked > 0 && r.passes(tol), || format!("{name}: {r:?}"))?;
        worst = worst.max(r.worst_relative);
    }
    // The published four-level schedule halves z four times, so an 8-deep
    // input cannot reach the bottom; check that network at 16^3 and a
    // three-level DIDn at 1x1x8x16x16.
    let full = NetworkSpec::published(DualStructure::Didn, Some("haar")).unwrap();
    let deep = network_check(&full, [1, 1, 16, 16, 16]);
    ensure(deep.checked >= 50 && deep.passes(tol), || format!("DIDn 16^3: {deep:?}"))?;
    let mut shallow = full.clone();
    shallow.levels = 3;
    shallow.encoder_channels.pop();
    shallow.bottom_channels = (16, 16);
    shallow.decoder_channels.remove(0);
    let small = network_check(&shallow, [1, 1, 8, 16, 16]);
    ensure(small.checked >= 50 && small.passes(tol), || format!("DIDn 3-level 8x16x16: {small:?}"))?;
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "{} layer kinds worst rel {worst:.1e}; DIDn 16^3 {} coords worst {:.1e}; 3-level DIDn 1x1x8x16x16 {} coords worst {:.1e}; {:.1?}",
        layers.len(),
        deep.checked,
        deep.worst_relative,
        small.checked,
        small.worst_relative,
        start.elapsed()
    ))
}

fn parameter_counts() -> Outcome {
    let mut report = Vec::new();
    let mut di = 0;
    for ds in DualStructure::ALL {
        let spec = NetworkSpec::published(ds, ds.uses_wavelet().then_some("haar")).unwrap();
        let n = count_parameters(&spec).unwrap();
        let range = match ds {
            DualStructure::Di | DualStructure::Didn => Some(145_000..=195_000),
            DualStructure::Pdc | DualStructure::ScIn | DualStructure::Ddc | DualStructure::Din => Some(170_000..=230_000),
            DualStructure::Pu => None,
        };
        if let Some(r) = &range {
            ensure(r.contains(&n), || format!("{ds} has {n} parameters, outside {r:?}"))?;
        }
        if ds == DualStructure::Di {
            di = n;
        }
        if ds == DualStructure::Didn {
            ensure(n == di, || format!("DIDn {n} != DI {di}"))?;
        }
        report.push(format!("{ds} {n}"));
    }
    Ok(report.join(", "))
}

fn pipeline_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cubes = 0;
    for _ in 0..200 {
        let dims = [rng.random_range(1..=128), rng.random_range(1..=128), rng.random_range(1..=128)];
        let cube = [16 * rng.random_range(1..=4), 16 * rng.random_range(1..=4), 16 * rng.random_range(1..=4)];
        let v = random_volume::<f32>(dims, &mut rng);
        let (grid, parts) = partition(&v, cube).unwrap();
        cubes += parts.len();
        let back = assemble(&grid, grid.origins().iter().copied().zip(parts).collect()).unwrap();
        let same = back.dims() == v.dims() && back.as_slice().iter().zip(v.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("extent {dims:?} cube {cube:?} not restored bitwise"))?;
    }

    let spec = NetworkSpec::published(DualStructure::Didn, Some("db2")).unwrap();
    let net = Network::<f32>::build(&spec, 3).unwrap();
    let cfg = PhantomConfig { dims: [24, 70, 45], tubes: 3, noise_sigma: 0.2, seed: 9, ..Default::default() };
    let (image, _) = generate_phantom::<f32>(&cfg).unwrap();
    let reference = segment_volume(&image, &net, [16, 32, 32], Provenance::default()).unwrap();
    for workers in [1, 2, 3, 8] {
        let r = segment_volume_parallel(&image, &net, [16, 32, 32], workers, Provenance::default()).unwrap();
        ensure(r.labels == reference.labels, || format!("{workers} workers differ from sequential"))?;
    }
    Ok(format!("200 extents ({cubes} cubes) restored bitwise; DIDn segmentation identical for 1, 2, 3, 8 workers"))
}

/// Trailing 10-iteration mean sampled at the first full window and at the
/// end of each of the first three epochs.
fn smoothed_checkpoints(losses: &[f64], per_epoch: usize) -> Vec<f64> {
    const WINDOW: usize = 10;
    let s = smoothed(losses, WINDOW);
    let mut at = vec![0];
    at.extend((1..=3).map(|e| e * per_epoch - WINDOW));
    at.into_iter().filter_map(|i| s.get(i).copied()).collect()
}

fn desk_scale_learning() -> Outcome {
    let start = Instant::now();
    let data: Vec<Sample<f32>> = (0..200)
        .map(|i| {
            let cfg = PhantomConfig {
                dims: [16, 64, 64],
                tubes: 3,
                noise_sigma: 0.3,
                impulse_fraction: 0.05,
                seed: 1000 + i,
                ..Default::default()
            };
            let (image, labels) = generate_phantom(&cfg).unwrap();
            Sample { image, labels }
        })
        .collect();
    let (train, held_out) = data.split_at(150);
    let cfg = TrainConfig { epochs: 5, batch_size: 4, seed: 7, ..Default::default() };
    let per_epoch = train.len().div_ceil(cfg.batch_size);

    let mut table = vec![format!("    {:<6} {:<8} {:>6} {:>8} {:>8} {:>8}", "arch", "wavelet", "epochs", "iou_bg", "iou_fg", "mIoU")];
    let mut failures = Vec::new();
    let mut didn_fg = f64::NAN;
    for (ds, wavelet) in [(DualStructure::Didn, Some("haar")), (DualStructure::Pu, None)] {
        let spec = NetworkSpec::published(ds, wavelet).unwrap();
        let mut losses = Vec::new();
        let outcome = fit(&spec, train, held_out, &cfg, |e| {
            if let FitEvent::Iteration(r) = e {
                losses.push(r.loss);
            }
            Ok(())
        })
        .map_err(|e| format!("{ds}: {e}"))?;
        let scores = outcome.epochs.last().and_then(|e| e.validation).ok_or("no validation scores")?;
        table.push(format!(
            "    {:<6} {:<8} {:>6} {:>8.4} {:>8.4} {:>8.4}",
            ds.to_string(),
            wavelet.unwrap_or("none"),
            outcome.epochs.len(),
            scores.background,
            scores.foreground,
            scores.mean
        ));
        let marks = smoothed_checkpoints(&losses, per_epoch);
        let rounded: Vec<String> = marks.iter().map(|v| format!("{v:.4}")).collect();
        table.push(format!("    {ds} smoothed loss at first window, epochs 1-3: {}", rounded.join(" >= ")));
        if marks.len() != 4 || marks.windows(2).any(|w| w[1] > w[0]) {
            failures.push(format!("{ds} smoothed loss increases: {rounded:?}"));
        }
        if ds == DualStructure::Didn {
            didn_fg = scores.foreground;
        }
    }
    if !(didn_fg >= 0.60) {
        failures.push(format!("DIDn foreground IoU {didn_fg:.4} < 0.60"));
    }
    if let Err(e) = within(start.elapsed(), Duration::from_secs(3600)) {
        failures.push(e);
    }
    let body = format!("{:.1?}, held-out 50 cubes\n{}", start.elapsed(), table.join("\n"));
    if failures.is_empty() {
        Ok(body)
    } else {
        Err(format!("{}\n{body}", failures.join("; ")))
    }
}

fn hard_shrink_mapping() -> Outcome {
    let grid = [-0.3, -0.25, -0.1, 0.0, 0.1, 0.25, 0.3];
    let want = [-0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.3];
    for (x, w) in grid.iter().zip(want) {
        let got = shrink_value(*x, 0.25f64);
        ensure(got == w, || format!("shrink({x}) = {got}, want {w}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let coeffs: Vec<f64> = (0..100_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let once: Vec<f64> = coeffs.iter().map(|&c| shrink_value(c, 0.25)).collect();
    let twice: Vec<f64> = once.iter().map(|&c| shrink_value(c, 0.25)).collect();
    ensure(once == twice, || "elementwise shrink is not idempotent".into())?;

    // Same through the subband-set operator, which leaves lll alone.
    let bands: Vec<Volume<f64>> = coeffs.chunks(12_500).map(|c| Volume::from_vec([10, 25, 50], c.to_vec()).unwrap()).collect();
    let set = SubbandSet::new("haar", bands).unwrap();
    let cfg = ShrinkConfig::new(0.25).unwrap();
    let a = hard_shrink(&set, cfg);
    ensure(hard_shrink(&a, cfg) == a, || "subband shrink is not idempotent".into())?;
    ensure(a.band(Subband::Lll) == set.band(Subband::Lll), || "lll was modified".into())?;
    Ok("boundary grid maps as required; idempotent on 1e5 coefficients".into())
}

fn node(id: i64, zyx: [f64; 3], radius: f64, parent: i64) -> SwcNode {
    SwcNode { id, type_code: 3, x: zyx[2], y: zyx[1], z: zyx[0], radius, parent }
}

fn rasterization() -> Outcome {
    let sphere = SwcMorphology::new(vec![node(1, [8.0, 8.0, 8.0], 2.0, -1)]).unwrap();
    let n = rasterize(&sphere, [16, 16, 16]).count_ones();
    ensure(n == 33, || format!("sphere covers {n} voxels, want 33"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let r: f64 = rng.random_range(1.5..3.5);
        let len: f64 = rng.random_range(6.0..16.0);
        let (theta, phi): (f64, f64) = (rng.random_range(0.0..std::f64::consts::PI), rng.random_range(0.0..std::f64::consts::TAU));
        let dir = [theta.cos(), theta.sin() * phi.sin(), theta.sin() * phi.cos()];
        let a = [20.0 + rng.random_range(-0.5..0.5), 20.0 + rng.random_range(-0.5..0.5), 20.0 + rng.random_range(-0.5..0.5)];
        let b = [a[0] + len * dir[0], a[1] + len * dir[1], a[2] + len * dir[2]];
        let capsule = SwcMorphology::new(vec![node(1, a, r, -1), node(2, b, r, 1)]).unwrap();
        let count = rasterize(&capsule, [40, 40, 40]).count_ones() as f64;
        let analytic = std::f64::consts::PI * r * r * len + 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        let rel = (count - analytic).abs() / analytic;
        ensure(rel <= 0.15, || format!("capsule {i}: {count} voxels vs analytic {analytic:.1}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("sphere 33 voxels; 20 capsules, worst deviation {:.1}%", worst * 100.0))
}

fn main() -> ExitCode {
    let criteria: [(u8, &str, fn() -> Outcome); 8] = [
        (1, "perfect reconstruction", perfect_reconstruction),
        (2, "haar anchor", haar_anchor),
        (3, "gradient correctness", gradients),
        (4, "parameter counts", parameter_counts),
        (5, "pipeline identity", pipeline_identity),
        (6, "desk-scale learning", desk_scale_learning),
        (7, "hard shrink", hard_shrink_mapping),
        (8, "rasterization", rasterization),
    ];
    let only: Option<u8> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
