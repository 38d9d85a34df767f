//! Training driver that writes per-epoch checkpoints and a metrics table,
//! plus the on-disk cube dataset layout shared with `make-cubes`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;
use wavecube_core::train::{fit, split_validation, FitEvent, FitOutcome, Sample, TrainConfig, TrainError};
use wavecube_core::NetworkSpec;

use crate::checkpoint::{self, CheckpointError};
use crate::nvol::{self, NvolError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("no cube_*_image.nvol files in {0}")]
    EmptyDataset(PathBuf),
    #[error("{0} has no matching label file")]
    MissingLabel(PathBuf),
    #[error(transparent)]
    Nvol(#[from] NvolError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.into(), source }
}

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("cube_{index:05}_image.nvol"))
}

pub fn label_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("cube_{index:05}_label.nvol"))
}

/// Loads every `cube_*_image.nvol` / `cube_*_label.nvol` pair in `dir`,
/// sorted by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample<f32>>, RunError> {
    let mut images: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("cube_") && n.ends_with("_image.nvol"))
        })
        .collect();
    if images.is_empty() {
        return Err(RunError::EmptyDataset(dir.into()));
    }
    images.sort();
    images
        .into_iter()
        .map(|img| {
            let name = img.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let lab = img.with_file_name(name.replace("_image.nvol", "_label.nvol"));
            if !lab.exists() {
                return Err(RunError::MissingLabel(img));
            }
            Ok(Sample {
                image: nvol::read_volume(&img)?.into_f32(),
                labels: nvol::read_volume(&lab)?.into_labels()?,
            })
        })
        .collect()
}

/// Splits `data`, trains, and writes `epoch-NNN.wckp`, `final.wckp` and
/// `metrics.tsv` under `out`. `meta` is copied into every checkpoint and
/// into the metrics header.
pub fn train_to_dir(
    spec: &NetworkSpec,
    data: &[Sample<f32>],
    cfg: &TrainConfig,
    out: &Path,
    meta: &BTreeMap<String, String>,
    mut progress: impl FnMut(&str),
) -> Result<FitOutcome<f32>, RunError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let (train_idx, val_idx) = split_validation(data.len(), cfg.validation_fraction, cfg.seed);
    let train: Vec<Sample<f32>> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let val: Vec<Sample<f32>> = val_idx.iter().map(|&i| data[i].clone()).collect();

    let metrics_path = out.join("metrics.tsv");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
    let mut header = String::new();
    for (k, v) in meta {
        header.push_str(&format!("# {k}={v}\n"));
    }
    header.push_str(&format!(
        "# train_cubes={} validation_cubes={}\n# lr schedule: poly, power {}\n# loss: class-weighted cross entropy, weights {:?}, normalized by summed voxel weights\n",
        train.len(),
        val.len(),
        cfg.poly_power,
        cfg.class_weights
    ));
    header.push_str("epoch\titeration\tlr\tloss\tiou_bg\tiou_fg\tiou_mean\n");
    metrics.write_all(header.as_bytes()).map_err(io_err(&metrics_path))?;

    let outcome = fit(spec, &train, &val, cfg, |event| {
        let line = match &event {
            FitEvent::Iteration(r) => format!("{}\t{}\t{:.6e}\t{:.6}\t-\t-\t-\n", r.epoch, r.iteration, r.lr, r.loss),
            FitEvent::Epoch { record, network, state } => {
                let mut m = meta.clone();
                m.insert("epoch".into(), record.epoch.to_string());
                m.insert("iteration".into(), state.iteration.to_string());
                let path = out.join(format!("epoch-{:03}.wckp", record.epoch));
                checkpoint::save(&path, network, &m).map_err(|e| e.to_string())?;
                let (bg, fg, mean) = match record.validation {
                    Some(s) => (format!("{:.6}", s.background), format!("{:.6}", s.foreground), format!("{:.6}", s.mean)),
                    None => ("-".into(), "-".into(), "-".into()),
                };
                progress(&format!(
                    "epoch {} mean loss {:.5} val IoU bg {bg} fg {fg} mean {mean}",
                    record.epoch, record.mean_loss
                ));
                format!("{}\tepoch\t-\t{:.6}\t{bg}\t{fg}\t{mean}\n", record.epoch, record.mean_loss)
            }
        };
        metrics.write_all(line.as_bytes()).map_err(|e| e.to_string())?;
        if matches!(event, FitEvent::Epoch { .. }) {
            metrics.flush().map_err(|e| e.to_string())?;
        }
        Ok(())
    })?;
    metrics.flush().map_err(io_err(&metrics_path))?;
    let mut m = meta.clone();
    m.insert("epoch".into(), outcome.epochs.len().to_string());
    m.insert("iteration".into(), outcome.state.iteration.to_string());
    checkpoint::save(out.join("final.wckp"), &outcome.network, &m)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wavecube_core::data::{generate_phantom, PhantomConfig};
    use wavecube_core::DualStructure;

    #[test]
    fn dataset_round_trip_and_missing_label() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let cfg = PhantomConfig { dims: [16, 16, 16], tubes: 1, seed: i as u64, ..Default::default() };
            let (img, lab) = generate_phantom::<f32>(&cfg).unwrap();
            nvol::write_volume(image_path(dir.path(), i), &img.into()).unwrap();
            nvol::write_volume(label_path(dir.path(), i), &lab.into()).unwrap();
        }
        let data = load_dataset(dir.path()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data[0].image.dims(), [16, 16, 16]);
        fs::remove_file(label_path(dir.path(), 1)).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(RunError::MissingLabel(_))));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(empty.path()), Err(RunError::EmptyDataset(_))));
    }

    #[test]
    fn writes_checkpoints_and_metrics() {
        let data: Vec<Sample<f32>> = (0..4)
            .map(|i| {
                let cfg = PhantomConfig { dims: [16, 16, 16], tubes: 1, seed: i, ..Default::default() };
                let (image, labels) = generate_phantom(&cfg).unwrap();
                Sample { image, labels }
            })
            .collect();
        let mut spec = NetworkSpec::published(DualStructure::Pu, None).unwrap();
        spec.levels = 1;
        spec.encoder_channels.truncate(1);
        spec.bottom_channels = (4, 4);
        spec.decoder_channels = vec![(8, 4)];
        let cfg = TrainConfig { epochs: 2, batch_size: 2, validation_fraction: 0.25, ..Default::default() };
        let out = tempfile::tempdir().unwrap();
        let meta = BTreeMap::from([("seed".to_string(), "0".to_string())]);
        let outcome = train_to_dir(&spec, &data, &cfg, out.path(), &meta, |_| {}).unwrap();
        assert_eq!(outcome.epochs.len(), 2);
        for name in ["epoch-001.wckp", "epoch-002.wckp", "final.wckp", "metrics.tsv"] {
            assert!(out.path().join(name).exists(), "{name}");
        }
        let text = fs::read_to_string(out.path().join("metrics.tsv")).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "epoch\titeration\tlr\tloss\tiou_bg\tiou_fg\tiou_mean");
        assert_eq!(rows.iter().filter(|r| r.contains("\tepoch\t")).count(), 2);
        let (ck, _) = checkpoint::load(out.path().join("final.wckp")).unwrap();
        assert_eq!(ck.meta["epoch"], "2");
        let net: wavecube_core::Network<f32> = ck.into_network().unwrap();
        for (a, b) in net.params().iter().zip(outcome.network.params().iter()) {
            assert_eq!(a.value, b.value);
        }
    }
}
