//! Parameter checkpoints.
//!
//! Layout: the line `WCKP1`, `key=value` metadata lines (the network spec
//! under a `spec.` prefix), the line `params`, one
//! `name\tdtype\tshape\toffset\tlen` line per tensor, an empty line, then
//! the concatenated little-endian blobs. Offsets are relative to the start
//! of the blob area.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;
use wavecube_core::arch::ArchError;
use wavecube_core::nn::Tensor;
use wavecube_core::{Network, NetworkSpec, Real};

const MAGIC: &str = "WCKP1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (missing WCKP1 header)")]
    BadMagic,
    #[error("malformed manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("tensor {name}: blob range {offset}+{len} exceeds {available} bytes")]
    Truncated {
        name: String,
        offset: usize,
        len: usize,
        available: usize,
    },
    #[error("checkpoint has no tensor for parameter {0}")]
    MissingTensor(String),
    #[error("checkpoint tensor {0} matches no parameter")]
    UnknownTensor(String),
    #[error("tensor {name}: shape {found:?}, network expects {expected:?}")]
    Shape {
        name: String,
        expected: [usize; 5],
        found: [usize; 5],
    },
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A decoded checkpoint before it is bound to a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    /// Free-form metadata (epoch, seed, ...), excluding the spec.
    pub meta: BTreeMap<String, String>,
    tensors: Vec<(String, [usize; 5], Vec<f64>, Vec<u32>)>,
}

fn dtype_name<T: Real>() -> &'static str {
    if T::BITS == 32 {
        "f32"
    } else {
        "f64"
    }
}

/// Serializes every parameter and buffer of `net`.
pub fn encode<T: Real>(net: &Network<T>, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let mut head = format!("{MAGIC}\n");
    for line in net.spec().to_config().lines() {
        let _ = writeln!(head, "spec.{line}");
    }
    for (k, v) in meta {
        let _ = writeln!(head, "{k}={v}");
    }
    head.push_str("params\n");
    let mut blob = Vec::new();
    for p in net.params().iter() {
        let shape = p.value.shape();
        let start = blob.len();
        for &v in p.value.as_slice() {
            if T::BITS == 32 {
                blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                blob.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        let _ = writeln!(
            head,
            "{}\t{}\t{}\t{}\t{}",
            p.name,
            dtype_name::<T>(),
            shape.map(|s| s.to_string()).join("x"),
            start,
            blob.len() - start
        );
    }
    head.push('\n');
    let mut out = head.into_bytes();
    out.extend_from_slice(&blob);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let sep = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or(CheckpointError::BadMagic)?;
    let head = std::str::from_utf8(&bytes[..sep + 1]).map_err(|_| CheckpointError::BadMagic)?;
    let blob = &bytes[sep + 2..];
    let mut lines = head.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(MAGIC) {
        return Err(CheckpointError::BadMagic);
    }
    let mut spec_text = String::new();
    let mut meta = BTreeMap::new();
    let mut in_params = false;
    let mut tensors = Vec::new();
    for (i, line) in lines {
        let bad = |message: &str| CheckpointError::Manifest {
            line: i + 1,
            message: message.into(),
        };
        if !in_params {
            if line == "params" {
                in_params = true;
            } else if let Some(rest) = line.strip_prefix("spec.") {
                spec_text.push_str(rest);
                spec_text.push('\n');
            } else {
                let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
                meta.insert(k.to_string(), v.to_string());
            }
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected five tab-separated fields"));
        }
        let width = match f[1] {
            "f32" => 4,
            "f64" => 8,
            _ => return Err(bad("dtype must be f32 or f64")),
        };
        let dims: Vec<usize> = f[2]
            .split('x')
            .map(|s| s.parse().map_err(|_| bad("bad shape")))
            .collect::<Result<_, _>>()?;
        let shape: [usize; 5] = dims.try_into().map_err(|_| bad("shape needs five extents"))?;
        let offset: usize = f[3].parse().map_err(|_| bad("bad offset"))?;
        let len: usize = f[4].parse().map_err(|_| bad("bad length"))?;
        if len != shape.iter().product::<usize>() * width {
            return Err(bad("length disagrees with shape"));
        }
        let raw = blob.get(offset..offset + len).ok_or(CheckpointError::Truncated {
            name: f[0].into(),
            offset,
            len,
            available: blob.len(),
        })?;
        let (values, bits): (Vec<f64>, Vec<u32>) = if width == 4 {
            raw.chunks_exact(4)
                .map(|c| {
                    let v = f32::from_le_bytes(c.try_into().expect("chunk"));
                    (v as f64, v.to_bits())
                })
                .unzip()
        } else {
            (raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk"))).collect(), Vec::new())
        };
        tensors.push((f[0].to_string(), shape, values, bits));
    }
    if !in_params {
        return Err(CheckpointError::Manifest {
            line: 0,
            message: "missing params section".into(),
        });
    }
    let spec = NetworkSpec::from_config(&spec_text)?;
    Ok(Checkpoint { spec, meta, tensors })
}

impl Checkpoint {
    /// Builds the network and loads every tensor. The tensor set must match
    /// the network's parameters exactly.
    pub fn into_network<T: Real>(self) -> Result<Network<T>, CheckpointError> {
        let mut net = Network::<T>::build(&self.spec, 0)?;
        let mut seen = vec![false; net.params().len()];
        for (name, shape, values, bits) in self.tensors {
            let id = net
                .params()
                .find(&name)
                .ok_or_else(|| CheckpointError::UnknownTensor(name.clone()))?;
            let expected = net.params().get(id).shape();
            if expected != shape {
                return Err(CheckpointError::Shape {
                    name,
                    expected,
                    found: shape,
                });
            }
            let data: Vec<T> = if T::BITS == 32 && !bits.is_empty() {
                bits.iter().map(|&b| T::lit(f32::from_bits(b) as f64)).collect()
            } else {
                values.into_iter().map(T::lit).collect()
            };
            *net.params_mut().get_mut(id) = Tensor::from_vec(shape, data).expect("shape checked");
            seen[id.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let id = net.params().ids().nth(i).expect("index in range");
            return Err(CheckpointError::MissingTensor(net.params().param(id).name.clone()));
        }
        Ok(net)
    }
}

pub fn save<T: Real>(path: impl AsRef<Path>, net: &Network<T>, meta: &BTreeMap<String, String>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, encode(net, meta)).map_err(|source| CheckpointError::Io {
        path: path.into(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<(Checkpoint, String), CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.into(),
        source,
    })?;
    Ok((decode(&bytes)?, short_digest(&bytes)))
}

/// First 12 hex digits of the SHA-256 of `bytes`.
pub fn short_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use wavecube_core::DualStructure;

    fn net<T: Real>(ds: DualStructure) -> Network<T> {
        let spec = NetworkSpec::published(ds, ds.uses_wavelet().then_some("db2")).unwrap();
        Network::build(&spec, 42).unwrap()
    }

    fn bits32(n: &Network<f32>) -> Vec<u32> {
        n.params().iter().flat_map(|p| p.value.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = net::<f32>(DualStructure::Didn);
        let meta = BTreeMap::from([("epoch".to_string(), "3".to_string())]);
        let ck = decode(&encode(&a, &meta)).unwrap();
        assert_eq!(ck.meta, meta);
        assert_eq!(&ck.spec, a.spec());
        let b: Network<f32> = ck.into_network().unwrap();
        assert_eq!(bits32(&a), bits32(&b));

        let a = net::<f64>(DualStructure::Pu);
        let b: Network<f64> = decode(&encode(&a, &BTreeMap::new())).unwrap().into_network().unwrap();
        for (x, y) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn corrupt_inputs() {
        let a = net::<f32>(DualStructure::Pu);
        let bytes = encode(&a, &BTreeMap::new());
        assert!(matches!(decode(b"junk\n\n"), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode(&bytes[..bytes.len() - 4]), Err(CheckpointError::Truncated { .. })));
        let text = String::from_utf8_lossy(&bytes).replace("enc1.conv1.weight\tf32\t4x1x3x3x3", "enc1.conv1.weight\tf32\t4x1x3x3");
        assert!(matches!(decode(text.as_bytes()), Err(CheckpointError::Manifest { .. })));
    }

    #[test]
    fn mismatched_network_is_rejected() {
        let a = net::<f32>(DualStructure::Pu);
        let mut ck = decode(&encode(&a, &BTreeMap::new())).unwrap();
        ck.spec = NetworkSpec::published(DualStructure::Pdc, None).unwrap();
        assert!(matches!(
            ck.into_network::<f32>(),
            Err(CheckpointError::MissingTensor(_) | CheckpointError::UnknownTensor(_) | CheckpointError::Shape { .. })
        ));
    }
}
