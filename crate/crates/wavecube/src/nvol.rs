//! The NVOL container: `"NVOL"`, a version byte, a dtype byte, three
//! little-endian `u32` extents (z, y, x), then the little-endian payload in
//! z-y-x row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use wavecube_core::{LabelVolume, Volume};

pub const MAGIC: &[u8; 4] = b"NVOL";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8 = 1,
    F32 = 2,
    F64 = 3,
}

impl Dtype {
    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Dtype::U8),
            2 => Some(Dtype::F32),
            3 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

#[derive(Debug, Error)]
pub enum NvolError {
    #[error("not an NVOL file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported NVOL version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("payload is {actual} bytes, header declares {expected}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("header declares a zero extent {0:?}")]
    ZeroExtent([usize; 3]),
    #[error("expected {expected} volume, found {found}")]
    WrongDtype { expected: &'static str, found: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A volume of any stored dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    U8(LabelVolume),
    F32(Volume<f32>),
    F64(Volume<f64>),
}

impl AnyVolume {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyVolume::U8(_) => Dtype::U8,
            AnyVolume::F32(_) => Dtype::F32,
            AnyVolume::F64(_) => Dtype::F64,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        match self {
            AnyVolume::U8(v) => v.dims(),
            AnyVolume::F32(v) => v.dims(),
            AnyVolume::F64(v) => v.dims(),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume, NvolError> {
        match self {
            AnyVolume::U8(v) => Ok(v),
            other => Err(NvolError::WrongDtype {
                expected: "u8",
                found: other.dtype().name(),
            }),
        }
    }

    /// Image data as `f32`; `u8` and `f64` volumes are converted.
    pub fn into_f32(self) -> Volume<f32> {
        match self {
            AnyVolume::U8(v) => v.map(f32::from),
            AnyVolume::F32(v) => v,
            AnyVolume::F64(v) => v.map(|x| x as f32),
        }
    }
}

impl From<LabelVolume> for AnyVolume {
    fn from(v: LabelVolume) -> Self {
        AnyVolume::U8(v)
    }
}

impl From<Volume<f32>> for AnyVolume {
    fn from(v: Volume<f32>) -> Self {
        AnyVolume::F32(v)
    }
}

impl From<Volume<f64>> for AnyVolume {
    fn from(v: Volume<f64>) -> Self {
        AnyVolume::F64(v)
    }
}

pub fn encode(v: &AnyVolume) -> Vec<u8> {
    let dims = v.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + dims.iter().product::<usize>() * v.dtype().size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(v.dtype() as u8);
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match v {
        AnyVolume::U8(v) => out.extend_from_slice(v.as_slice()),
        AnyVolume::F32(v) => v.as_slice().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        AnyVolume::F64(v) => v.as_slice().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyVolume, NvolError> {
    if bytes.len() < HEADER_LEN {
        let mut magic = [0u8; 4];
        let n = bytes.len().min(4);
        magic[..n].copy_from_slice(&bytes[..n]);
        if &magic != MAGIC {
            return Err(NvolError::BadMagic(magic));
        }
        return Err(NvolError::TruncatedPayload {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if &magic != MAGIC {
        return Err(NvolError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(NvolError::UnsupportedVersion(bytes[4]));
    }
    let dtype = Dtype::from_code(bytes[5]).ok_or(NvolError::UnknownDtype(bytes[5]))?;
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let o = 6 + 4 * a;
        *d = u32::from_le_bytes(bytes[o..o + 4].try_into().expect("four bytes")) as usize;
    }
    if dims.contains(&0) {
        return Err(NvolError::ZeroExtent(dims));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = dims.iter().product::<usize>() * dtype.size();
    if payload.len() != expected {
        return Err(NvolError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    let vol = |data| Volume::from_vec(dims, data).expect("length checked");
    Ok(match dtype {
        Dtype::U8 => AnyVolume::U8(vol(payload.to_vec())),
        Dtype::F32 => AnyVolume::F32(Volume::from_vec(
            dims,
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk"))).collect(),
        ).expect("length checked")),
        Dtype::F64 => AnyVolume::F64(Volume::from_vec(
            dims,
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk"))).collect(),
        ).expect("length checked")),
    })
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume, NvolError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NvolError::Io {
        path: path.into(),
        source,
    })?;
    decode(&bytes)
}

pub fn write_volume(path: impl AsRef<Path>, v: &AnyVolume) -> Result<(), NvolError> {
    let path = path.as_ref();
    fs::write(path, encode(v)).map_err(|source| NvolError::Io {
        path: path.into(),
        source,
    })
}
