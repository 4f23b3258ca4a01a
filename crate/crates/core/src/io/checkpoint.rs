//! `SUAD` model checkpoints.
//!
//! Layout: `"SUAD"`, version `u32`, the architecture (kind string, input dims
//! `3 × u32`, latent size `u32`, channel count `u32` and channels), a
//! metadata block of length-prefixed key/value strings, the parameter
//! tensors in declared order (`u32` rank, `u32` dims, `f32` values), then a
//! `u64` checksum: the first eight bytes of the SHA-256 digest of everything
//! before it, read little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::models::{ArchConfig, Model, ModelKind};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SUAD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Provenance such as the root seed.
    pub meta: BTreeMap<String, String>,
}

/// Header fields and checksum status, readable without trusting the payload.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub version: u32,
    pub kind: ModelKind,
    pub arch: ArchConfig,
    pub meta: BTreeMap<String, String>,
    pub parameter_count: usize,
    pub stored_checksum: u64,
    pub computed_checksum: u64,
}

impl CheckpointInfo {
    pub fn checksum_ok(&self) -> bool {
        self.stored_checksum == self.computed_checksum
    }
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let ae = ck.model.as_autoencoder();
    let arch = ae.arch();
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.str(ae.kind().as_str());
    for d in arch.input_dims {
        w.len_u32(d);
    }
    w.len_u32(arch.latent_dim);
    w.len_u32(arch.channels.len());
    for &c in &arch.channels {
        w.len_u32(c);
    }
    w.len_u32(ck.meta.len());
    for (k, v) in &ck.meta {
        w.str(k);
        w.str(v);
    }
    let tensors = ae.tensors();
    w.len_u32(tensors.len());
    for t in tensors {
        w.len_u32(t.ndim());
        for &d in t.shape() {
            w.len_u32(d);
        }
        w.f32s(t.data());
    }
    let sum = checksum(&w.buf);
    w.u64(sum);
    w.buf
}

struct Parsed {
    info: CheckpointInfo,
    tensors: Vec<Tensor<f32>>,
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    if bytes.len() < 8 {
        return Err(Error::Format(format!(
            "truncated checkpoint: expected at least 8 bytes, file has {}",
            bytes.len()
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut r = ByteReader::new(body, "checkpoint");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version}, expected {VERSION}"
        )));
    }
    let stored_checksum = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed_checksum = checksum(body);
    let kind = ModelKind::parse(&r.str()?).map_err(|e| Error::Format(e.to_string()))?;
    let input_dims = [r.usize()?, r.usize()?, r.usize()?];
    let latent_dim = r.usize()?;
    let n_ch = r.usize()?;
    let channels = (0..n_ch).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let arch = ArchConfig {
        input_dims,
        latent_dim,
        channels,
    };
    let mut meta = BTreeMap::new();
    for _ in 0..r.usize()? {
        let k = r.str()?;
        meta.insert(k, r.str()?);
    }
    let mut tensors = Vec::new();
    for _ in 0..r.usize()? {
        let rank = r.usize()?;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("implausible tensor shape {shape:?}")))?;
        let t = Tensor::new(shape, r.f32s(n)?).map_err(|e| Error::Format(e.to_string()))?;
        tensors.push(t);
    }
    r.finish()?;
    let parameter_count = tensors.iter().map(|t| t.numel()).sum();
    Ok(Parsed {
        info: CheckpointInfo {
            version,
            kind,
            arch,
            meta,
            parameter_count,
            stored_checksum,
            computed_checksum,
        },
        tensors,
    })
}

/// Parses the header and verifies the checksum without rejecting a mismatch.
pub fn inspect(bytes: &[u8]) -> Result<CheckpointInfo> {
    parse(bytes).map(|p| p.info)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let Parsed { info, tensors } = parse(bytes)?;
    if !info.checksum_ok() {
        return Err(Error::Checksum {
            stored: info.stored_checksum,
            computed: info.computed_checksum,
        });
    }
    info.arch.validate()?;
    let model = Model::from_tensors(info.kind, &info.arch, tensors)?;
    Ok(Checkpoint {
        model,
        meta: info.meta,
    })
}

pub fn write(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &encode(ck))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    decode(&read_file(path)?)
}
