//! `SVOL` volume files.
//!
//! Layout: `"SVOL"`, version `u32`, dims `3 × u32` (D, H, W), spacing
//! `3 × f32`, a metadata block (`u32` pair count, then length-prefixed UTF-8
//! keys and values: `subject`, `side`, `label`, `anomaly_type`, then any
//! extra keys in sorted order), then `D·H·W` `f32` voxels with `W` fastest.

use std::collections::BTreeMap;
use std::path::Path;

use super::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::volume::{AnomalyType, Label, Side, Volume, VolumeMeta};

pub const MAGIC: &[u8; 4] = b"SVOL";
pub const VERSION: u32 = 1;

const CORE_KEYS: [&str; 4] = ["subject", "side", "label", "anomaly_type"];

pub fn encode(v: &Volume) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    for d in v.dims {
        w.len_u32(d);
    }
    for s in v.spacing {
        w.f32(s);
    }
    let m = &v.meta;
    let core = [
        m.subject.as_str(),
        m.side.as_str(),
        m.label.as_str(),
        m.anomaly_type.as_str(),
    ];
    w.len_u32(CORE_KEYS.len() + m.extra.len());
    for (k, val) in CORE_KEYS.iter().zip(core) {
        w.str(k);
        w.str(val);
    }
    for (k, val) in &m.extra {
        w.str(k);
        w.str(val);
    }
    w.f32s(&v.data);
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<Volume> {
    let mut r = ByteReader::new(bytes, "volume file");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "volume format version {version}, expected {VERSION}"
        )));
    }
    let dims = [r.usize()?, r.usize()?, r.usize()?];
    let spacing = [r.f32()?, r.f32()?, r.f32()?];
    let pairs = r.usize()?;
    let mut kv = BTreeMap::new();
    for _ in 0..pairs {
        let k = r.str()?;
        let v = r.str()?;
        if kv.insert(k.clone(), v).is_some() {
            return Err(Error::Format(format!("volume metadata repeats key '{k}'")));
        }
    }
    let mut take = |k: &str| {
        kv.remove(k)
            .ok_or_else(|| Error::Format(format!("volume metadata lacks '{k}'")))
    };
    let meta = VolumeMeta {
        subject: take("subject")?,
        side: Side::parse(&take("side")?)?,
        label: Label::parse(&take("label")?)?,
        anomaly_type: AnomalyType::parse(&take("anomaly_type")?)?,
        extra: kv,
    };
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("implausible volume dims {dims:?}")))?;
    let data = r.f32s(n)?;
    r.finish()?;
    Volume::new(dims, spacing, data, meta).map_err(|e| Error::Format(e.to_string()))
}

pub fn write(path: &Path, v: &Volume) -> Result<()> {
    write_file(path, &encode(v))
}

pub fn read(path: &Path) -> Result<Volume> {
    decode(&read_file(path)?)
}
