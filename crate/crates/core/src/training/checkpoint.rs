//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"MARS" | version u32 | meta_len u32 | meta (key = value lines)
//! | n_tensors u32 | { name_len u32 | name | ndim u32 | dims u64.. | f64.. }
//! | crc32 u32 over everything before it
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{parse_key_values, Model, ModelDims, ModelParams, Result, TrainConfig, TrainError};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"MARS";
pub const FORMAT_VERSION: u32 = 1;

/// A saved model with the config and metrics it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub config: TrainConfig,
    pub epoch: usize,
    pub metrics: BTreeMap<String, f64>,
    pub params: ModelParams<Tensor>,
}

impl Checkpoint {
    pub fn model(&self) -> Model {
        Model {
            dims: self.dims,
            params: self.params.clone(),
        }
    }

    fn metadata(&self) -> String {
        let d = &self.dims;
        let mut meta = BTreeMap::new();
        for (k, v) in self.config.to_map() {
            meta.insert(format!("config.{k}"), v);
        }
        meta.insert("dims.n_users".into(), d.n_users.to_string());
        meta.insert("dims.n_items".into(), d.n_items.to_string());
        meta.insert("dims.user_dim".into(), d.user_dim.to_string());
        for (m, fd) in d.feature_dims.iter().enumerate() {
            meta.insert(format!("dims.feature{m}"), fd.to_string());
        }
        meta.insert("dims.dim".into(), d.dim.to_string());
        meta.insert("dims.hops".into(), d.hops.to_string());
        meta.insert("dims.d_k".into(), d.d_k.to_string());
        meta.insert("epoch".into(), self.epoch.to_string());
        for (k, v) in &self.metrics {
            meta.insert(format!("metric.{k}"), format!("{v:?}"));
        }
        meta.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| corrupt(format!("length {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes a checkpoint. Identical inputs give identical bytes.
pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let meta = ck.metadata();
    put_u32(&mut out, meta.len())?;
    out.extend_from_slice(meta.as_bytes());
    let entries = ck.params.entries();
    put_u32(&mut out, entries.len())?;
    for (name, t) in entries {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn field<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt(format!("missing or invalid metadata {key}")))
}

/// Parses checkpoint bytes, checking magic, checksum and version in that
/// order.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    if bytes.len() < 12 {
        return Err(TrainError::Checksum { expected: 0, found: 0 });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let expected = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let found = crc32fast::hash(body);
    if expected != found {
        return Err(TrainError::Checksum { expected, found });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(TrainError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let meta_len = r.u32()?;
    let meta_text = std::str::from_utf8(r.take(meta_len)?).map_err(|_| corrupt("metadata is not UTF-8"))?;
    let meta = parse_key_values(meta_text)?;

    let dims = ModelDims {
        n_users: field(&meta, "dims.n_users")?,
        n_items: field(&meta, "dims.n_items")?,
        user_dim: field(&meta, "dims.user_dim")?,
        feature_dims: [
            field(&meta, "dims.feature0")?,
            field(&meta, "dims.feature1")?,
            field(&meta, "dims.feature2")?,
            field(&meta, "dims.feature3")?,
        ],
        dim: field(&meta, "dims.dim")?,
        hops: field(&meta, "dims.hops")?,
        d_k: field(&meta, "dims.d_k")?,
    };
    let config_map = meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
        .collect();
    let config = TrainConfig::from_map(&config_map)?;
    let epoch = field(&meta, "epoch")?;
    let mut metrics = BTreeMap::new();
    for (k, _) in meta.iter().filter(|(k, _)| k.starts_with("metric.")) {
        metrics.insert(k["metric.".len()..].to_string(), field(&meta, k)?);
    }

    let count = r.u32()?;
    let mut named = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let ndim = r.u32()?;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(usize::try_from(r.u64()?).map_err(|_| corrupt("dimension overflows"))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt("tensor size overflows"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor size overflows"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?;
        named.push((name, t));
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after tensors"));
    }
    let params = ModelParams::from_named(&dims, named)?;
    Ok(Checkpoint {
        dims,
        config,
        epoch,
        metrics,
        params,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck)?;
    fs::write(path, bytes).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
