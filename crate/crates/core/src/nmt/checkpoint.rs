//! Binary checkpoints and checkpoint averaging.
//!
//! Layout: `SLNMT1`, a little-endian `u32` byte length followed by a
//! canonical `key=value` text block (sorted keys, one per line), a `u32`
//! record count, then per parameter: `u32` name length, name bytes, `u32`
//! rank, `u64` per dimension, and the values as little-endian IEEE-754
//! binary64.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::params::ParameterSet;

pub const MAGIC: &[u8; 6] = b"SLNMT1";
pub const VERSION: &str = "SLNMT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParameterSet<T>,
    pub step: u64,
    /// Free-form provenance such as training phase; keys must not contain `=` or newlines.
    pub meta: BTreeMap<String, String>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(config: ModelConfig, params: ParameterSet<T>, step: u64) -> Self {
        Checkpoint { config, params, step, meta: BTreeMap::new() }
    }

    fn header(&self) -> String {
        let mut kv = self.config.to_pairs();
        kv.insert("version".into(), VERSION.into());
        kv.insert("step".into(), self.step.to_string());
        for (k, v) in &self.meta {
            kv.insert(format!("meta.{k}"), v.clone());
        }
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::with_capacity(64 + header.len() + self.params.num_values() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Input("not a checkpoint: bad magic bytes".into()));
        }
        let hlen = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(hlen)?).map_err(|_| Error::Input("checkpoint header is not UTF-8".into()))?;
        let mut kv = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Input(format!("bad header line {line:?}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        if kv.get("version").map(String::as_str) != Some(VERSION) {
            return Err(Error::Input("unsupported checkpoint version".into()));
        }
        let config = ModelConfig::from_pairs(&kv)?;
        let step = kv
            .get("step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Input("checkpoint header lacks step".into()))?;
        let meta = kv.iter().filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone()))).collect();

        let count = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::Input("parameter name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let vals = (0..n).map(|_| r.u64().map(|b| T::from_f64_lossy(f64::from_bits(b)))).collect::<Result<Vec<_>>>()?;
            entries.insert(name, Tensor::new(shape, vals)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Input("trailing bytes after checkpoint records".into()));
        }
        let params = ParameterSet::from_entries(entries);
        params.check_layout(&config)?;
        Ok(Checkpoint { config, params, step, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Input("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Elementwise arithmetic mean of the parameters of `checkpoints`.
///
/// Computed as `x₀ + Σ(xᵢ − x₀)/k` so that identical inputs average to
/// themselves bit for bit.
pub fn average_checkpoints<T: Scalar>(checkpoints: &[&Checkpoint<T>]) -> Result<ParameterSet<T>> {
    let first = checkpoints.first().ok_or_else(|| Error::Contract("no checkpoints to average".into()))?;
    for c in &checkpoints[1..] {
        if c.config != first.config || !c.params.same_layout(&first.params) {
            return Err(Error::Contract(format!("checkpoint at step {} does not match step {}", c.step, first.step)));
        }
    }
    let k = T::from_usize(checkpoints.len()).unwrap();
    let mut avg = first.params.clone();
    for (name, t) in avg.iter_mut() {
        let rest = checkpoints[1..].iter().map(|c| c.params.get(name)).collect::<Result<Vec<_>>>()?;
        for (i, v) in t.values_mut().iter_mut().enumerate() {
            let base = *v;
            let mut spread = T::zero();
            for r in &rest {
                spread += r.values()[i] - base;
            }
            *v = base + spread / k;
        }
    }
    Ok(avg)
}
