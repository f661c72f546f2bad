//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! b"MSTCN001"
//! u64 header length, header JSON (model spec and run metadata)
//! u64 tensor count
//! per tensor: u32 name length, UTF-8 name, u32 rank, rank x u64 extents,
//!             f32 values
//! ```
//!
//! Batchnorm running statistics are stored as the tensors
//! `<layer>.running_mean`, `<layer>.running_var` and `<layer>.updates`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::disk::write_atomic;
use crate::error::{Error, Result};
use crate::model::{LipReader, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MSTCN001";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelSpec,
    /// Free-form run metadata (training config, epoch, ...).
    #[serde(default)]
    pub run: serde_json::Value,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        msg: msg.into(),
    }
}

/// Named tensors of a model in a fixed order.
pub fn named_tensors(model: &LipReader<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out: Vec<(String, Tensor<f32>)> = model
        .store
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    for s in model.store.stats() {
        let c = s.mean.len();
        out.push((
            format!("{}.running_mean", s.name),
            Tensor::new(vec![c], s.mean.clone()).unwrap(),
        ));
        out.push((
            format!("{}.running_var", s.name),
            Tensor::new(vec![c], s.var.clone()).unwrap(),
        ));
        out.push((
            format!("{}.updates", s.name),
            Tensor::scalar(s.updates as f32).reshape(&[1]).unwrap(),
        ));
    }
    out
}

pub fn encode(model: &LipReader<f32>, run: serde_json::Value) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&CheckpointHeader {
        model: model.spec.clone(),
        run,
    })?;
    let tensors = named_tensors(model);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| format_err("length overflows usize"))
    }
}

/// Parses the header and tensors without building a model.
pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<(String, Tensor<f32>)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let hlen = r.u64()?;
    let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
    let count = r.u64()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| format_err("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format_err("tensor too large"))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| format_err("tensor too large"))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(format_err("trailing bytes after last tensor"));
    }
    Ok((header, tensors))
}

/// Rebuilds the model described by the header and loads every tensor,
/// requiring names and shapes to match exactly.
pub fn restore(bytes: &[u8]) -> Result<(LipReader<f32>, serde_json::Value)> {
    let (header, tensors) = decode(bytes)?;
    let mut model = LipReader::<f32>::new(header.model, 0)?;
    let expected = named_tensors(&model);
    if expected.len() != tensors.len() {
        return Err(Error::Incompatible(format!(
            "expected {} tensors, file has {}",
            expected.len(),
            tensors.len()
        )));
    }
    for ((want, w), (got, g)) in expected.iter().zip(&tensors) {
        if want != got || w.shape() != g.shape() {
            return Err(Error::Incompatible(format!(
                "expected `{want}` {:?}, found `{got}` {:?}",
                w.shape(),
                g.shape()
            )));
        }
    }
    let n = model.store.params().len();
    for (p, (_, t)) in model.store.params_mut().iter_mut().zip(&tensors[..n]) {
        p.value = t.clone();
    }
    for (s, chunk) in model
        .store
        .stats_mut()
        .iter_mut()
        .zip(tensors[n..].chunks(3))
    {
        s.mean = chunk[0].1.data().to_vec();
        s.var = chunk[1].1.data().to_vec();
        s.updates = chunk[2].1.data()[0] as u64;
    }
    Ok((model, header.run))
}

pub fn save(path: &Path, model: &LipReader<f32>, run: serde_json::Value) -> Result<()> {
    write_atomic(path, &encode(model, run)?)
}

pub fn load(path: &Path) -> Result<(LipReader<f32>, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(&bytes)
}
