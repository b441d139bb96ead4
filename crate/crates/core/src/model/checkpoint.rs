//! The VLGC checkpoint file.
//!
//! ```text
//! magic "VLGC" | version u16 = 1
//! config: str (model key=value lines)
//! step u64
//! tensors u32, then per tensor: name: str | ndim u8 | dims u32… | f32 payload
//! ```
//!
//! Optimizer moments, when present, follow the parameters under the names
//! `opt.m/<name>` and `opt.v/<name>`.

use std::fs;
use std::path::Path;

use ndarray::ArrayViewD;

use super::params::{init_params, ParameterSet};
use super::{ModelConfig, ModelError};
use crate::features::{write_atomic, ArchiveError, Reader, Writer};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VLGC";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub step: u64,
    /// AdamW first and second moments.
    pub moments: Option<(ParameterSet, ParameterSet)>,
}

fn write_tensor(w: &mut Writer, name: &str, t: &ArrayViewD<f64>) -> Result<(), ArchiveError> {
    w.str(name)?;
    w.u8(t.ndim() as u8);
    for &d in t.shape() {
        w.u32(d)?;
    }
    let values: Vec<f32> = t.iter().map(|&v| v as f32).collect();
    w.f32s(&values);
    Ok(())
}

fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>, ArchiveError> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(&CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    let config: Vec<String> = ckpt
        .params
        .config
        .to_key_values()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    w.str(&config.join("\n"))?;
    w.u64(ckpt.step);
    let mut tensors = Vec::new();
    for (name, t) in ckpt.params.named_tensors() {
        tensors.push((name, t));
    }
    if let Some((m, v)) = &ckpt.moments {
        for (name, t) in m.named_tensors() {
            tensors.push((format!("opt.m/{name}"), t));
        }
        for (name, t) in v.named_tensors() {
            tensors.push((format!("opt.v/{name}"), t));
        }
    }
    w.u32(tensors.len())?;
    for (name, t) in &tensors {
        write_tensor(&mut w, name, t)?;
    }
    Ok(w.buf)
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn fill(target: &mut ParameterSet, prefix: &str, stored: &mut Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<(), ModelError> {
    for (name, mut t) in target.named_tensors_mut() {
        let key = format!("{prefix}{name}");
        let idx = stored
            .iter()
            .position(|(n, _, _)| *n == key)
            .ok_or_else(|| bad(format!("missing tensor {key}")))?;
        let (_, shape, values) = stored.swap_remove(idx);
        if shape != t.shape() {
            return Err(bad(format!(
                "tensor {key} has shape {shape:?}, config implies {:?}",
                t.shape()
            )));
        }
        for (dst, &src) in t.iter_mut().zip(&values) {
            *dst = f64::from(src);
        }
    }
    Ok(())
}

fn decode(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.array("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic bytes {magic:?}, expected \"VLGC\"")));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mut config = ModelConfig::default();
    for line in r.str("config")?.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed config line {line:?}")))?;
        config.set(k, v).map_err(bad)?;
    }
    let step = r.u64("step")?;
    let count = r.u32("tensor count")?;
    let mut stored = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str("tensor name")?;
        let ndim = r.u8(&name)? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32(&name))
            .collect::<Result<Vec<_>, _>>()?;
        let values = r.f32s(shape.iter().product(), &name)?;
        stored.push((name, shape, values));
    }
    r.finish()?;

    let mut params = init_params(&config, 0)?;
    fill(&mut params, "", &mut stored)?;
    let moments = if stored.iter().any(|(n, _, _)| n.starts_with("opt.")) {
        let mut m = params.zeros_like();
        let mut v = params.zeros_like();
        fill(&mut m, "opt.m/", &mut stored)?;
        fill(&mut v, "opt.v/", &mut stored)?;
        Some((m, v))
    } else {
        None
    };
    if let Some((name, _, _)) = stored.first() {
        return Err(bad(format!("unexpected tensor {name}")));
    }
    Ok(Checkpoint {
        params,
        step,
        moments,
    })
}

/// Writes atomically. Values are stored as f32, so a reload equals
/// `params.rounded_to_f32()`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    let bytes = encode(ckpt)?;
    write_atomic(path, &bytes).map_err(ArchiveError::from)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = fs::read(path).map_err(ArchiveError::from)?;
    decode(&bytes)
}
