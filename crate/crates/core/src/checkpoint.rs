//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! "CFGT" | u32 version
//! u32 len | config text (UTF-8, `key = value` lines)
//! u32 n_tensors | n × (u32 len | name | u8 dtype | u32 ndim | ndim × u64 dim | payload)
//! u8 has_optimizer | [f64 beta1 | f64 beta2 | f64 eps | u64 step |
//!                     u32 n | n × (u32 len | name | u8 dtype | u64 len | m payload | v payload)]
//! u64 global_step | u64 epoch_start_cursor | f64 best_metric | u64 best_step
//! ```
//!
//! Tensors and moments are written in sorted name order.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::config::{ConfigError, TrainConfig};
use crate::model::ModelParams;
use crate::optim::{AdamState, Moments};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"CFGT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?} at byte 0")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {version} at byte 4")]
    BadVersion { version: u32 },
    #[error("truncated checkpoint: needed {needed} bytes at byte offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("malformed checkpoint at byte offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// Where a run stood when the checkpoint was written.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub global_step: u64,
    pub epoch_start_cursor: u64,
    pub best_metric: f64,
    pub best_step: u64,
}

impl Default for Progress {
    fn default() -> Self {
        Self {
            global_step: 0,
            epoch_start_cursor: 0,
            best_metric: f64::NAN,
            best_step: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub config: TrainConfig,
    pub params: ModelParams<T>,
    pub optimizer: Option<AdamState<T>>,
    pub progress: Progress,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_values<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for &v in values {
        v.write_le(out);
    }
}

pub fn encode<T: Scalar>(ckpt: &Checkpoint<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, &ckpt.config.to_text());
    put_u32(&mut out, ckpt.params.tensors.len() as u32);
    for (name, t) in &ckpt.params.tensors {
        put_str(&mut out, name);
        out.push(T::DTYPE.tag());
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        put_values(&mut out, t.data());
    }
    match &ckpt.optimizer {
        None => out.push(0),
        Some(st) => {
            out.push(1);
            out.extend_from_slice(&st.beta1.to_le_bytes());
            out.extend_from_slice(&st.beta2.to_le_bytes());
            out.extend_from_slice(&st.eps.to_le_bytes());
            put_u64(&mut out, st.step);
            put_u32(&mut out, st.moments.len() as u32);
            for (name, m) in &st.moments {
                put_str(&mut out, name);
                out.push(T::DTYPE.tag());
                put_u64(&mut out, m.m.len() as u64);
                put_values(&mut out, &m.m);
                put_values(&mut out, &m.v);
            }
        }
    }
    let p = &ckpt.progress;
    put_u64(&mut out, p.global_step);
    put_u64(&mut out, p.epoch_start_cursor);
    out.extend_from_slice(&p.best_metric.to_le_bytes());
    put_u64(&mut out, p.best_step);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                len: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn malformed(&self, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CheckpointError::Malformed {
            offset: at,
            reason: "invalid UTF-8".into(),
        })
    }

    fn dtype(&mut self) -> Result<DType> {
        let tag = self.u8()?;
        DType::from_tag(tag).ok_or_else(|| self.malformed(format!("unknown dtype tag {tag}")))
    }

    fn values<T: Scalar>(&mut self, dtype: DType, n: usize) -> Result<Vec<T>> {
        let bytes = n
            .checked_mul(dtype.size_of())
            .ok_or_else(|| self.malformed("payload size overflow"))?;
        let raw = self.take(bytes)?;
        Ok(match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        })
    }
}

/// Decodes a checkpoint, converting stored values to `T`.
pub fn decode<T: Scalar>(buf: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4).map_err(|_| CheckpointError::BadMagic {
        found: buf[..buf.len().min(4)].to_vec(),
    })?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic.to_vec() });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion { version });
    }
    let config = TrainConfig::from_text(&r.string()?)?;
    let n = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..n {
        let name = r.string()?;
        let dtype = r.dtype()?;
        let ndim = r.u32()? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(r.malformed(format!("tensor {name} has {ndim} dimensions")));
        }
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let Some(count) = count.filter(|&c| c > 0) else {
            return Err(r.malformed(format!("tensor {name} has shape {shape:?}")));
        };
        let data = r.values(dtype, count)?;
        let t = Tensor::new(shape, data).map_err(|e| r.malformed(e.to_string()))?;
        tensors.insert(name, t);
    }
    let params = ModelParams {
        config: config.model,
        tensors,
    };
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let eps = r.f64()?;
            let step = r.u64()?;
            let n = r.u32()? as usize;
            let mut moments = BTreeMap::new();
            for _ in 0..n {
                let name = r.string()?;
                let dtype = r.dtype()?;
                let len = r.u64()? as usize;
                let m = r.values(dtype, len)?;
                let v = r.values(dtype, len)?;
                moments.insert(name, Moments { m, v });
            }
            Some(AdamState {
                beta1,
                beta2,
                eps,
                step,
                moments,
            })
        }
        other => return Err(r.malformed(format!("optimizer flag {other}"))),
    };
    let progress = Progress {
        global_step: r.u64()?,
        epoch_start_cursor: r.u64()?,
        best_metric: r.f64()?,
        best_step: r.u64()?,
    };
    if r.pos != buf.len() {
        return Err(r.malformed(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Checkpoint {
        config,
        params,
        optimizer,
        progress,
    })
}

pub fn save<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode(&std::fs::read(path)?)
}
