//! Binary checkpoint format.
//!
//! ```text
//! magic "MCDSCKPT" | version u32
//! n_params u32, then per parameter:
//!   name_len u32 | name utf-8 | trainable u8 | ndim u32 | dims u64* | values f64*
//! has_optimizer u8, then if 1:
//!   step u64 | lr, beta1, beta2, eps, weight_decay f64
//!   n_moments u32, then per entry: name | len u64 | m f64* | v f64*
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::{Module, Parameter};
use crate::optim::AdamW;

pub const MAGIC: &[u8; 8] = b"MCDSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error("checkpoint does not match the model: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedParam {
    pub name: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<SavedParam>,
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn capture(module: &impl Module, optimizer: Option<&AdamW>) -> Self {
        Self {
            params: module
                .parameters()
                .into_iter()
                .map(|p| SavedParam {
                    name: p.name().to_string(),
                    trainable: p.trainable(),
                    shape: p.shape().to_vec(),
                    values: p.values().to_vec(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Copies the saved values into `module`, matching by name and shape.
    pub fn restore(&self, module: &mut impl Module) -> Result<(), CheckpointError> {
        let mut saved: BTreeMap<&str, &SavedParam> =
            self.params.iter().map(|p| (p.name.as_str(), p)).collect();
        for p in module.parameters_mut() {
            let s = saved
                .remove(p.name())
                .ok_or_else(|| CheckpointError::Incompatible(format!("missing {}", p.name())))?;
            if s.shape != p.shape() {
                return Err(CheckpointError::Incompatible(format!(
                    "{}: saved shape {:?}, model shape {:?}",
                    p.name(),
                    s.shape,
                    p.shape()
                )));
            }
            p.set_values(s.values.clone())
                .map_err(|e| CheckpointError::Incompatible(e.to_string()))?;
        }
        if let Some(extra) = saved.keys().next() {
            return Err(CheckpointError::Incompatible(format!("unexpected {extra}")));
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        put_u32(w, self.params.len())?;
        for p in &self.params {
            put_str(w, &p.name)?;
            w.write_all(&[p.trainable as u8])?;
            put_u32(w, p.shape.len())?;
            for &d in &p.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            put_f64s(w, &p.values)?;
        }
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(opt) => {
                w.write_all(&[1])?;
                w.write_all(&opt.step.to_le_bytes())?;
                put_f64s(
                    w,
                    &[opt.lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay],
                )?;
                put_u32(w, opt.moments.len())?;
                for (name, (m, v)) in &opt.moments {
                    put_str(w, name)?;
                    w.write_all(&(m.len() as u64).to_le_bytes())?;
                    put_f64s(w, m)?;
                    put_f64s(w, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = get_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let n = get_u32(r)? as usize;
        let mut params = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = get_str(r)?;
            let trainable = get_u8(r)? != 0;
            let ndim = get_u32(r)? as usize;
            let shape = (0..ndim)
                .map(|_| get_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let values = get_f64s(r, shape.iter().product())?;
            params.push(SavedParam {
                name,
                trainable,
                shape,
                values,
            });
        }
        let optimizer = match get_u8(r)? {
            0 => None,
            1 => {
                let step = get_u64(r)?;
                let h = get_f64s(r, 5)?;
                let mut opt = AdamW::new(h[0], h[4]);
                opt.beta1 = h[1];
                opt.beta2 = h[2];
                opt.eps = h[3];
                opt.step = step;
                for _ in 0..get_u32(r)? {
                    let name = get_str(r)?;
                    let len = get_u64(r)? as usize;
                    let m = get_f64s(r, len)?;
                    let v = get_f64s(r, len)?;
                    opt.moments.insert(name, (m, v));
                }
                Some(opt)
            }
            flag => return Err(CheckpointError::Malformed(format!("optimizer flag {flag}"))),
        };
        Ok(Self { params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn truncated(e: io::Error) -> CheckpointError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Malformed("truncated".into())
    } else {
        CheckpointError::Io(e)
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> io::Result<()> {
    w.write_all(&(v as u32).to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u8(r: &mut impl Read) -> Result<u8, CheckpointError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

fn get_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String, CheckpointError> {
    let len = get_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(truncated)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Convenience for modules that hold their parameters in a flat list.
impl Module for Vec<Parameter> {
    fn parameters(&self) -> Vec<&Parameter> {
        self.iter().collect()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.iter_mut().collect()
    }
}
