//! Binary checkpoint files.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! "RGFM"                 4 bytes
//! version                u32 (= 1)
//! config echo            u32 byte length, UTF-8 text
//! step                   u64
//! parameter count        u32
//! per parameter          u32 path length, path, u32 rank, rank × u32 dims,
//!                        numel × f32 values
//! optimizer flag         u8 (0 = absent, 1 = present)
//! optimizer block        t u64, lr f64, beta1 f64, beta2 f64, eps f64,
//!                        weight_decay f64, then per parameter in the same
//!                        order: numel × f64 master weights, numel × f64 m,
//!                        numel × f64 v
//! ```
//!
//! The `f32` records are the portable weights. When the optimizer block is
//! present its `f64` master copy is what training resumes from, so resuming
//! continues the exact trajectory. Loading without it widens the `f32`
//! values. In both cases the `f32` records are regenerated from the loaded
//! weights, which makes load followed by save byte-identical.

use std::fs;
use std::path::Path;

use regformer::model::param_layout;
use regformer::nn::{AdamW, OptimState, ParamStore};
use regformer::Tensor;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

pub const MAGIC: &[u8; 4] = b"RGFM";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    Magic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the checkpoint")]
    Trailing(usize),
    #[error("embedded config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Corrupt(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub params: ParamStore,
    pub optim: Option<OptimState>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.array(what)?) as usize)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(
            n.checked_mul(8).ok_or(CheckpointError::Truncated(what))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let n = self.u32(what)?;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CheckpointError::Corrupt(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let echo = self.config.echo();
        put_u32(&mut out, echo.len());
        out.extend_from_slice(echo.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_u32(&mut out, self.params.len());
        for (path, t) in self.params.iter() {
            put_u32(&mut out, path.len());
            out.extend_from_slice(path.as_bytes());
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        match &self.optim {
            None => out.push(0),
            Some(st) => {
                out.push(1);
                out.extend_from_slice(&st.t.to_le_bytes());
                let h = st.hyper;
                put_f64s(&mut out, &[st.lr, h.beta1, h.beta2, h.eps, h.weight_decay]);
                for (path, p) in self.params.iter() {
                    put_f64s(&mut out, p.data());
                    for moment in [&st.m, &st.v] {
                        let data = moment.get(path).expect("optimizer tracks every parameter");
                        put_f64s(&mut out, data.data());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes };
        if r.take(4, "magic").map_err(|_| CheckpointError::Magic)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32("version")? as u32;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config = RunConfig::parse(&r.string("config echo")?)?;
        let step = r.u64("step")?;
        let count = r.u32("parameter count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let path = r.string("parameter path")?;
            let rank = r.u32("parameter rank")?;
            let shape = (0..rank)
                .map(|_| r.u32("parameter shape"))
                .collect::<Result<Vec<_>, _>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel
                .ok_or_else(|| CheckpointError::Corrupt(format!("`{path}`: shape overflows")))?;
            let raw = r.take(numel.saturating_mul(4), "parameter values")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Corrupt(format!("`{path}`: {e}")))?;
            params
                .insert(path, t)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
        check_layout(&config, &params)?;

        let optim = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let t = r.u64("optimizer step")?;
                let lr = r.f64("learning rate")?;
                let hyper = AdamW {
                    beta1: r.f64("beta1")?,
                    beta2: r.f64("beta2")?,
                    eps: r.f64("eps")?,
                    weight_decay: r.f64("weight decay")?,
                };
                let mut st = OptimState::new(&params, hyper, lr);
                st.t = t;
                let paths: Vec<String> = params.paths().map(str::to_owned).collect();
                for path in &paths {
                    let p = params.get_mut(path).expect("path from store");
                    let master = r.f64s(p.numel(), "master weights")?;
                    if master
                        .iter()
                        .zip(p.data())
                        .any(|(m, w)| (*m as f32) as f64 != *w)
                    {
                        return Err(CheckpointError::Corrupt(format!(
                            "`{path}`: master weights disagree with the stored f32 values"
                        )));
                    }
                    p.data_mut().copy_from_slice(&master);
                    for moment in [&mut st.m, &mut st.v] {
                        let dst = moment.get_mut(path).expect("same layout");
                        let vals = r.f64s(dst.numel(), "optimizer moments")?;
                        dst.data_mut().copy_from_slice(&vals);
                    }
                }
                Some(st)
            }
            f => return Err(CheckpointError::Corrupt(format!("optimizer flag {f}"))),
        };
        if !r.buf.is_empty() {
            return Err(CheckpointError::Trailing(r.buf.len()));
        }
        Ok(Self {
            config,
            step,
            params,
            optim,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Paths and shapes must match the layout the config implies, in order.
fn check_layout(config: &RunConfig, params: &ParamStore) -> Result<(), CheckpointError> {
    let layout = param_layout(&config.model).map_err(|e| CheckpointError::Layout(e.to_string()))?;
    if layout.len() != params.len() {
        return Err(CheckpointError::Layout(format!(
            "config implies {} tensors, file holds {}",
            layout.len(),
            params.len()
        )));
    }
    for (spec, (path, t)) in layout.iter().zip(params.iter()) {
        if spec.path != path {
            return Err(CheckpointError::Layout(format!(
                "expected `{}`, found `{path}`",
                spec.path
            )));
        }
        if spec.shape != t.shape() {
            return Err(CheckpointError::Layout(format!(
                "`{path}` has shape {:?}, expected {:?}",
                t.shape(),
                spec.shape
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use regformer::model::init_params;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.model.base_channels = 4;
        c.model.blocks = [1; 4];
        c.model.heads = [1; 4];
        c
    }

    #[test]
    fn round_trip_without_optimizer() {
        let cfg = tiny();
        let params = init_params(&cfg.model, 3).unwrap();
        let ck = Checkpoint {
            config: cfg,
            step: 7,
            params,
            optim: None,
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.step, 7);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn round_trip_keeps_master_weights() {
        let cfg = tiny();
        let params = init_params(&cfg.model, 3).unwrap();
        let mut st = OptimState::new(&params, AdamW::default(), 1e-3);
        st.t = 4;
        st.m.iter_mut().for_each(|(_, t)| t.data_mut().fill(0.125));
        let ck = Checkpoint {
            config: cfg,
            step: 4,
            params,
            optim: Some(st),
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let cfg = tiny();
        let params = init_params(&cfg.model, 0).unwrap();
        let bytes = Checkpoint {
            config: cfg,
            step: 0,
            params,
            optim: None,
        }
        .to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::Magic)
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::Version(9))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&long),
            Err(CheckpointError::Trailing(1))
        ));
    }
}
