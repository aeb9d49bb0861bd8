//! Binary checkpoint container with a SHA-256 trailer, plus a JSON sidecar.
//!
//! Layout (little endian): magic `GGDQNCK\0`, format version `u32`, header
//! `kappa`, `features`, `actions` as `u32`, tensor count `u32`, then per
//! tensor a `u32` name length, the UTF-8 name, a `u64` element count and the
//! elements as `f64`. The final 32 bytes are the SHA-256 of everything
//! before them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::network::{tensor_specs, Adam, Dims, QNetwork};

pub const MAGIC: &[u8; 8] = b"GGDQNCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint checksum mismatch (file corrupt or truncated)")]
    Checksum,
    #[error("not a checkpoint file")]
    Magic,
    #[error("unsupported checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint architecture {found:?} does not match {expected:?}")]
    Dimension { found: Dims, expected: Dims },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("sidecar metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

/// Everything needed to resume learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub online: QNetwork,
    pub target: QNetwork,
    pub adam: Adam,
}

/// Sidecar metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: u64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub beta: f64,
    pub config_hash: String,
    /// Critical-state steps seen so far; drives the exploration schedule on resume.
    #[serde(default)]
    pub critical_steps: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, data: &[f64]) {
    buf.extend((name.len() as u32).to_le_bytes());
    buf.extend(name.as_bytes());
    buf.extend((data.len() as u64).to_le_bytes());
    for x in data {
        buf.extend(x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn dims(&self) -> Dims {
        self.online.dims()
    }

    fn tensors(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        let groups: [(&str, &[f64]); 4] = [
            ("online", self.online.params()),
            ("target", self.target.params()),
            ("adam.m", &self.adam.m),
            ("adam.v", &self.adam.v),
        ];
        for (prefix, flat) in groups {
            for spec in tensor_specs(self.dims()) {
                out.push((format!("{prefix}.{}", spec.name), flat[spec.as_range()].to_vec()));
            }
        }
        let a = &self.adam;
        out.push((
            "adam.hyper".into(),
            vec![a.lr0, a.beta1, a.beta2, a.eps, a.decay, a.decay_every as f64, a.t as f64],
        ));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dims();
        let tensors = self.tensors();
        let mut buf = Vec::new();
        buf.extend(MAGIC);
        buf.extend(FORMAT_VERSION.to_le_bytes());
        for x in [d.kappa, d.features, d.actions, tensors.len()] {
            buf.extend((x as u32).to_le_bytes());
        }
        for (name, data) in &tensors {
            put_tensor(&mut buf, name, data);
        }
        let digest = Sha256::digest(&buf);
        buf.extend(digest);
        buf
    }

    /// Parses and verifies a checkpoint; `expected` pins the architecture.
    pub fn from_bytes(bytes: &[u8], expected: Option<Dims>) -> Result<Self, CheckpointError> {
        if bytes.len() < 32 {
            return Err(CheckpointError::Checksum);
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let dims = Dims {
            kappa: r.u32()? as usize,
            features: r.u32()? as usize,
            actions: r.u32()? as usize,
        };
        if let Some(exp) = expected {
            if exp != dims {
                return Err(CheckpointError::Dimension {
                    found: dims,
                    expected: exp,
                });
            }
        }
        let count = r.u32()? as usize;
        let mut tensors = std::collections::HashMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not utf-8".into()))?;
            let len = r.u64()? as usize;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| CheckpointError::Malformed("tensor too large".into()))?)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(name, data);
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        let mut take = |name: &str| {
            tensors
                .remove(name)
                .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor {name}")))
        };
        let mut flat = |prefix: &str| -> Result<Vec<f64>, CheckpointError> {
            let mut out = Vec::new();
            for spec in tensor_specs(dims) {
                let t = take(&format!("{prefix}.{}", spec.name))?;
                if t.len() != spec.len {
                    return Err(CheckpointError::Malformed(format!("tensor {prefix}.{} has wrong length", spec.name)));
                }
                out.extend(t);
            }
            Ok(out)
        };
        let online = flat("online")?;
        let target = flat("target")?;
        let m = flat("adam.m")?;
        let v = flat("adam.v")?;
        let hyper = take("adam.hyper")?;
        if hyper.len() != 7 {
            return Err(CheckpointError::Malformed("adam.hyper has wrong length".into()));
        }
        let bad = |e: super::network::NetError| CheckpointError::Malformed(e.to_string());
        Ok(Self {
            online: QNetwork::from_params(dims, online).map_err(bad)?,
            target: QNetwork::from_params(dims, target).map_err(bad)?,
            adam: Adam {
                lr0: hyper[0],
                beta1: hyper[1],
                beta2: hyper[2],
                eps: hyper[3],
                decay: hyper[4],
                decay_every: hyper[5] as u64,
                t: hyper[6] as u64,
                m,
                v,
            },
        })
    }

    /// Writes the container and its sidecar next to it.
    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| CheckpointError::Io { path: p, source }
        };
        fs::write(path, self.to_bytes()).map_err(io(path))?;
        let side = sidecar_path(path);
        let mut json = serde_json::to_string_pretty(meta)?;
        json.push('\n');
        fs::write(&side, json).map_err(io(&side))?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<Dims>) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, expected)
    }
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta, CheckpointError> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|source| CheckpointError::Io { path: side, source })?;
    Ok(serde_json::from_str(&text)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
