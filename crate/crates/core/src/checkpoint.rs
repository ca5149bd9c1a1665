//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `LLCK`, u32 version, u64 graph hash, u32
//! length + JSON of the [`ModelConfig`], u32 tensor count, then per tensor a
//! u32 name length, the UTF-8 name, u32 rows, u32 cols and the row-major
//! `f64` values.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::model::{GcnModel, ModelConfig};

const MAGIC: &[u8; 4] = b"LLCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub graph_hash: u64,
    pub model: GcnModel,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.graph_hash.to_le_bytes());
        let config = serde_json::to_vec(&self.model.config).expect("config serializes");
        put_u32(&mut out, config.len());
        out.extend_from_slice(&config);

        let named: Vec<(String, &Matrix)> = self
            .model
            .weights
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("layer.{}.weight", i + 1), &t.value))
            .chain(
                ["theta.w1", "theta.b1", "theta.w2", "theta.b2"]
                    .iter()
                    .zip(&self.model.theta)
                    .map(|(n, t)| (n.to_string(), &t.value)),
            )
            .collect();
        put_u32(&mut out, named.len());
        for (name, m) in named {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, m.rows());
            put_u32(&mut out, m.cols());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = bytes;
        let mut magic = [0u8; 4];
        take(&mut rd, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = u32_le(&mut rd)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut hash = [0u8; 8];
        take(&mut rd, &mut hash)?;
        let graph_hash = u64::from_le_bytes(hash);
        let config_len = u32_le(&mut rd)? as usize;
        let mut config = vec![0u8; config_len];
        take(&mut rd, &mut config)?;
        let config: ModelConfig = serde_json::from_slice(&config)
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        config.validate()?;

        let count = u32_le(&mut rd)? as usize;
        let mut weights = Vec::new();
        let mut theta = Vec::new();
        for _ in 0..count {
            let name_len = u32_le(&mut rd)? as usize;
            let mut name = vec![0u8; name_len];
            take(&mut rd, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("checkpoint tensor name is not UTF-8".into()))?;
            let rows = u32_le(&mut rd)? as usize;
            let cols = u32_le(&mut rd)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let mut b = [0u8; 8];
                take(&mut rd, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::param(Matrix::from_vec(rows, cols, data)?);
            if name.starts_with("theta.") {
                theta.push(t);
            } else {
                weights.push(t);
            }
        }
        if !rd.is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
        }
        if weights.len() != config.depth || (config.use_lora && theta.len() != 4) {
            return Err(Error::Format(format!(
                "checkpoint holds {} layer and {} θ tensors for depth {}",
                weights.len(),
                theta.len(),
                config.depth
            )));
        }
        Ok(Checkpoint {
            graph_hash,
            model: GcnModel {
                config,
                weights,
                theta,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, rejecting one trained on a different graph.
    pub fn load(path: impl AsRef<Path>, expected_hash: u64) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Checkpoint::from_bytes(&bytes)?;
        if ckpt.graph_hash != expected_hash {
            return Err(Error::StaleCache {
                expected: expected_hash,
                found: ckpt.graph_hash,
            });
        }
        Ok(ckpt)
    }
}

fn take(rd: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    rd.read_exact(buf)
        .map_err(|_| Error::Format("checkpoint is truncated".into()))
}

fn u32_le(rd: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    take(rd, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
