//! Binary checkpoint format.
//!
//! ```text
//! PGLAB1\n
//! name<TAB>d1,d2\n      (one line per tensor)
//! \n
//! little-endian f64 data, tensors in manifest order, row-major
//! ```

use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"PGLAB1\n";

/// Named tensors in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for (name, t) in &self.entries {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            out.extend_from_slice(format!("{name}\t{}\n", dims.join(",")).as_bytes());
        }
        out.push(b'\n');
        for (_, t) in &self.entries {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::parse(origin, 1, "missing PGLAB1 magic"))?;
        let mut pos = 0;
        let mut manifest = Vec::new();
        let mut line_no = 1;
        loop {
            let end = rest[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::parse(origin, line_no + 1, "unterminated manifest"))?;
            let line = std::str::from_utf8(&rest[pos..pos + end])
                .map_err(|_| Error::parse(origin, line_no + 1, "manifest is not UTF-8"))?;
            pos += end + 1;
            line_no += 1;
            if line.is_empty() {
                break;
            }
            let (name, dims) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, line_no, "expected name<TAB>dims"))?;
            let shape = dims
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(origin, line_no, format!("bad dims `{dims}`")))?;
            manifest.push((name.to_owned(), shape));
        }
        let mut data = &rest[pos..];
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            if data.len() < 8 * n {
                return Err(Error::parse(origin, line_no, format!("truncated data for `{name}`")));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[8 * n..];
            entries.push((name, Tensor::new(shape, values)?));
        }
        if !data.is_empty() {
            return Err(Error::parse(origin, line_no, "trailing bytes after tensor data"));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}

impl ModelParams {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            entries: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| {
                    (
                        n.clone(),
                        Tensor {
                            shape: t.shape.clone(),
                            data: t.data.clone(),
                            requires_grad: false,
                            grad: None,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Rebuilds parameters, inferring sizes from the tensor shapes. Extra
    /// entries (optimizer state) are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let missing = |n: &str| Error::invalid(format!("checkpoint lacks tensor `{n}`"));
        let emb = ckpt.get("embedding").ok_or_else(|| missing("embedding"))?;
        let hb = ckpt.get("bridge.h.b").ok_or_else(|| missing("bridge.h.b"))?;
        let head_count = (0..)
            .take_while(|k| ckpt.get(&format!("attention.{k}.w_h")).is_some())
            .count();
        let config = ModelConfig {
            vocab_size: emb.shape[0],
            emb_dim: emb.shape[1],
            hidden_dim: hb.numel(),
            head_count,
        };
        let mut params = ModelParams::init(config, 0)?;
        for (name, t) in params.names.iter().zip(params.tensors.iter_mut()) {
            let src = ckpt.get(name).ok_or_else(|| missing(name))?;
            if src.shape != t.shape {
                return Err(Error::Shape {
                    op: "checkpoint",
                    lhs: t.shape.clone(),
                    rhs: src.shape.clone(),
                });
            }
            t.data.clone_from(&src.data);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
