//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "BSRK" | u32 version | u32 len, config TOML (UTF-8) | u64 step
//! u32 tensor count, then per tensor:
//!     u32 name len, name | u32 rank, u64 dims... | f32 data
//! u8 has_optimizer, then if set:
//!     u64 optimizer step | per tensor: f64 first moment, f64 second moment
//! ```
//!
//! Parameters are stored in single precision. Training keeps its parameters
//! on the f32 grid so that saving and resuming is lossless.

use std::path::Path;

use super::NamedTensor;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BSRK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Snapshot of the configuration that produced the parameters.
    pub config_toml: String,
    /// Completed training steps.
    pub step: u64,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerState>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated checkpoint at byte {}", self.pos)),
        }
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 string".to_string())
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_toml.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_toml.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
            for &d in p.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in p.tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    m.iter().chain(v).for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
            }
        }
        out
    }

    fn parse(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err("bad magic bytes (not a checkpoint)".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let config_toml = r.string()?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflow")?;
            let raw = r.take(n.checked_mul(4).ok_or("size overflow")?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            let tensor = Tensor::new(shape, data).map_err(|e| e.to_string())?;
            params.push(NamedTensor { name, tensor });
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::with_capacity(params.len());
                let mut v = Vec::with_capacity(params.len());
                for p in &params {
                    m.push(r.f64s(p.tensor.len())?);
                    v.push(r.f64s(p.tensor.len())?);
                }
                Some(OptimizerState { step, m, v })
            }
            other => return Err(format!("bad optimizer flag {other}")),
        };
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Checkpoint {
            config_toml,
            step,
            params,
            optimizer,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::parse(bytes).map_err(|msg| Error::data("<memory>", msg))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes).map_err(|msg| Error::data(path, msg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config_toml: "seed = 3\n".into(),
            step: 42,
            params: vec![
                NamedTensor {
                    name: "a".into(),
                    tensor: Tensor::new(vec![2, 2], vec![0.5, -1.25, 3.0, 0.0]).unwrap(),
                },
                NamedTensor {
                    name: "b".into(),
                    tensor: Tensor::vector(vec![7.0]),
                },
            ],
            optimizer: Some(OptimizerState {
                step: 42,
                m: vec![vec![0.1, 0.2, 0.3, 0.4], vec![1e-9]],
                v: vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.5]],
            }),
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        let mut no_opt = c.clone();
        no_opt.optimizer = None;
        assert_eq!(Checkpoint::from_bytes(&no_opt.to_bytes()).unwrap(), no_opt);
    }

    #[test]
    fn header_fields() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"BSRK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), CHECKPOINT_VERSION);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(Checkpoint::from_bytes(&ver).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bsrk");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), sample());
        assert!(Checkpoint::load(dir.path().join("none")).is_err());
    }
}
