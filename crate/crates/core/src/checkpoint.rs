//! Binary checkpoints: versioned header, architecture, little-endian f64
//! parameters, SHA-256 trailer over everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::{ClassifierConfig, ParameterVector};

const MAGIC: &[u8; 8] = b"PBCKPT\0\0";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ClassifierConfig,
    pub params: ParameterVector,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let c = &self.config;
        out.extend_from_slice(&(c.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(c.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&(c.hidden_dims.len() as u32).to_le_bytes());
        for &h in &c.hidden_dims {
            out.extend_from_slice(&(h as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.init_seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(digest.as_slice());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: &str| Error::Checkpoint {
            path: path.to_owned(),
            message: message.to_owned(),
        };
        if bytes.len() < MAGIC.len() + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum(path.to_owned()));
        }
        let mut r = Reader { buf: &body[MAGIC.len()..] };
        let truncated = || bad("truncated header or payload");
        let version = r.u32().ok_or_else(truncated)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let input_dim = r.u32().ok_or_else(truncated)? as usize;
        let num_classes = r.u32().ok_or_else(truncated)? as usize;
        let layers = r.u32().ok_or_else(truncated)? as usize;
        let hidden_dims = (0..layers)
            .map(|_| r.u32().map(|h| h as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let init_seed = r.u64().ok_or_else(truncated)?;
        let count = r.u64().ok_or_else(truncated)? as usize;
        let config = ClassifierConfig {
            input_dim,
            hidden_dims,
            num_classes,
            init_seed,
        };
        if config.validate().is_err() || config.param_count() != count {
            return Err(bad("architecture does not match the parameter count"));
        }
        if r.buf.len() != 8 * count {
            return Err(truncated());
        }
        let params = r
            .buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            config,
            params: ParameterVector::new(params),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let (head, rest) = self.buf.split_first_chunk::<N>()?;
        self.buf = rest;
        Some(*head)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }
}
