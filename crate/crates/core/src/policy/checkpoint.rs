//! Checkpoint file: `u64` little-endian header length, a JSON header, then
//! the flat parameter vector as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::TokenCodec;
use super::network::{NetShape, PolicyNet};
use crate::error::{Error, Result};

const FORMAT: &str = "drivelab-policy";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub shape: NetShape,
    pub codec: TokenCodec,
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub num_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: PolicyNet,
    pub codec: TokenCodec,
    pub seed: u64,
    pub step: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            format: FORMAT.into(),
            version: VERSION,
            shape: self.net.shape(),
            codec: self.codec.clone(),
            seed: self.seed,
            step: self.step,
            num_params: self.net.num_params(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + 8 * self.net.num_params());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::codec("checkpoint shorter than its length prefix"))?;
        let hlen = u64::from_le_bytes(len_bytes) as usize;
        let header_bytes = bytes
            .get(8..8usize.saturating_add(hlen))
            .ok_or_else(|| Error::codec("checkpoint header truncated"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(header_bytes).map_err(|e| Error::codec(format!("checkpoint header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::codec(format!(
                "unsupported checkpoint {} v{}",
                header.format, header.version
            )));
        }
        if header.shape.vocab != header.codec.vocab_size() {
            return Err(Error::codec(format!(
                "network vocabulary {} does not match codec vocabulary {}",
                header.shape.vocab,
                header.codec.vocab_size()
            )));
        }
        let body = &bytes[8 + hlen..];
        if body.len() != header.num_params * 8 {
            return Err(Error::codec(format!(
                "expected {} parameter bytes, found {}",
                header.num_params * 8,
                body.len()
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            net: PolicyNet::from_params(header.shape, params)?,
            codec: header.codec,
            seed: header.seed,
            step: header.step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
