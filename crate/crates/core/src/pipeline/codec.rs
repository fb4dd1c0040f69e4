//! Wire framing: 4-byte little-endian length prefix, one version byte, then
//! the payload body. The length counts the version byte and the body.

use crate::error::{Error, Result};

pub const WIRE_VERSION: u8 = 1;

/// One finished rollout as shipped from a worker to the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPayload {
    pub id: u64,
    pub step: u64,
    pub tokens: Vec<u32>,
    pub logprobs: Vec<f64>,
    /// Stand-in for image tensors.
    pub blob: Vec<u8>,
    /// Microseconds since the step started.
    pub completed_us: u64,
}

impl RolloutPayload {
    fn body_len(&self) -> usize {
        8 * 3 + 4 + 4 * self.tokens.len() + 4 + 8 * self.logprobs.len() + 8 + self.blob.len()
    }
}

pub fn serialize(p: &RolloutPayload) -> Vec<u8> {
    let len = 1 + p.body_len();
    let mut out = Vec::with_capacity(4 + len);
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.push(WIRE_VERSION);
    out.extend_from_slice(&p.id.to_le_bytes());
    out.extend_from_slice(&p.step.to_le_bytes());
    out.extend_from_slice(&p.completed_us.to_le_bytes());
    out.extend_from_slice(&(p.tokens.len() as u32).to_le_bytes());
    for t in &p.tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out.extend_from_slice(&(p.logprobs.len() as u32).to_le_bytes());
    for l in &p.logprobs {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out.extend_from_slice(&(p.blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&p.blob);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::codec(format!("truncated payload while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Length of the frame at the start of `buf` (prefix included), if the
/// prefix is present.
pub fn frame_len(buf: &[u8]) -> Option<usize> {
    buf.get(..4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize + 4)
}

pub fn deserialize(frame: &[u8]) -> Result<RolloutPayload> {
    let declared = frame_len(frame).ok_or_else(|| Error::codec("frame shorter than its length prefix"))?;
    if declared != frame.len() {
        return Err(Error::codec(format!(
            "length prefix says {declared} bytes, frame has {}",
            frame.len()
        )));
    }
    let mut r = Reader { buf: frame, pos: 4 };
    let version = r.take(1, "version")?[0];
    if version != WIRE_VERSION {
        return Err(Error::codec(format!("wire version {version}, expected {WIRE_VERSION}")));
    }
    let id = r.u64("id")?;
    let step = r.u64("step")?;
    let completed_us = r.u64("timestamp")?;
    let n_tokens = r.u32("token count")? as usize;
    let tokens = r
        .take(n_tokens.saturating_mul(4), "tokens")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let n_logp = r.u32("log-prob count")? as usize;
    let logprobs = r
        .take(n_logp.saturating_mul(8), "log-probs")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let blob_len = usize::try_from(r.u64("blob length")?).map_err(|_| Error::codec("blob length overflow"))?;
    let blob = r.take(blob_len, "blob")?.to_vec();
    if r.pos != frame.len() {
        return Err(Error::codec("trailing bytes after payload"));
    }
    Ok(RolloutPayload {
        id,
        step,
        tokens,
        logprobs,
        blob,
        completed_us,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn payload(blob: Vec<u8>) -> RolloutPayload {
        RolloutPayload {
            id: 7,
            step: 3,
            tokens: vec![1, 2, 81],
            logprobs: vec![-0.5, -1.25, -0.01],
            blob,
            completed_us: 1234,
        }
    }

    #[test]
    fn empty_blob_roundtrips() {
        let p = payload(Vec::new());
        assert_eq!(deserialize(&serialize(&p)).unwrap(), p);
    }

    #[test]
    fn large_blob_roundtrips_byte_exact() {
        let blob: Vec<u8> = (0..8usize << 20).map(|i| (i * 31 % 251) as u8).collect();
        let p = payload(blob);
        let back = deserialize(&serialize(&p)).unwrap();
        assert_eq!(Sha256::digest(&back.blob), Sha256::digest(&p.blob));
        assert_eq!(back, p);
    }

    #[test]
    fn serialization_is_deterministic() {
        let p = payload(vec![9; 100]);
        assert_eq!(serialize(&p), serialize(&p.clone()));
    }

    #[test]
    fn corrupted_prefix_and_truncation_fail() {
        let mut bytes = serialize(&payload(vec![1; 64]));
        bytes[0] ^= 0x40;
        assert!(matches!(deserialize(&bytes), Err(Error::Codec(_))));
        let bytes = serialize(&payload(vec![1; 64]));
        assert!(deserialize(&bytes[..bytes.len() - 3]).is_err());
        assert!(deserialize(&bytes[..2]).is_err());
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(deserialize(&wrong).unwrap_err().to_string().contains("version"));
    }
}
