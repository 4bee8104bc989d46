//! Feature cache files: `"MCFE"`, then little-endian `u32` version, frame
//! count and channel count, then the row-major `f32` payload.

use std::io::{Read, Write};

use super::{FrameSequence, N_CHANNELS};
use crate::error::{Error, Result};

pub const FEATURE_CACHE_MAGIC: &[u8; 4] = b"MCFE";
pub const FEATURE_CACHE_VERSION: u32 = 1;

pub fn write_feature_cache<W: Write>(mut w: W, seq: &FrameSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + seq.data().len() * 4);
    buf.extend_from_slice(FEATURE_CACHE_MAGIC);
    buf.extend_from_slice(&FEATURE_CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(seq.n_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(N_CHANNELS as u32).to_le_bytes());
    for v in seq.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_feature_cache<R: Read>(mut r: R) -> Result<FrameSequence> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("feature cache truncated in header".into()))?;
    if &header[0..4] != FEATURE_CACHE_MAGIC {
        return Err(Error::Format("not a feature cache file (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_CACHE_VERSION {
        return Err(Error::Format(format!("unsupported feature cache version {version}")));
    }
    let n_frames = word(8) as usize;
    let n_channels = word(12) as usize;
    if n_channels != N_CHANNELS {
        return Err(Error::Format(format!("feature cache has {n_channels} channels, expected {N_CHANNELS}")));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n_frames * n_channels * 4 {
        return Err(Error::Format(format!(
            "feature cache payload is {} bytes, header implies {}",
            payload.len(),
            n_frames * n_channels * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FrameSequence::new(n_frames, data)
}
