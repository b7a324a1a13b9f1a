//! Container format shared by checkpoints and reference fields:
//!
//! ```text
//! magic (8 bytes) | header length (u64 LE) | header JSON | f64 LE blocks | SHA-256 of all preceding bytes
//! ```
//!
//! The header lists the blocks (`name`, `len`) in payload order. Files are
//! written to a sibling temp path and renamed into place.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    blocks: Vec<BlockInfo>,
    header: H,
}

pub fn encode<H: Serialize>(magic: &[u8; 8], header: &H, blocks: &[(&str, &[f64])]) -> Result<Vec<u8>> {
    let env = Envelope {
        blocks: blocks
            .iter()
            .map(|(name, data)| BlockInfo {
                name: name.to_string(),
                len: data.len(),
            })
            .collect(),
        header,
    };
    let json = serde_json::to_vec(&env)?;
    let payload: usize = blocks.iter().map(|(_, d)| d.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + payload + 32);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, data) in blocks {
        for x in data.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(magic: &[u8; 8], bytes: &[u8]) -> Result<(H, Vec<(String, Vec<f64>)>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 + 8 + 32 {
        return Err(bad("file truncated"));
    }
    if &bytes[..8] != magic {
        return Err(bad("wrong file magic"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (corrupted or truncated file)"));
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let json = body
        .get(16..16 + hlen)
        .ok_or_else(|| bad("header length exceeds file"))?;
    let env: Envelope<H> = serde_json::from_slice(json)?;
    let mut rest = &body[16 + hlen..];
    let mut blocks = Vec::with_capacity(env.blocks.len());
    for info in env.blocks {
        let nbytes = info.len * 8;
        if rest.len() < nbytes {
            return Err(bad("block payload truncated"));
        }
        let (chunk, tail) = rest.split_at(nbytes);
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push((info.name, data));
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok((env.header, blocks))
}

/// Write `bytes` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn take_block(blocks: &mut Vec<(String, Vec<f64>)>, name: &str) -> Result<Vec<f64>> {
    let pos = blocks
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing block `{name}`")))?;
    Ok(blocks.remove(pos).1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTFMT1";

    #[test]
    fn roundtrip_is_bit_exact() {
        let a = [0.1, -0.0, f64::MIN_POSITIVE, 1e300];
        let bytes = encode(MAGIC, &"hdr", &[("a", &a[..]), ("b", &[][..])]).unwrap();
        let (h, blocks): (String, _) = decode(MAGIC, &bytes).unwrap();
        assert_eq!(h, "hdr");
        assert_eq!(blocks.len(), 2);
        for (x, y) in a.iter().zip(&blocks[0].1) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn corruption_and_truncation_detected() {
        let bytes = encode(MAGIC, &1u32, &[("a", &[1.0, 2.0][..])]).unwrap();
        let mut flipped = bytes.clone();
        let mid = flipped.len() - 40;
        flipped[mid] ^= 1;
        assert!(decode::<u32>(MAGIC, &flipped).is_err());
        assert!(decode::<u32>(MAGIC, &bytes[..bytes.len() - 9]).is_err());
        assert!(decode::<u32>(b"OTHERFMT", &bytes).is_err());
    }
}
