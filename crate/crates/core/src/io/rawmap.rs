//! Raw float maps: "OSPM", then width, height and channel count as
//! little-endian u32, then one f32 plane per channel.

use std::fs;
use std::path::Path;

use crate::error::{contract, Error, Result};

const MAGIC: &[u8; 4] = b"OSPM";

/// Encodes a pixel-major map with `channels` values per pixel.
pub fn encode(width: usize, height: usize, channels: usize, data: &[f64]) -> Result<Vec<u8>> {
    if data.len() != width * height * channels {
        return Err(contract("raw map data length differs from its dimensions"));
    }
    let mut out = Vec::with_capacity(16 + data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [width, height, channels] {
        let v = u32::try_from(v).map_err(|_| contract("raw map dimension exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let n = width * height;
    for c in 0..channels {
        for p in 0..n {
            out.extend_from_slice(&(data[p * channels + c] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes into `(width, height, channels, pixel-major data)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not an OSPM raw map".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (word(0), word(1), word(2));
    let n = w * h;
    if bytes.len() != 16 + n * c * 4 {
        return Err(Error::Format(format!(
            "raw map body has {} bytes, expected {}",
            bytes.len() - 16,
            n * c * 4
        )));
    }
    let mut data = vec![0.0; n * c];
    for (k, chunk) in bytes[16..].chunks_exact(4).enumerate() {
        let (ch, p) = (k / n, k % n);
        data[p * c + ch] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok((w, h, c, data))
}

pub fn write(path: &Path, width: usize, height: usize, channels: usize, data: &[f64]) -> Result<()> {
    fs::write(path, encode(width, height, channels, data)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    decode(&fs::read(path)?)
}
