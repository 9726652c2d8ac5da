//! Binary PGM (P5) and PPM (P6) files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A decoded PGM with samples widened to 16 bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray16 {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(format_err("file too short for a PNM header"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(format_err("truncated PNM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("malformed PNM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err("PNM header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err("missing whitespace after PNM header"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format_err("PNM image has zero size"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("PNM maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

fn samples(bytes: &[u8], h: &Header, channels: usize) -> Result<Vec<u16>> {
    let n = h.width * h.height * channels;
    let wide = h.maxval > 255;
    let need = if wide { 2 * n } else { n };
    let data = &bytes[h.data_start.min(bytes.len())..];
    if data.len() < need {
        return Err(format_err(format!(
            "truncated PNM data: expected {need} bytes, found {}",
            data.len()
        )));
    }
    Ok(if wide {
        data[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data[..n].iter().map(|&b| b as u16).collect()
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Gray16> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(format_err("not a binary PGM (P5) file"));
    }
    let data = samples(bytes, &h, 1)?;
    if let Some(&v) = data.iter().find(|&&v| v as usize > h.maxval) {
        return Err(format_err(format!("sample {v} exceeds maxval {}", h.maxval)));
    }
    Ok(Gray16 {
        width: h.width,
        height: h.height,
        maxval: h.maxval as u16,
        data,
    })
}

pub fn read_pgm16(path: &Path) -> Result<Gray16> {
    decode_pgm(&fs::read(path)?)
}

pub fn encode_pgm16(width: usize, height: usize, data: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(data.len() * 2);
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    if data.len() != width * height {
        return Err(crate::error::contract("PGM data length differs from its dimensions"));
    }
    fs::write(path, encode_pgm16(width, height, data))?;
    Ok(())
}

/// Decodes a P6 file into pixel-major RGB values scaled to `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(format_err("not a binary PPM (P6) file"));
    }
    let scale = 1.0 / h.maxval as f64;
    let data = samples(bytes, &h, 3)?;
    Ok((h.width, h.height, data.iter().map(|&v| v as f64 * scale).collect()))
}

/// Encodes pixel-major RGB values in `[0, 1]` (clamped) as an 8-bit P6 file.
pub fn encode_ppm(width: usize, height: usize, rgb: &[f64]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
