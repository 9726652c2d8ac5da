//! File formats: images, id maps, point sets, checkpoints and manifests.

pub mod checkpoint;
pub mod manifest;
pub mod ply;
pub mod pnm;
pub mod points;
pub mod rawmap;

use std::fs;
use std::path::Path;

use crate::error::{contract, Result};

/// RGB image with pixel-major values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(contract(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn is_ppm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

/// Loads a PPM (P6) or any format the `image` crate reads (PNG).
pub fn load_image(path: &Path) -> Result<RgbImage> {
    if is_ppm(path) {
        let (width, height, data) = pnm::decode_ppm(&fs::read(path)?)?;
        return Ok(RgbImage { width, height, data });
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage {
        width: w as usize,
        height: h as usize,
        data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
    })
}

/// Saves as PPM or PNG depending on the extension (8 bits per channel).
pub fn save_image(path: &Path, img: &RgbImage) -> Result<()> {
    if is_ppm(path) {
        fs::write(path, pnm::encode_ppm(img.width, img.height, &img.data))?;
        return Ok(());
    }
    let bytes: Vec<u8> = img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| contract("image buffer size mismatch"))?;
    buf.save(path)?;
    Ok(())
}

/// Writes a binary mask as a 16-bit PGM (0 or 65535).
pub fn save_mask_pgm(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let data: Vec<u16> = mask.iter().map(|&m| if m { u16::MAX } else { 0 }).collect();
    pnm::write_pgm16(path, width, height, &data)
}

/// Quantizes values in `[0, 1]` into a 16-bit PGM.
pub fn save_gray_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let data: Vec<u16> = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    pnm::write_pgm16(path, width, height, &data)
}
