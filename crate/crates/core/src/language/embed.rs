//! Image-region and text embedders.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::io::RgbImage;

/// Identifies one crop: the instance, the view it was cut from and its zoom level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionKey {
    pub instance: usize,
    pub view: usize,
    pub zoom: usize,
}

impl RegionKey {
    /// Lookup key used by [`FileEmbedder`] tables.
    pub fn name(&self) -> String {
        format!("region:i{}/v{}/z{}", self.instance, self.view, self.zoom)
    }
}

pub fn text_key(text: &str) -> String {
    format!("text:{}", text.trim())
}

/// Maps image regions and text into one space. Outputs are unit length.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed_image_region(&self, key: &RegionKey, image: &RgbImage, mask: &[bool]) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

pub(crate) fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Deterministic color embedder: 3 mean-color dims, a 12-bin hue histogram
/// and a constant bias dim. Text is mapped through a small color lexicon.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockEmbedder;

pub const MOCK_DIM: usize = 16;
const HUE_BINS: usize = 12;
const BIAS: f64 = 0.25;
/// Pixels less saturated than this do not vote in the hue histogram.
const MIN_CHROMA: f64 = 0.1;

fn hue_bin(rgb: [f64; 3]) -> Option<usize> {
    let max = rgb[0].max(rgb[1]).max(rgb[2]);
    let min = rgb[0].min(rgb[1]).min(rgb[2]);
    let c = max - min;
    if c < MIN_CHROMA {
        return None;
    }
    let h = if max == rgb[0] {
        60.0 * ((rgb[1] - rgb[2]) / c).rem_euclid(6.0)
    } else if max == rgb[1] {
        60.0 * ((rgb[2] - rgb[0]) / c + 2.0)
    } else {
        60.0 * ((rgb[0] - rgb[1]) / c + 4.0)
    };
    // Bins are centered on multiples of 30 degrees.
    Some((((h + 15.0).rem_euclid(360.0)) / 30.0) as usize % HUE_BINS)
}

fn mock_vector(colors: &[[f64; 3]]) -> Vec<f64> {
    let mut v = vec![0.0; MOCK_DIM];
    if colors.is_empty() {
        v[MOCK_DIM - 1] = 1.0;
        return v;
    }
    let mut voted = 0usize;
    for c in colors {
        for a in 0..3 {
            v[a] += c[a] / colors.len() as f64;
        }
        if let Some(b) = hue_bin(*c) {
            v[3 + b] += 1.0;
            voted += 1;
        }
    }
    if voted > 0 {
        for b in 0..HUE_BINS {
            v[3 + b] /= voted as f64;
        }
    }
    v[MOCK_DIM - 1] = BIAS;
    v
}

const LEXICON: &[(&str, [f64; 3])] = &[
    ("red", [1.0, 0.0, 0.0]),
    ("orange", [1.0, 0.5, 0.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("teal", [0.0, 0.5, 0.5]),
    ("blue", [0.0, 0.0, 1.0]),
    ("purple", [0.5, 0.0, 1.0]),
    ("violet", [0.5, 0.0, 1.0]),
    ("magenta", [1.0, 0.0, 1.0]),
    ("pink", [1.0, 0.4, 0.7]),
    ("white", [1.0, 1.0, 1.0]),
    ("gray", [0.5, 0.5, 0.5]),
    ("grey", [0.5, 0.5, 0.5]),
    ("black", [0.0, 0.0, 0.0]),
];

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        MOCK_DIM
    }

    fn embed_image_region(&self, _key: &RegionKey, image: &RgbImage, mask: &[bool]) -> Result<Vec<f64>> {
        if mask.len() != image.width * image.height {
            return Err(contract("region mask does not match the image"));
        }
        let colors: Vec<[f64; 3]> = (0..mask.len())
            .filter(|&i| mask[i])
            .map(|i| image.pixel(i % image.width, i / image.width))
            .collect();
        Ok(normalize(mock_vector(&colors)).expect("the bias dim keeps the vector nonzero"))
    }

    /// Color words contribute their ideal color; shape and unknown words
    /// only carry the bias dim.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let words = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| w.to_lowercase());
        let colors: Vec<[f64; 3]> = words
            .filter_map(|w| LEXICON.iter().find(|(k, _)| *k == w).map(|(_, c)| *c))
            .collect();
        Ok(normalize(mock_vector(&colors)).expect("the bias dim keeps the vector nonzero"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FileIndex {
    dim: usize,
    /// Key to row in the f32 block.
    keys: HashMap<String, usize>,
}

/// Precomputed vectors: `<name>.json` maps keys (see [`RegionKey::name`]
/// and [`text_key`]) to rows of `<name>.f32`, a little-endian f32 matrix.
#[derive(Clone, Debug)]
pub struct FileEmbedder {
    dim: usize,
    keys: HashMap<String, usize>,
    rows: Vec<f32>,
}

fn block_path(index: &Path) -> PathBuf {
    index.with_extension("f32")
}

impl FileEmbedder {
    pub fn load(index: &Path) -> Result<Self> {
        let idx: FileIndex = serde_json::from_slice(&fs::read(index)?)?;
        let bytes = fs::read(block_path(index))?;
        if idx.dim == 0 || bytes.len() % (4 * idx.dim) != 0 {
            return Err(Error::Format(format!(
                "embedding block of {} bytes is not a whole number of {}-dim f32 rows",
                bytes.len(),
                idx.dim
            )));
        }
        let rows: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let count = rows.len() / idx.dim;
        if let Some((k, &r)) = idx.keys.iter().find(|(_, &r)| r >= count) {
            return Err(Error::Format(format!("key {k:?} points at row {r} of {count}")));
        }
        Ok(Self {
            dim: idx.dim,
            keys: idx.keys,
            rows,
        })
    }

    /// Writes a table in the format [`FileEmbedder::load`] reads.
    pub fn save(index: &Path, dim: usize, entries: &[(String, Vec<f64>)]) -> Result<()> {
        let mut keys = HashMap::new();
        let mut block = Vec::with_capacity(entries.len() * dim * 4);
        for (row, (k, v)) in entries.iter().enumerate() {
            if v.len() != dim {
                return Err(contract(format!("vector for {k:?} has {} values, expected {dim}", v.len())));
            }
            keys.insert(k.clone(), row);
            for &x in v {
                block.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        fs::write(index, serde_json::to_vec_pretty(&FileIndex { dim, keys })?)?;
        fs::write(block_path(index), block)?;
        Ok(())
    }

    fn lookup(&self, key: &str) -> Result<Vec<f64>> {
        let row = *self
            .keys
            .get(key)
            .ok_or_else(|| Error::InvalidParameter(format!("no precomputed embedding for {key:?}")))?;
        let v = self.rows[row * self.dim..(row + 1) * self.dim].iter().map(|&x| x as f64).collect();
        normalize(v).ok_or_else(|| Error::Format(format!("embedding for {key:?} is zero or non-finite")))
    }
}

impl Embedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image_region(&self, key: &RegionKey, _image: &RgbImage, _mask: &[bool]) -> Result<Vec<f64>> {
        self.lookup(&key.name())
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.lookup(&text_key(text))
    }
}
