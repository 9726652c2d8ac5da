//! Binary cloud checkpoints: "OSP3", version (u32), N (u64), feature
//! dimension (u32) and SH degree (u32), followed by means, rotations,
//! log-scales, opacity logits, SH coefficients and features as
//! little-endian f32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GaussianCloud, ParamGroup};

const MAGIC: &[u8; 4] = b"OSP3";
pub const VERSION: u32 = 1;

pub fn encode(cloud: &GaussianCloud) -> Vec<u8> {
    let n = cloud.len();
    let floats: usize = ParamGroup::ALL.iter().map(|&g| cloud.group(g).len()).sum();
    let mut out = Vec::with_capacity(24 + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(cloud.feature_dim() as u32).to_le_bytes());
    out.extend_from_slice(&cloud.sh_degree().to_le_bytes());
    for g in ParamGroup::ALL {
        for &v in cloud.group(g) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<GaussianCloud> {
    let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(bad("missing OSP3 header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let degree = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let n = usize::try_from(n).map_err(|_| bad("Gaussian count too large"))?;
    let mut cloud = GaussianCloud::new(degree, d).map_err(|e| bad(&e.to_string()))?;
    let per = 3 + 4 + 3 + 1 + cloud.sh_stride() + d;
    let expected = n
        .checked_mul(per)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() - 24 != expected {
        return Err(bad(&format!(
            "body has {} bytes, expected {expected}",
            bytes.len() - 24
        )));
    }
    let mut vals = bytes[24..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut take3 = || [(); 3].map(|_| vals.next().unwrap());
    cloud.means = (0..n).map(|_| take3()).collect();
    cloud.rotations = (0..n).map(|_| [(); 4].map(|_| vals.next().unwrap())).collect();
    cloud.log_scales = (0..n).map(|_| [(); 3].map(|_| vals.next().unwrap())).collect();
    cloud.opacity_logits = vals.by_ref().take(n).collect();
    cloud.sh_coeffs = vals.by_ref().take(n * cloud.sh_stride()).collect();
    cloud.features = vals.by_ref().take(n * d).collect();
    cloud.validate()?;
    Ok(cloud)
}

pub fn save(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    fs::write(path, encode(cloud))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<GaussianCloud> {
    decode(&fs::read(path)?)
}

/// Sidecar written next to a checkpoint as `<name>.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: usize,
    pub config_hash: String,
    pub seed: u64,
    pub gaussians: usize,
}

pub fn meta_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// Saves the checkpoint and its sidecar.
pub fn save_with_meta(path: &Path, cloud: &GaussianCloud, meta: &CheckpointMeta) -> Result<()> {
    save(path, cloud)?;
    fs::write(meta_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    Ok(serde_json::from_str(&fs::read_to_string(meta_path(path))?)?)
}

/// Rounds every parameter to f32, the checkpoint's storage precision.
pub fn quantize(cloud: &GaussianCloud) -> GaussianCloud {
    let mut out = cloud.clone();
    for g in ParamGroup::ALL {
        for v in out.group_mut(g) {
            *v = *v as f32 as f64;
        }
    }
    out
}
