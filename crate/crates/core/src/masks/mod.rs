//! Per-view instance id maps and the combination of binary mask proposals.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::io::pnm;

/// Per-pixel instance ids for one view; 0 means unlabeled. Ids are local to
/// the view and carry no meaning across views.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMask {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u16>,
}

impl InstanceMask {
    pub fn new(width: usize, height: usize, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(contract(format!(
                "{} ids for a {width}x{height} mask",
                ids.len()
            )));
        }
        Ok(Self { width, height, ids })
    }

    pub fn unlabeled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width * height],
        }
    }

    /// Distinct non-zero ids.
    pub fn instance_count(&self) -> usize {
        let mut seen = vec![false; u16::MAX as usize + 1];
        let mut n = 0;
        for &id in &self.ids {
            if id != 0 && !seen[id as usize] {
                seen[id as usize] = true;
                n += 1;
            }
        }
        n
    }

    /// Renumbers the non-zero ids to `1..=N` preserving their order.
    pub fn normalized(&self) -> Self {
        let mut map = BTreeMap::new();
        for &id in &self.ids {
            if id != 0 {
                map.insert(id, 0u16);
            }
        }
        for (next, v) in map.values_mut().enumerate() {
            *v = next as u16 + 1;
        }
        Self {
            width: self.width,
            height: self.height,
            ids: self.ids.iter().map(|&id| if id == 0 { 0 } else { map[&id] }).collect(),
        }
    }

    pub fn binary(&self, id: u16) -> Vec<bool> {
        self.ids.iter().map(|&v| v == id).collect()
    }
}

/// Paints the binary masks into one id map in ascending score order, so
/// higher-scoring masks win on overlap (equal scores keep input order).
/// Surviving masks are numbered `1..=N` by paint order; masks that end up
/// with no pixels are dropped.
pub fn combine_masks(width: usize, height: usize, masks: &[Vec<bool>], scores: &[f64]) -> Result<InstanceMask> {
    if masks.len() != scores.len() {
        return Err(contract(format!("{} masks but {} scores", masks.len(), scores.len())));
    }
    if let Some(m) = masks.iter().find(|m| m.len() != width * height) {
        return Err(contract(format!(
            "mask with {} pixels in a {width}x{height} view",
            m.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("mask score is NaN".into()));
    }
    if masks.len() > u16::MAX as usize {
        return Err(Error::Format("more than 65535 masks in one view".into()));
    }
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut painted = vec![0u16; width * height];
    for (rank, &m) in order.iter().enumerate() {
        for (p, &on) in masks[m].iter().enumerate() {
            if on {
                painted[p] = rank as u16 + 1;
            }
        }
    }
    Ok(InstanceMask {
        width,
        height,
        ids: painted,
    }
    .normalized())
}

/// Combined proposal score from predicted IoU and stability.
pub fn proposal_score(iou: f64, stability: f64, iou_weight: f64, stability_weight: f64) -> f64 {
    iou_weight * iou + stability_weight * stability
}

/// Reads a 16-bit P5 id map, renumbering sparse ids to `1..=N`.
pub fn load_view_masks(path: &Path) -> Result<InstanceMask> {
    let img = pnm::read_pgm16(path)?;
    Ok(InstanceMask {
        width: img.width,
        height: img.height,
        ids: img.data,
    }
    .normalized())
}

/// Reads a 16-bit P5 id map as stored, without renumbering. Ground-truth
/// maps keep their ids so instances stay identifiable across views.
pub fn load_id_map(path: &Path) -> Result<InstanceMask> {
    let img = pnm::read_pgm16(path)?;
    Ok(InstanceMask {
        width: img.width,
        height: img.height,
        ids: img.data,
    })
}

pub fn save_view_masks(path: &Path, mask: &InstanceMask) -> Result<()> {
    pnm::write_pgm16(path, mask.width, mask.height, &mask.ids)
}
