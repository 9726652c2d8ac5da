//! Evaluation metrics for 2D masks, 3D instances and point clouds.

mod ap;
mod masks2d;
mod matching;
mod points;

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

pub use ap::{ap_thresholds, instance_ap, instances_from_labels, semantic_ap, set_iou, ApScores, GtInstance, PredInstance};
pub use masks2d::{
    boundary_band, boundary_iou, boundary_radius, distance_to_background_sq, iou, macc_at, miou_biou, observer_select,
    selection_mask, MaskPair,
};
pub use matching::{hungarian_max, matched_instance_miou, InstanceMatch, MatchReport};
pub use points::{diagonal, fh_segments, graph_smooth, transfer_labels, LabeledPointCloud};

use crate::error::{contract, Result};

/// Peak signal-to-noise ratio in dB for values in `[0, 1]`.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(contract(format!("cannot compare {} and {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Metric values per scene, in insertion-independent (sorted) order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub scenes: BTreeMap<String, BTreeMap<String, f64>>,
}

impl MetricTable {
    pub fn insert(&mut self, scene: &str, metric: &str, value: f64) {
        self.scenes.entry(scene.to_string()).or_default().insert(metric.to_string(), value);
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut m: Vec<String> = self.scenes.values().flat_map(|s| s.keys().cloned()).collect();
        m.sort();
        m.dedup();
        m
    }

    /// Mean of a metric over the scenes that report it.
    pub fn mean(&self, metric: &str) -> Option<f64> {
        let vals: Vec<f64> = self.scenes.values().filter_map(|s| s.get(metric).copied()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// One row per metric, one column per scene plus the mean.
    pub fn to_text(&self) -> String {
        let mut header = vec!["metric".to_string()];
        header.extend(self.scenes.keys().cloned());
        header.push("mean".into());
        let mut rows = vec![header];
        for m in self.metrics() {
            let mut row = vec![m.clone()];
            for s in self.scenes.values() {
                row.push(s.get(&m).map_or("-".into(), |v| format!("{v:.4}")));
            }
            row.push(self.mean(&m).map_or("-".into(), |v| format!("{v:.4}")));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap()).collect();
        let mut out = String::new();
        for (k, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if k == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out
    }
}
