//! Grouping optimized per-Gaussian features into 3D instances.

mod hdbscan;

use std::path::Path;

pub use hdbscan::{hdbscan, ClusterResult, HdbscanParams};

use crate::config::ClusteringSection;
use crate::error::{contract, Result};
use crate::language::{Instance, InstanceTable};
use crate::scene::GaussianCloud;

/// Clusters the features of every Gaussian at or above the configured
/// opacity; the rest are labeled noise.
pub fn cluster_cloud(cloud: &GaussianCloud, cfg: &ClusteringSection) -> Result<ClusterResult> {
    let n = cloud.len();
    let keep: Vec<usize> = (0..n).filter(|&i| cloud.opacity(i) >= cfg.min_opacity).collect();
    if keep.is_empty() {
        return Ok(ClusterResult::all_noise(n));
    }
    let d = cloud.feature_dim();
    let mut pts = Vec::with_capacity(keep.len() * d);
    for &i in &keep {
        pts.extend_from_slice(cloud.feature(i));
    }
    let params = HdbscanParams {
        min_cluster_size: cfg.min_cluster_size_for(keep.len()),
        min_samples: cfg.min_samples,
        allow_single_cluster: cfg.allow_single_cluster,
    };
    let sub = hdbscan(&pts, d, &params)?;
    let mut out = ClusterResult::all_noise(n);
    for (k, &i) in keep.iter().enumerate() {
        out.labels[i] = sub.labels[k];
        out.probabilities[i] = sub.probabilities[k];
    }
    out.cluster_count = sub.cluster_count;
    out.stabilities = sub.stabilities;
    Ok(out)
}

/// Records the member Gaussians of every cluster. Noise belongs to no instance.
pub fn assign_instances(cloud: &GaussianCloud, result: &ClusterResult) -> Result<InstanceTable> {
    if result.labels.len() != cloud.len() {
        return Err(contract(format!(
            "{} labels for {} Gaussians",
            result.labels.len(),
            cloud.len()
        )));
    }
    let count = result.labels.iter().map(|&l| l + 1).max().unwrap_or(0).max(0) as usize;
    let mut instances: Vec<Instance> = (0..count)
        .map(|id| Instance {
            id,
            members: Vec::new(),
            stability: result.stabilities.get(id).copied().unwrap_or(1.0),
            embedding: None,
            views: Vec::new(),
            zoom_levels: 0,
        })
        .collect();
    for (g, &l) in result.labels.iter().enumerate() {
        if l >= 0 {
            instances[l as usize].members.push(g);
        }
    }
    Ok(InstanceTable {
        gaussian_count: cloud.len(),
        labels: result.labels.clone(),
        instances,
    })
}

/// Relabels clusters by first appearance so equal partitions compare equal.
pub fn canonical_labels(labels: &[i64]) -> Vec<i64> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let next = map.len() as i64;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

pub fn write_cluster_csv(path: &Path, result: &ClusterResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["gaussian_index", "label", "probability"])?;
    for (i, (l, p)) in result.labels.iter().zip(&result.probabilities).enumerate() {
        w.write_record([i.to_string(), l.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cluster_csv(path: &Path) -> Result<ClusterResult> {
    let mut r = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    let mut probabilities = Vec::new();
    for (row, rec) in r.deserialize::<(usize, i64, f64)>().enumerate() {
        let (i, l, p) = rec?;
        if i != row {
            return Err(crate::Error::Format(format!("row {row} has gaussian_index {i}")));
        }
        labels.push(l);
        probabilities.push(p);
    }
    let cluster_count = labels.iter().map(|&l| l + 1).max().unwrap_or(0).max(0) as usize;
    Ok(ClusterResult {
        labels,
        cluster_count,
        probabilities,
        stabilities: vec![1.0; cluster_count],
    })
}
