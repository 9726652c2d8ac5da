//! Average precision for 3D instance segmentation over point sets.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredInstance {
    /// Indices of the points this prediction covers.
    pub points: Vec<usize>,
    pub confidence: f64,
    pub label: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub points: Vec<usize>,
    pub label: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApScores {
    /// Mean over IoU thresholds 0.50, 0.55, ..., 0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
}

/// IoU thresholds 0.50 to 0.95 in steps of 0.05.
pub fn ap_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// IoU of two sorted, duplicate-free index sets.
pub fn set_iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// AP at one threshold from a precomputed IoU matrix `iou[pred][gt]`.
/// Predictions are matched greedily in descending confidence (ties by
/// index), each to the unmatched ground truth of highest IoU at or above the
/// threshold. Precision is interpolated at 101 recall points.
fn ap_from_matrix(iou: &[Vec<f64>], order: &[usize], n_gt: usize, threshold: f64) -> f64 {
    let mut taken = vec![false; n_gt];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(order.len());
    for &p in order {
        let best = (0..n_gt)
            .filter(|&g| !taken[g] && iou[p][g] >= threshold)
            .max_by(|&a, &b| iou[p][a].total_cmp(&iou[p][b]).then(b.cmp(&a)));
        match best {
            Some(g) => {
                taken[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp, tp as f64 / (tp + fp) as f64));
    }
    (0..=100usize)
        .map(|r| {
            curve
                .iter()
                .filter(|&&(tp, _)| tp * 100 >= r * n_gt)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

fn scores(pred: &[PredInstance], gt: &[GtInstance]) -> Option<ApScores> {
    if gt.is_empty() {
        return None;
    }
    let ps: Vec<Vec<usize>> = pred.iter().map(|p| sorted(&p.points)).collect();
    let gs: Vec<Vec<usize>> = gt.iter().map(|g| sorted(&g.points)).collect();
    let iou: Vec<Vec<f64>> = ps.iter().map(|p| gs.iter().map(|g| set_iou(p, g)).collect()).collect();
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].confidence.total_cmp(&pred[a].confidence).then(a.cmp(&b)));
    let at = |t: f64| ap_from_matrix(&iou, &order, gt.len(), t);
    let ts = ap_thresholds();
    Some(ApScores {
        ap: ts.iter().map(|&t| at(t)).sum::<f64>() / ts.len() as f64,
        ap50: at(0.5),
        ap25: at(0.25),
    })
}

/// Class-agnostic AP: all instances pooled, labels ignored. `None` without
/// ground truth.
pub fn instance_ap(pred: &[PredInstance], gt: &[GtInstance]) -> Option<ApScores> {
    scores(pred, gt)
}

/// Semantic AP: computed per ground-truth label and averaged over labels
/// that have ground truth.
pub fn semantic_ap(pred: &[PredInstance], gt: &[GtInstance]) -> Option<ApScores> {
    let mut labels: Vec<i64> = gt.iter().map(|g| g.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let per: Vec<ApScores> = labels
        .iter()
        .filter_map(|&l| {
            let p: Vec<PredInstance> = pred.iter().filter(|p| p.label == l).cloned().collect();
            let g: Vec<GtInstance> = gt.iter().filter(|g| g.label == l).cloned().collect();
            scores(&p, &g)
        })
        .collect();
    if per.is_empty() {
        return None;
    }
    let n = per.len() as f64;
    Some(ApScores {
        ap: per.iter().map(|s| s.ap).sum::<f64>() / n,
        ap50: per.iter().map(|s| s.ap50).sum::<f64>() / n,
        ap25: per.iter().map(|s| s.ap25).sum::<f64>() / n,
    })
}

/// Groups per-point labels into instances (label `-1` is skipped).
pub fn instances_from_labels(labels: &[i64]) -> Vec<(i64, Vec<usize>)> {
    let mut by: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            by.entry(l).or_default().push(i);
        }
    }
    by.into_iter().collect()
}
