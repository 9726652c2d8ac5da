//! One-to-one matching of predicted and ground-truth instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Maximum-weight assignment of rows to columns (Kuhn-Munkres with
/// potentials). Returns the column for each row; rows beyond the column
/// count get `None`.
pub fn hungarian_max(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| weights[i][j]).collect()).collect();
        let mut out = vec![None; rows];
        for (j, r) in hungarian_max(&t).into_iter().enumerate() {
            if let Some(i) = r {
                out[i] = Some(j);
            }
        }
        return out;
    }
    // Minimize negated weights; 1-based arrays with a virtual column 0.
    let (n, m) = (rows, cols);
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub gt: i64,
    pub pred: Option<i64>,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Mean over ground-truth instances of the IoU with the matched
    /// prediction (0 when unmatched).
    pub miou: f64,
    /// Fraction of labeled predicted elements that fall inside their matched
    /// ground-truth instance.
    pub purity: f64,
    pub matches: Vec<InstanceMatch>,
}

/// Hungarian-matched instance IoU between two labelings of the same
/// elements (Gaussians or points). Negative labels mean unlabeled.
pub fn matched_instance_miou(pred: &[i64], gt: &[i64]) -> Result<MatchReport> {
    if pred.len() != gt.len() {
        return Err(contract(format!("{} predicted and {} ground-truth labels", pred.len(), gt.len())));
    }
    let index = |ls: &[i64]| -> BTreeMap<i64, usize> {
        let mut ids: Vec<i64> = ls.iter().copied().filter(|&l| l >= 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().enumerate().map(|(k, l)| (l, k)).collect()
    };
    let (pi, gi) = (index(pred), index(gt));
    if gi.is_empty() {
        return Err(Error::Undefined("no ground-truth instances".into()));
    }
    let mut inter = vec![vec![0usize; pi.len()]; gi.len()];
    let mut psize = vec![0usize; pi.len()];
    let mut gsize = vec![0usize; gi.len()];
    for (&p, &g) in pred.iter().zip(gt) {
        let p = (p >= 0).then(|| pi[&p]);
        let g = (g >= 0).then(|| gi[&g]);
        if let Some(p) = p {
            psize[p] += 1;
        }
        if let Some(g) = g {
            gsize[g] += 1;
        }
        if let (Some(p), Some(g)) = (p, g) {
            inter[g][p] += 1;
        }
    }
    let iou: Vec<Vec<f64>> = (0..gi.len())
        .map(|g| {
            (0..pi.len())
                .map(|p| inter[g][p] as f64 / (gsize[g] + psize[p] - inter[g][p]) as f64)
                .collect()
        })
        .collect();
    let assign = hungarian_max(&iou);
    let pred_ids: Vec<i64> = pi.keys().copied().collect();
    let mut matches = Vec::new();
    let mut covered = 0usize;
    for (g, (&gid, _)) in gi.iter().enumerate() {
        let m = assign[g].filter(|&p| inter[g][p] > 0);
        if let Some(p) = m {
            covered += inter[g][p];
        }
        matches.push(InstanceMatch {
            gt: gid,
            pred: m.map(|p| pred_ids[p]),
            iou: m.map_or(0.0, |p| iou[g][p]),
        });
    }
    let labeled: usize = psize.iter().sum();
    Ok(MatchReport {
        miou: matches.iter().map(|m| m.iou).sum::<f64>() / matches.len() as f64,
        purity: if labeled == 0 { 0.0 } else { covered as f64 / labeled as f64 },
        matches,
    })
}
