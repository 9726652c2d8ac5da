//! Point-cloud label transfer and graph-based smoothing.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::spatial::KdTree;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledPointCloud {
    pub positions: Vec<[f64; 3]>,
    /// Predicted instance per point, `-1` when unassigned.
    pub predicted: Vec<i64>,
    pub gt_instance: Option<Vec<i64>>,
    pub gt_semantic: Option<Vec<i64>>,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Labels each point with the label of the nearest Gaussian mean (ties to
/// the lower index).
pub fn transfer_labels(means: &[[f64; 3]], labels: &[i64], points: &[[f64; 3]]) -> Result<Vec<i64>> {
    if means.is_empty() {
        return Err(Error::InvalidParameter("cannot transfer labels from an empty cloud".into()));
    }
    if means.len() != labels.len() {
        return Err(contract(format!("{} labels for {} means", labels.len(), means.len())));
    }
    let tree = KdTree::new(means);
    Ok(points
        .iter()
        .map(|p| labels[tree.nearest(p).expect("tree is not empty").0])
        .collect())
}

/// Length of the bounding-box diagonal.
pub fn diagonal(points: &[[f64; 3]]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if points.is_empty() {
        return 0.0;
    }
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
}

struct Segments {
    parent: Vec<usize>,
    size: Vec<usize>,
    /// Largest edge weight inside each component.
    internal: Vec<f64>,
}

impl Segments {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Felzenszwalb-Huttenlocher segmentation of the k-nearest-neighbor graph
/// with Euclidean edge weights and threshold function `threshold / |C|`.
/// Returns a segment id (a representative point index) per point.
pub fn fh_segments(points: &[[f64; 3]], k: usize, threshold: f64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidParameter("graph smoothing needs k >= 1".into()));
    }
    let n = points.len();
    let tree = KdTree::new(points);
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * k);
    for (i, p) in points.iter().enumerate() {
        for (j, d2) in tree.knn(p, k + 1) {
            if j != i {
                edges.push((d2.sqrt(), i.min(j), i.max(j)));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    edges.dedup();
    let mut s = Segments {
        parent: (0..n).collect(),
        size: vec![1; n],
        internal: vec![0.0; n],
    };
    for (w, a, b) in edges {
        let (ra, rb) = (s.find(a), s.find(b));
        if ra == rb {
            continue;
        }
        let ta = s.internal[ra] + threshold / s.size[ra] as f64;
        let tb = s.internal[rb] + threshold / s.size[rb] as f64;
        if w <= ta.min(tb) {
            let (big, small) = if s.size[ra] >= s.size[rb] { (ra, rb) } else { (rb, ra) };
            s.parent[small] = big;
            s.size[big] += s.size[small];
            s.internal[big] = w.max(s.internal[big]).max(s.internal[small]);
        }
    }
    Ok((0..n).map(|i| s.find(i)).collect())
}

/// Replaces every point's label with the majority label of its segment.
/// Unassigned points do not vote; ties go to the smaller label; segments
/// with no assigned point stay unassigned.
pub fn graph_smooth(cloud: &LabeledPointCloud, k: usize, threshold: f64) -> Result<LabeledPointCloud> {
    if cloud.predicted.len() != cloud.len() {
        return Err(contract("one predicted label per point is required"));
    }
    let seg = fh_segments(&cloud.positions, k, threshold)?;
    let mut votes: HashMap<usize, HashMap<i64, usize>> = HashMap::new();
    for (&s, &l) in seg.iter().zip(&cloud.predicted) {
        if l >= 0 {
            *votes.entry(s).or_default().entry(l).or_default() += 1;
        }
    }
    let winner: HashMap<usize, i64> = votes
        .into_iter()
        .map(|(s, v)| {
            let best = v.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).unwrap().0;
            (s, best)
        })
        .collect();
    Ok(LabeledPointCloud {
        predicted: seg.iter().map(|s| winner.get(s).copied().unwrap_or(-1)).collect(),
        ..cloud.clone()
    })
}
