//! HDBSCAN over dense Euclidean feature vectors.
//!
//! Core distances count the point itself among its `min_samples` nearest
//! neighbors. The minimum spanning tree of the mutual reachability graph is
//! built with Prim's algorithm on the dense distance matrix (computed on the
//! fly). Merges at exactly equal distance are treated as one simultaneous
//! multi-way split, so the hierarchy equals the connected components of the
//! threshold graph at every level and does not depend on tie order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    /// Lets the root (all points) be selected as the single cluster.
    pub allow_single_cluster: bool,
}

/// Flat clustering with per-point membership strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// `-1` for noise, otherwise `0..cluster_count`.
    pub labels: Vec<i64>,
    pub cluster_count: usize,
    pub probabilities: Vec<f64>,
    /// Excess-of-mass stability of each selected cluster.
    pub stabilities: Vec<f64>,
}

impl ClusterResult {
    pub fn all_noise(n: usize) -> Self {
        ClusterResult {
            labels: vec![-1; n],
            cluster_count: 0,
            probabilities: vec![0.0; n],
            stabilities: Vec::new(),
        }
    }
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn core_distances(points: &[f64], dim: usize, k: usize) -> Vec<f64> {
    let n = points.len() / dim;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let p = &points[i * dim..(i + 1) * dim];
            let mut d: Vec<f64> = (0..n).map(|j| euclidean(p, &points[j * dim..(j + 1) * dim])).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Prim's algorithm; returns edges `(a, b, weight)` in insertion order.
fn mst(points: &[f64], dim: usize, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = core.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let cp = &points[current * dim..(current + 1) * dim];
        let cc = core[current];
        let (w, next) = best
            .par_iter_mut()
            .zip(from.par_iter_mut())
            .enumerate()
            .filter(|(j, _)| !in_tree[*j])
            .map(|(j, (b, f))| {
                let d = euclidean(cp, &points[j * dim..(j + 1) * dim]).max(cc).max(core[j]);
                if d < *b {
                    *b = d;
                    *f = current;
                }
                (*b, j)
            })
            .reduce(
                || (f64::INFINITY, usize::MAX),
                |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        in_tree[next] = true;
        edges.push((from[next], next, w));
        current = next;
    }
    edges
}

struct Dendrogram {
    /// Children of internal node `n + k`.
    children: Vec<(usize, usize)>,
    dist: Vec<f64>,
    size: Vec<usize>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Dendrogram {
    let mut idx: Vec<usize> = (0..edges.len()).collect();
    idx.sort_by(|&a, &b| edges[a].2.total_cmp(&edges[b].2).then(a.cmp(&b)));
    let sorted: Vec<(usize, usize, f64)> = idx.iter().map(|&i| edges[i]).collect();
    edges.clear();
    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut d = Dendrogram {
        children: Vec::with_capacity(n),
        dist: Vec::with_capacity(n),
        size: Vec::new(),
    };
    for (a, b, w) in sorted {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let id = n + d.children.len();
        d.children.push((node_of[ra], node_of[rb]));
        d.dist.push(w);
        size.push(size[node_of[ra]] + size[node_of[rb]]);
        parent[ra] = rb;
        node_of[rb] = id;
    }
    d.size = size;
    d
}

/// One row of the condensed tree: `child` is a point (`< n`) or a cluster
/// id offset by `n`.
struct Row {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn lambda_of(dist: f64) -> f64 {
    if dist > 0.0 {
        1.0 / dist
    } else {
        f64::INFINITY
    }
}

fn leaves(d: &Dendrogram, n: usize, node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
        } else {
            let (a, b) = d.children[x - n];
            stack.push(b);
            stack.push(a);
        }
    }
}

/// Condensed tree rows and the birth lambda of every cluster (cluster 0 is the root).
fn condense(d: &Dendrogram, n: usize, mcs: usize) -> (Vec<Row>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut birth = vec![0.0];
    let root = 2 * n - 2;
    let mut work = vec![(root, 0usize)];
    while let Some((node, cluster)) = work.pop() {
        if node < n {
            rows.push(Row {
                parent: cluster,
                child: node,
                lambda: birth[cluster],
                size: 1,
            });
            continue;
        }
        let delta = d.dist[node - n];
        let lambda = lambda_of(delta);
        // Parts of the multi-way split: descend through merges at the same distance.
        let mut parts = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x >= n && d.dist[x - n] == delta {
                let (a, b) = d.children[x - n];
                stack.push(b);
                stack.push(a);
            } else {
                parts.push(x);
            }
        }
        parts.sort_unstable();
        let big: Vec<usize> = parts.iter().copied().filter(|&p| d.size[p] >= mcs).collect();
        let mut fall = Vec::new();
        for &p in parts.iter().filter(|&&p| d.size[p] < mcs) {
            leaves(d, n, p, &mut fall);
        }
        if big.len() == 1 {
            work.push((big[0], cluster));
        } else if big.len() >= 2 {
            for &p in &big {
                let id = birth.len();
                birth.push(lambda);
                rows.push(Row {
                    parent: cluster,
                    child: n + id,
                    lambda,
                    size: d.size[p],
                });
                work.push((p, id));
            }
        } else {
            // The cluster dissolves entirely.
            fall.clear();
            leaves(d, n, node, &mut fall);
        }
        for p in fall {
            rows.push(Row {
                parent: cluster,
                child: p,
                lambda,
                size: 1,
            });
        }
    }
    (rows, birth)
}

fn stability_terms(rows: &[Row], birth: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; birth.len()];
    for r in rows {
        let b = birth[r.parent];
        let gain = if r.lambda == b { 0.0 } else { r.lambda - b };
        s[r.parent] += gain * r.size as f64;
    }
    s
}

pub fn hdbscan(points: &[f64], dim: usize, params: &HdbscanParams) -> Result<ClusterResult> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(contract("point buffer length is not a multiple of the dimension"));
    }
    let n = points.len() / dim;
    if n == 0 {
        return Err(Error::InvalidParameter("hdbscan needs at least one point".into()));
    }
    if params.min_cluster_size < 2 || params.min_samples < 1 {
        return Err(Error::InvalidParameter(format!(
            "min_cluster_size must be >= 2 and min_samples >= 1, got {} and {}",
            params.min_cluster_size, params.min_samples
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite feature value".into()));
    }
    if n < params.min_cluster_size || n == 1 {
        return Ok(ClusterResult::all_noise(n));
    }
    let core = core_distances(points, dim, params.min_samples.min(n));
    let dendro = single_linkage(n, mst(points, dim, &core));
    let (rows, birth) = condense(&dendro, n, params.min_cluster_size);
    let nc = birth.len();

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for r in &rows {
        if r.child >= n {
            children[r.parent].push(r.child - n);
        }
    }
    let own = stability_terms(&rows, &birth);
    let mut best = own.clone();
    let mut selected = vec![false; nc];
    // Children always have larger ids than their parent.
    for c in (0..nc).rev() {
        if c == 0 && !params.allow_single_cluster {
            continue;
        }
        if children[c].is_empty() {
            selected[c] = true;
            continue;
        }
        let sub: f64 = children[c].iter().map(|&k| best[k]).sum();
        if sub > own[c] {
            best[c] = sub;
        } else {
            selected[c] = true;
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend_from_slice(&children[k]);
            }
        }
    }
    if !params.allow_single_cluster {
        selected[0] = false;
    }

    let mut up = vec![usize::MAX; nc];
    for r in &rows {
        if r.child >= n {
            up[r.child - n] = r.parent;
        }
    }
    let mut label_of_cluster = vec![-1i64; nc];
    let mut stabilities = Vec::new();
    for c in 0..nc {
        if selected[c] {
            label_of_cluster[c] = stabilities.len() as i64;
            stabilities.push(own[c]);
        }
    }
    let mut labels = vec![-1i64; n];
    let mut point_lambda = vec![0.0; n];
    let mut owner = vec![usize::MAX; n];
    for r in rows.iter().filter(|r| r.child < n) {
        point_lambda[r.child] = r.lambda;
        let mut c = r.parent;
        loop {
            if selected[c] {
                labels[r.child] = label_of_cluster[c];
                owner[r.child] = c;
                break;
            }
            if up[c] == usize::MAX {
                break;
            }
            c = up[c];
        }
    }
    let mut max_lambda = vec![0.0f64; nc];
    for p in 0..n {
        if owner[p] != usize::MAX {
            max_lambda[owner[p]] = max_lambda[owner[p]].max(point_lambda[p]);
        }
    }
    let probabilities = (0..n)
        .map(|p| {
            if owner[p] == usize::MAX {
                return 0.0;
            }
            let m = max_lambda[owner[p]];
            if m == f64::INFINITY {
                if point_lambda[p] == f64::INFINITY { 1.0 } else { 0.0 }
            } else if m > 0.0 {
                point_lambda[p].min(m) / m
            } else {
                1.0
            }
        })
        .collect();
    Ok(ClusterResult {
        labels,
        cluster_count: stabilities.len(),
        probabilities,
        stabilities,
    })
}
