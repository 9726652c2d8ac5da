//! Brute-force HDBSCAN: every level of the hierarchy is recomputed as the
//! connected components of the thresholded mutual reachability graph.

#![allow(dead_code)]

pub struct Oracle {
    pub labels: Vec<i64>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lambda_of(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d
    } else {
        f64::INFINITY
    }
}

/// Components of `set` using only edges with weight strictly below `t`.
fn components(mrd: &[Vec<f64>], set: &[usize], t: f64) -> Vec<Vec<usize>> {
    let mut seen = vec![false; set.len()];
    let mut out = Vec::new();
    for s in 0..set.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![set[s]];
        let mut queue = vec![s];
        while let Some(a) = queue.pop() {
            for b in 0..set.len() {
                if !seen[b] && mrd[set[a]][set[b]] < t {
                    seen[b] = true;
                    comp.push(set[b]);
                    queue.push(b);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Smallest threshold at which `set` is connected (edges at or below it).
fn bottleneck(mrd: &[Vec<f64>], set: &[usize]) -> f64 {
    let mut ws: Vec<f64> = Vec::new();
    for (i, &a) in set.iter().enumerate() {
        for &b in &set[i + 1..] {
            ws.push(mrd[a][b]);
        }
    }
    ws.sort_by(f64::total_cmp);
    ws.dedup();
    let connected = |t: f64| {
        let mut seen = vec![false; set.len()];
        seen[0] = true;
        let mut queue = vec![0];
        let mut count = 1;
        while let Some(a) = queue.pop() {
            for b in 0..set.len() {
                if !seen[b] && mrd[set[a]][set[b]] <= t {
                    seen[b] = true;
                    count += 1;
                    queue.push(b);
                }
            }
        }
        count == set.len()
    };
    let (mut lo, mut hi) = (0, ws.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if connected(ws[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    ws[lo]
}

struct Cluster {
    parent: Option<usize>,
    birth: f64,
    children: Vec<usize>,
    /// (point, lambda at which it left this cluster)
    fallen: Vec<(usize, f64)>,
    /// Sizes and lambdas of child clusters at their birth.
    split: Vec<(usize, f64)>,
}

pub fn oracle(points: &[f64], dim: usize, mcs: usize, min_samples: usize, allow_single: bool) -> Oracle {
    let n = points.len() / dim;
    if n < mcs || n == 1 {
        return Oracle { labels: vec![-1; n] };
    }
    let p = |i: usize| &points[i * dim..(i + 1) * dim];
    let k = min_samples.min(n);
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| dist(p(i), p(j))).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    let mrd: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dist(p(i), p(j)).max(core[i]).max(core[j])).collect())
        .collect();

    let mut clusters = vec![Cluster {
        parent: None,
        birth: 0.0,
        children: vec![],
        fallen: vec![],
        split: vec![],
    }];
    let mut work: Vec<(Vec<usize>, usize)> = vec![((0..n).collect(), 0)];
    while let Some((set, c)) = work.pop() {
        if set.len() == 1 {
            let b = clusters[c].birth;
            clusters[c].fallen.push((set[0], b));
            continue;
        }
        let t = bottleneck(&mrd, &set);
        let lambda = lambda_of(t);
        let parts = components(&mrd, &set, t);
        let big: Vec<&Vec<usize>> = parts.iter().filter(|s| s.len() >= mcs).collect();
        let small: Vec<&Vec<usize>> = parts.iter().filter(|s| s.len() < mcs).collect();
        match big.len() {
            0 => {
                for &q in &set {
                    clusters[c].fallen.push((q, lambda));
                }
            }
            1 => {
                for s in small {
                    for &q in s {
                        clusters[c].fallen.push((q, lambda));
                    }
                }
                work.push((big[0].clone(), c));
            }
            _ => {
                for s in small {
                    for &q in s {
                        clusters[c].fallen.push((q, lambda));
                    }
                }
                for b in big {
                    let id = clusters.len();
                    clusters.push(Cluster {
                        parent: Some(c),
                        birth: lambda,
                        children: vec![],
                        fallen: vec![],
                        split: vec![],
                    });
                    clusters[c].children.push(id);
                    clusters[c].split.push((b.len(), lambda));
                    work.push((b.clone(), id));
                }
            }
        }
    }

    let gain = |l: f64, b: f64| if l == b { 0.0 } else { l - b };
    let stability: Vec<f64> = clusters
        .iter()
        .map(|c| {
            c.fallen.iter().map(|&(_, l)| gain(l, c.birth)).sum::<f64>()
                + c.split.iter().map(|&(s, l)| gain(l, c.birth) * s as f64).sum::<f64>()
        })
        .collect();

    // Excess of mass, evaluated recursively from the root.
    fn choose(c: usize, clusters: &[Cluster], st: &[f64], allow_self: bool, out: &mut Vec<usize>) -> f64 {
        if clusters[c].children.is_empty() {
            if allow_self {
                out.push(c);
            }
            return st[c];
        }
        let mut picked = Vec::new();
        let sub: f64 = clusters[c].children.iter().map(|&k| choose(k, clusters, st, true, &mut picked)).sum();
        if allow_self && st[c] >= sub {
            out.push(c);
            st[c]
        } else {
            out.extend(picked);
            sub
        }
    }
    let mut selected = Vec::new();
    choose(0, &clusters, &stability, allow_single, &mut selected);
    selected.sort_unstable();

    let mut labels = vec![-1i64; n];
    for (label, &s) in selected.iter().enumerate() {
        let mut stack = vec![s];
        while let Some(c) = stack.pop() {
            for &(q, _) in &clusters[c].fallen {
                labels[q] = label as i64;
            }
            stack.extend_from_slice(&clusters[c].children);
        }
    }
    Oracle { labels }
}
