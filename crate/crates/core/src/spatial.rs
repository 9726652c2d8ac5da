//! Exact nearest-neighbor queries over 3D points.

/// Static k-d tree. Ties in distance resolve to the lower point index.
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    /// Permuted point indices; each subtree owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy)]
struct Node {
    lo: usize,
    hi: usize,
    /// Split axis, or `usize::MAX` for a leaf.
    axis: usize,
    split: f64,
    left: usize,
    right: usize,
}

const LEAF_SIZE: usize = 8;

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[inline]
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, lo: usize, hi: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            axis: usize::MAX,
            split: 0.0,
            left: 0,
            right: 0,
        });
        if hi - lo <= LEAF_SIZE {
            return id;
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in &self.order[lo..hi] {
            for a in 0..3 {
                min[a] = min[a].min(self.points[i][a]);
                max[a] = max[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b]))).unwrap();
        if max[axis] - min[axis] <= 0.0 {
            return id;
        }
        let mid = (lo + hi) / 2;
        let pts = self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let split = pts[self.order[mid]][axis];
        let left = self.build(lo, mid);
        let right = self.build(mid, hi);
        let node = &mut self.nodes[id];
        node.axis = axis;
        node.split = split;
        node.left = left;
        node.right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.nearest_in(0, q, &mut best);
        Some((best.1, best.0))
    }

    fn nearest_in(&self, id: usize, q: &[f64; 3], best: &mut (f64, usize)) {
        let node = self.nodes[id];
        if node.axis == usize::MAX {
            for &i in &self.order[node.lo..node.hi] {
                let cand = (dist2(&self.points[i], q), i);
                if better(cand, *best) {
                    *best = cand;
                }
            }
            return;
        }
        let diff = q[node.axis] - node.split;
        let (near, far) = if diff < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.nearest_in(near, q, best);
        // `<=` keeps equidistant points with a lower index reachable.
        if diff * diff <= best.0 {
            self.nearest_in(far, q, best);
        }
    }

    /// The `k` nearest points as `(index, squared distance)`, closest first.
    pub fn knn(&self, q: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.points.is_empty() {
            self.knn_in(0, q, k, &mut heap);
        }
        heap.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn knn_in(&self, id: usize, q: &[f64; 3], k: usize, found: &mut Vec<(f64, usize)>) {
        let node = self.nodes[id];
        if node.axis == usize::MAX {
            for &i in &self.order[node.lo..node.hi] {
                let cand = (dist2(&self.points[i], q), i);
                if found.len() < k || better(cand, found[found.len() - 1]) {
                    let pos = found.partition_point(|&e| better(e, cand));
                    found.insert(pos, cand);
                    found.truncate(k);
                }
            }
            return;
        }
        let diff = q[node.axis] - node.split;
        let (near, far) = if diff < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.knn_in(near, q, k, found);
        if found.len() < k || diff * diff <= found[found.len() - 1].0 {
            self.knn_in(far, q, k, found);
        }
    }
}
