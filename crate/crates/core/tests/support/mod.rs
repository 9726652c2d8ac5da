#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatseg_core::cluster::HdbscanParams;

/// Random instance: clustered continuous points, or coarse integer grids
/// that produce many tied distances and duplicate points.
pub fn instance(seed: u64) -> (Vec<f64>, usize, HdbscanParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=50);
    let dim = rng.random_range(1..=4);
    let gridded = seed % 3 == 0;
    let centers: Vec<Vec<f64>> = (0..rng.random_range(1..=4))
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let mut pts = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = &centers[rng.random_range(0..centers.len())];
        for a in 0..dim {
            let v = if gridded {
                (c[a] + rng.random_range(-2.0..2.0)).round()
            } else {
                c[a] + rng.random_range(-1.0..1.0) * rng.random_range(0.1..1.5)
            };
            pts.push(v);
        }
    }
    let params = HdbscanParams {
        min_cluster_size: rng.random_range(2..=8),
        min_samples: rng.random_range(1..=6),
        allow_single_cluster: rng.random_bool(0.2),
    };
    (pts, dim, params)
}
