use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::TrainerSection;
use crate::scene::geometry::quat_to_matrix;
use crate::scene::GaussianCloud;

/// What one densify/prune pass did. `src[i]` is the pre-pass index that row
/// `i` of the new cloud was copied from, or `None` for clones and split
/// children (which start with fresh optimizer state).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub src: Vec<Option<usize>>,
    /// Pre-pass index each row's parameters derive from (for every row).
    pub parent: Vec<usize>,
}

/// Clones small and splits large Gaussians whose mean screen-space gradient
/// reaches the threshold, then prunes nearly transparent ones.
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    mean_grads: &[f64],
    cfg: &TrainerSection,
    extent: f64,
    rng: &mut ChaCha8Rng,
) -> DensifyReport {
    let n = cloud.len();
    let small = cfg.percent_dense * extent;
    let mut clone = vec![false; n];
    let mut split = vec![false; n];
    let mut size = n;
    for i in 0..n {
        if !(mean_grads[i] >= cfg.densify_grad_threshold) {
            continue;
        }
        let max_scale = cloud.scale(i).into_iter().fold(f64::NEG_INFINITY, f64::max);
        // A clone adds one Gaussian; a split replaces one with two.
        if size + 1 > cfg.max_gaussians {
            break;
        }
        size += 1;
        if max_scale <= small {
            clone[i] = true;
        } else {
            split[i] = true;
        }
    }

    let mut parent: Vec<usize> = (0..n).filter(|&i| !split[i]).collect();
    let mut src: Vec<Option<usize>> = parent.iter().map(|&i| Some(i)).collect();
    for i in (0..n).filter(|&i| clone[i]) {
        parent.push(i);
        src.push(None);
    }
    let first_child = parent.len();
    for i in (0..n).filter(|&i| split[i]) {
        parent.extend([i, i]);
        src.extend([None, None]);
    }
    let mut out = cloud.select(&parent);
    let shrink = cfg.split_scale_divisor.ln();
    for row in first_child..out.len() {
        let i = parent[row];
        let scale = Vector3::from(cloud.scale(i));
        let offset = match quat_to_matrix(&cloud.rotations[i]) {
            Some((rot, _, _)) => {
                let e = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                rot * scale.component_mul(&e)
            }
            None => Vector3::zeros(),
        };
        for a in 0..3 {
            out.means[row][a] += offset[a];
            out.log_scales[row][a] -= shrink;
        }
    }

    let keep: Vec<bool> = (0..out.len()).map(|r| out.opacity(r) >= cfg.prune_opacity).collect();
    let pruned = keep.iter().filter(|&&k| !k).count();
    out.retain_mask(&keep);
    let src: Vec<Option<usize>> = src.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(s, _)| s).collect();
    let parent: Vec<usize> = parent.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| p).collect();
    *cloud = out;
    DensifyReport {
        cloned: clone.iter().filter(|&&c| c).count(),
        split: split.iter().filter(|&&s| s).count(),
        pruned,
        src,
        parent,
    }
}
