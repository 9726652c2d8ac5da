use crate::config::TrainerSection;
use crate::scene::{GaussianCloud, ParamGroup};

/// First and second moments for every parameter group, plus the shared step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub step: usize,
    pub m: [Vec<f64>; 6],
    pub v: [Vec<f64>; 6],
}

fn group_index(g: ParamGroup) -> usize {
    ParamGroup::ALL.iter().position(|&x| x == g).unwrap()
}

impl Moments {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let sizes = ParamGroup::ALL.map(|g| cloud.group(g).len());
        Moments {
            step: 0,
            m: sizes.map(|n| vec![0.0; n]),
            v: sizes.map(|n| vec![0.0; n]),
        }
    }

    pub fn m(&self, g: ParamGroup) -> &[f64] {
        &self.m[group_index(g)]
    }

    pub fn v(&self, g: ParamGroup) -> &[f64] {
        &self.v[group_index(g)]
    }

    /// Reorders rows after densification: row `i` of the result copies row
    /// `src[i]` of the old state, or is zero when `src[i]` is `None`.
    pub fn remap(&mut self, cloud: &GaussianCloud, src: &[Option<usize>]) {
        for g in ParamGroup::ALL {
            let k = group_index(g);
            let stride = cloud.group_stride(g);
            for table in [&mut self.m[k], &mut self.v[k]] {
                let mut out = vec![0.0; src.len() * stride];
                for (i, s) in src.iter().enumerate() {
                    if let Some(s) = *s {
                        out[i * stride..(i + 1) * stride].copy_from_slice(&table[s * stride..(s + 1) * stride]);
                    }
                }
                *table = out;
            }
        }
    }
}

/// Learning rate per group at `step` (1-based). The position rate decays
/// exponentially from `lr_means` to `lr_means_final` over `total` steps and
/// is scaled by the scene extent.
pub fn learning_rate(cfg: &TrainerSection, group: ParamGroup, step: usize, total: usize, extent: f64) -> f64 {
    match group {
        ParamGroup::Means => {
            let t = if total == 0 { 0.0 } else { (step as f64 / total as f64).clamp(0.0, 1.0) };
            let (a, b) = (cfg.lr_means, cfg.lr_means_final);
            let lr = if a > 0.0 && b > 0.0 {
                (a.ln() * (1.0 - t) + b.ln() * t).exp()
            } else {
                a * (1.0 - t) + b * t
            };
            lr * extent
        }
        ParamGroup::Rotations => cfg.lr_rotations,
        ParamGroup::LogScales => cfg.lr_scales,
        ParamGroup::OpacityLogits => cfg.lr_opacity,
        ParamGroup::Sh => cfg.lr_sh,
        ParamGroup::Features => cfg.lr_features,
    }
}

/// One bias-corrected adaptive-moment step on `params`.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, step: usize, cfg: &TrainerSection) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
    }
}
