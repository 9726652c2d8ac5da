//! Training objectives and their gradients with respect to rendered maps.

pub mod ssim;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::LossSection;
use crate::error::{contract, Result};
use crate::masks::InstanceMask;
use crate::raster::{OutputGrads, RenderOutput};

/// Components of the photometric loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RgbLoss {
    pub l1: f64,
    /// `1 - SSIM`.
    pub ssim: f64,
    pub value: f64,
}

/// `(1 - beta) * L1 + beta * (1 - SSIM)` between pixel-major RGB images.
pub fn rgb_loss(rendered: &[f64], target: &[f64], width: usize, height: usize, beta: f64) -> Result<(RgbLoss, Vec<f64>)> {
    let n = width * height * 3;
    if rendered.len() != n || target.len() != n {
        return Err(contract(format!(
            "rgb_loss expects {n} values, got {} and {}",
            rendered.len(),
            target.len()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(crate::Error::InvalidParameter(format!("beta must lie in [0, 1], got {beta}")));
    }
    let inv = 1.0 / n as f64;
    let mut l1 = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let d = rendered[i] - target[i];
        l1 += d.abs();
        grad[i] = (1.0 - beta) * inv * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
    }
    l1 *= inv;
    let mut d_ssim = 0.0;
    if beta > 0.0 {
        let (s, g) = ssim::ssim_with_grad(rendered, target, width, height, 3);
        d_ssim = 1.0 - s;
        for (o, v) in grad.iter_mut().zip(g) {
            *o -= beta * v;
        }
    }
    let loss = RgbLoss {
        l1,
        ssim: d_ssim,
        value: (1.0 - beta) * l1 + beta * d_ssim,
    };
    Ok((loss, grad))
}

/// Result of the mask-driven contrastive loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Contrastive {
    pub pos: f64,
    pub neg: f64,
    /// Mean rendered feature per mask id, in ascending id order.
    pub prototypes: Vec<Vec<f64>>,
    /// Gradient of `w_pos * pos + w_neg * neg` with respect to the feature map.
    pub grad: Vec<f64>,
}

/// Pulls each mask's features toward its prototype (mean feature) and pushes
/// prototypes at least `gamma` apart in squared distance. Pixels with id 0
/// take no part.
pub fn instance_contrastive_loss(
    features: &[f64],
    dim: usize,
    mask: &InstanceMask,
    gamma: f64,
    w_pos: f64,
    w_neg: f64,
) -> Result<Contrastive> {
    let npx = mask.width * mask.height;
    if features.len() != npx * dim {
        return Err(contract(format!(
            "feature map has {} values, mask implies {}",
            features.len(),
            npx * dim
        )));
    }
    let mut groups: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (p, &id) in mask.ids.iter().enumerate() {
        if id != 0 {
            groups.entry(id).or_default().push(p);
        }
    }
    let mut grad = vec![0.0; npx * dim];
    let nv = groups.len();
    if nv == 0 {
        return Ok(Contrastive {
            grad,
            ..Contrastive::default()
        });
    }
    let members: Vec<&Vec<usize>> = groups.values().collect();
    let prototypes: Vec<Vec<f64>> = members
        .iter()
        .map(|pix| {
            let mut z = vec![0.0; dim];
            for &p in pix.iter() {
                for k in 0..dim {
                    z[k] += features[p * dim + k];
                }
            }
            z.iter().map(|v| v / pix.len() as f64).collect()
        })
        .collect();

    let mut pos = 0.0;
    for (i, pix) in members.iter().enumerate() {
        let m = pix.len() as f64;
        let mut sum = 0.0;
        for &p in pix.iter() {
            for k in 0..dim {
                let d = features[p * dim + k] - prototypes[i][k];
                sum += d * d;
                // The prototype's own dependence cancels since deviations sum to zero.
                grad[p * dim + k] += w_pos * 2.0 * d / (nv as f64 * m);
            }
        }
        pos += sum / m;
    }
    pos /= nv as f64;

    let mut neg = 0.0;
    if nv > 1 {
        let pairs = (nv * (nv - 1) / 2) as f64;
        let mut g_proto = vec![vec![0.0; dim]; nv];
        for i in 0..nv {
            for j in i + 1..nv {
                let d2: f64 = (0..dim).map(|k| (prototypes[i][k] - prototypes[j][k]).powi(2)).sum();
                let gap = gamma - d2;
                if gap > 0.0 {
                    neg += gap;
                    for k in 0..dim {
                        let g = -2.0 * (prototypes[i][k] - prototypes[j][k]) / pairs;
                        g_proto[i][k] += g;
                        g_proto[j][k] -= g;
                    }
                }
            }
        }
        neg /= pairs;
        for (i, pix) in members.iter().enumerate() {
            let m = pix.len() as f64;
            for &p in pix.iter() {
                for k in 0..dim {
                    grad[p * dim + k] += w_neg * g_proto[i][k] / m;
                }
            }
        }
    }
    Ok(Contrastive {
        pos,
        neg,
        prototypes,
        grad,
    })
}

/// Mean over pixels of the squared norm of the variance vector.
pub fn variance_loss(variance: &[f64], pixels: usize) -> Result<(f64, Vec<f64>)> {
    if pixels == 0 || variance.len() % pixels != 0 {
        return Err(contract("variance map size is not a multiple of the pixel count"));
    }
    let inv = 1.0 / pixels as f64;
    let value = variance.iter().map(|v| v * v).sum::<f64>() * inv;
    Ok((value, variance.iter().map(|v| 2.0 * v * inv).collect()))
}

/// Weighted sum of the photometric, contrastive and variance terms.
pub fn total_loss(rgb: f64, inst2d: f64, var: f64, cfg: &LossSection) -> f64 {
    rgb + cfg.lambda_inst2d * inst2d + cfg.lambda_var * var
}

/// Every loss term for one view.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l1: f64,
    /// `1 - SSIM`.
    pub ssim: f64,
    pub rgb: f64,
    pub pos: f64,
    pub neg: f64,
    pub inst2d: f64,
    pub var: f64,
    pub total: f64,
    #[serde(skip)]
    pub prototypes: Vec<Vec<f64>>,
}

impl LossReport {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("l1", self.l1),
            ("ssim", self.ssim),
            ("pos", self.pos),
            ("neg", self.neg),
            ("var", self.var),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Evaluates all losses on a render and returns the upstream map gradients.
/// The contrastive term needs a mask and the `feature` map; the variance
/// term needs the `variance` map. Terms with zero weight are skipped.
pub fn view_losses(
    out: &RenderOutput,
    target: &[f64],
    mask: Option<&InstanceMask>,
    cfg: &LossSection,
) -> Result<(LossReport, OutputGrads)> {
    let color = out
        .color
        .as_ref()
        .ok_or_else(|| contract("loss evaluation needs the color map"))?;
    let (rgb, d_color) = rgb_loss(color, target, out.width, out.height, cfg.beta)?;
    let mut report = LossReport {
        l1: rgb.l1,
        ssim: rgb.ssim,
        rgb: rgb.value,
        ..LossReport::default()
    };
    let mut grads = OutputGrads {
        color: Some(d_color),
        ..OutputGrads::default()
    };
    if cfg.lambda_inst2d > 0.0 {
        if let Some(mask) = mask {
            if mask.width != out.width || mask.height != out.height {
                return Err(contract("instance mask does not match the render size"));
            }
            let feat = out
                .feature
                .as_ref()
                .ok_or_else(|| contract("contrastive loss needs the feature map"))?;
            let c = instance_contrastive_loss(feat, out.feature_dim, mask, cfg.gamma, cfg.w_pos, cfg.w_neg)?;
            report.pos = c.pos;
            report.neg = c.neg;
            report.inst2d = cfg.w_pos * c.pos + cfg.w_neg * c.neg;
            report.prototypes = c.prototypes;
            grads.feature = Some(c.grad.iter().map(|g| cfg.lambda_inst2d * g).collect());
        }
    }
    if cfg.lambda_var > 0.0 {
        let var = out
            .variance
            .as_ref()
            .ok_or_else(|| contract("variance loss needs the variance map"))?;
        let (v, g) = variance_loss(var, out.pixel_count())?;
        report.var = v;
        grads.variance = Some(g.iter().map(|g| cfg.lambda_var * g).collect());
    }
    report.total = total_loss(report.rgb, report.inst2d, report.var, cfg);
    Ok((report, grads))
}
