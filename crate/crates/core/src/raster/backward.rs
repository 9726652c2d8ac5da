use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::forward::{walk_pixel, Blend, Consts, RenderOutput};
use super::prep::{prepare, Prepared, ValueSource};
use super::{RasterSettings, VarianceGrad};
use crate::error::{contract, Result};
use crate::real::{Precision, Real};
use crate::scene::geometry::{quat_backward, Intrinsics};
use crate::scene::sh::basis_with_grad;
use crate::scene::{sh_bases, Camera, GaussianCloud, ParamGroup};

/// Upstream gradients of a scalar loss with respect to rendered maps. Each
/// present map must have the same layout as the matching [`RenderOutput`] map.
#[derive(Clone, Debug, Default)]
pub struct OutputGrads {
    pub color: Option<Vec<f64>>,
    pub feature: Option<Vec<f64>>,
    pub feature_sq: Option<Vec<f64>>,
    pub variance: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub depth: Option<Vec<f64>>,
}

/// Gradients with respect to every parameter array of a [`GaussianCloud`].
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGrads {
    pub means: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
    pub features: Vec<f64>,
    /// Norm of the gradient with respect to the projected mean in NDC units
    /// (pixel gradient scaled by half the image size); drives densification.
    pub mean2d_norm: Vec<f64>,
    /// Whether the Gaussian produced a splat in this view.
    pub visible: Vec<bool>,
}

impl RenderGrads {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        RenderGrads {
            means: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            sh_coeffs: vec![0.0; n * cloud.sh_stride()],
            features: vec![0.0; n * cloud.feature_dim()],
            mean2d_norm: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Means => self.means.as_flattened(),
            ParamGroup::Rotations => self.rotations.as_flattened(),
            ParamGroup::LogScales => self.log_scales.as_flattened(),
            ParamGroup::OpacityLogits => &self.opacity_logits,
            ParamGroup::Sh => &self.sh_coeffs,
            ParamGroup::Features => &self.features,
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::Means => self.means.as_flattened_mut(),
            ParamGroup::Rotations => self.rotations.as_flattened_mut(),
            ParamGroup::LogScales => self.log_scales.as_flattened_mut(),
            ParamGroup::OpacityLogits => &mut self.opacity_logits,
            ParamGroup::Sh => &mut self.sh_coeffs,
            ParamGroup::Features => &mut self.features,
        }
    }

    pub fn all_finite(&self) -> bool {
        ParamGroup::ALL
            .iter()
            .all(|&g| self.group(g).iter().all(|v| v.is_finite()))
    }

    /// Largest absolute entry over all parameter groups.
    pub fn max_abs(&self) -> f64 {
        ParamGroup::ALL
            .iter()
            .flat_map(|&g| self.group(g).iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

// Layout of one splat's screen-space gradient record.
const U: usize = 0;
const V: usize = 1;
const CA: usize = 2;
const CB: usize = 3;
const CC: usize = 4;
const OP: usize = 5;
const COL: usize = 6;
const DEPTH: usize = 9;
const FEAT: usize = 10;

struct Upstream<'a> {
    color: Option<&'a [f64]>,
    feature: Option<&'a [f64]>,
    feature_sq: Option<&'a [f64]>,
    variance: Option<&'a [f64]>,
    alpha: Option<&'a [f64]>,
    depth: Option<&'a [f64]>,
    /// Rendered feature map, needed by the variance gradient.
    rendered_feature: Option<&'a [f64]>,
    mode: VarianceGrad,
}

fn backward_tile<T: Real>(
    prep: &Prepared<T>,
    tile: usize,
    cam: &Camera,
    settings: &RasterSettings,
    up: &Upstream<'_>,
) -> Vec<T> {
    let dim = prep.dim;
    let stride = FEAT + dim;
    let list = &prep.tiles[tile];
    let mut partial = vec![T::zero(); list.len() * stride];
    if list.is_empty() {
        return partial;
    }
    let (x0, y0, x1, y1) = prep.tile_rect(tile, cam, settings.tile_size);
    let consts = Consts::of(settings);
    let half = T::of(0.5);
    let two = T::of(2.0);
    let w = cam.width;
    let mut blends: Vec<Blend<T>> = Vec::new();
    let mut g_feat = vec![T::zero(); dim];
    let mut g_fsq = vec![T::zero(); dim];
    let mut var_only = vec![T::zero(); dim];
    let mut pix_feat = vec![T::zero(); dim];
    for y in y0..y1 {
        for x in x0..x1 {
            let g = y * w + x;
            let mut g_color = [T::zero(); 3];
            if let Some(c) = up.color {
                for ch in 0..3 {
                    g_color[ch] = T::of(c[g * 3 + ch]);
                }
            }
            let mut any_feat = false;
            for k in 0..dim {
                g_feat[k] = up.feature.map_or(T::zero(), |f| T::of(f[g * dim + k]));
                g_fsq[k] = up.feature_sq.map_or(T::zero(), |f| T::of(f[g * dim + k]));
                var_only[k] = T::zero();
                if let (Some(dv), Some(rf)) = (up.variance, up.rendered_feature) {
                    let dv = T::of(dv[g * dim + k]);
                    let fk = T::of(rf[g * dim + k]);
                    pix_feat[k] = fk;
                    match up.mode {
                        VarianceGrad::Full => {
                            g_fsq[k] += dv;
                            g_feat[k] -= two * fk * dv;
                        }
                        VarianceGrad::FeaturesOnly => var_only[k] = dv,
                    }
                }
                any_feat |= g_feat[k] != T::zero() || g_fsq[k] != T::zero() || var_only[k] != T::zero();
            }
            let g_alpha = up.alpha.map_or(T::zero(), |a| T::of(a[g]));
            let g_depth = up.depth.map_or(T::zero(), |d| T::of(d[g]));
            if !any_feat
                && g_alpha == T::zero()
                && g_depth == T::zero()
                && g_color.iter().all(|v| *v == T::zero())
            {
                continue;
            }

            let px = T::of(x as f64) + half;
            let py = T::of(y as f64) + half;
            blends.clear();
            walk_pixel(prep, list, px, py, &consts, |b| blends.push(b));

            // Back to front: `acc` is the gradient-weighted value of everything
            // behind the current splat, per unit of its transmittance.
            let mut acc = T::zero();
            for bl in blends.iter().rev() {
                let sp = &prep.splats[bl.splat as usize];
                let rec = &mut partial[bl.slot as usize * stride..(bl.slot as usize + 1) * stride];
                let wgt = bl.alpha * bl.trans;
                let mut gv = g_alpha + g_depth * sp.depth;
                rec[DEPTH] += g_depth * wgt;
                for ch in 0..3 {
                    gv += g_color[ch] * sp.color[ch];
                    if !sp.clamped[ch] {
                        rec[COL + ch] += g_color[ch] * wgt;
                    }
                }
                if any_feat {
                    let vals = &prep.values[bl.splat as usize * dim..(bl.splat as usize + 1) * dim];
                    for k in 0..dim {
                        let f = vals[k];
                        gv += g_feat[k] * f + g_fsq[k] * f * f;
                        rec[FEAT + k] += wgt * (g_feat[k] + two * f * g_fsq[k])
                            + wgt * two * (f - pix_feat[k]) * var_only[k];
                    }
                }
                let d_alpha = bl.trans * (gv - acc);
                acc = bl.alpha * gv + (T::one() - bl.alpha) * acc;
                if bl.clamped {
                    continue;
                }
                let gauss = bl.alpha / sp.opacity;
                rec[OP] += d_alpha * gauss;
                let d_power = d_alpha * bl.alpha;
                let [a, b, c] = sp.conic;
                rec[U] += d_power * (a * bl.dx + b * bl.dy);
                rec[V] += d_power * (c * bl.dy + b * bl.dx);
                rec[CA] += -d_power * half * bl.dx * bl.dx;
                rec[CB] += -d_power * bl.dx * bl.dy;
                rec[CC] += -d_power * half * bl.dy * bl.dy;
            }
        }
    }
    partial
}

struct GaussGrad {
    mean: [f64; 3],
    rotation: [f64; 4],
    log_scale: [f64; 3],
    opacity_logit: f64,
    sh: Vec<f64>,
    mean2d_norm: f64,
}

fn splat_to_params<T: Real>(
    prep: &Prepared<T>,
    s: usize,
    rec: &[T],
    cloud: &GaussianCloud,
    cam: &Camera,
    k: &Intrinsics<T>,
    w: &Matrix3<T>,
) -> GaussGrad {
    let sp = &prep.splats[s];
    let two = T::of(2.0);
    let half = T::of(0.5);

    // Color -> SH coefficients and view direction.
    let degree = cloud.sh_degree();
    let nb = sh_bases(degree);
    let len = sp.view_vec.norm();
    let dir = if len > T::zero() { sp.view_vec / len } else { Vector3::z() };
    let (basis, dbasis) = basis_with_grad(degree, &dir);
    let coeffs = cloud.sh(sp.gaussian);
    let mut sh = vec![0.0; 3 * nb];
    let mut g_dir = Vector3::<T>::zeros();
    for ch in 0..3 {
        if sp.clamped[ch] {
            continue;
        }
        let gc = rec[COL + ch];
        for b in 0..nb {
            sh[ch * nb + b] = (gc * basis[b]).to_f64();
            let cb = T::of(coeffs[ch * nb + b]) * gc;
            for a in 0..3 {
                g_dir[a] += cb * dbasis[b][a];
            }
        }
    }
    let g_view = if len > T::zero() {
        (g_dir - dir * dir.dot(&g_dir)) / len
    } else {
        Vector3::zeros()
    };

    // Conic -> 2D covariance -> 3D covariance and projection Jacobian.
    let [a, b, c] = sp.conic;
    let q = Matrix2::new(a, b, b, c);
    let g_q = Matrix2::new(rec[CA], rec[CB] * half, rec[CB] * half, rec[CC]);
    let g_cov2 = -(q * g_q * q);
    let jw = &sp.geom.jw;
    let g_sigma = jw.transpose() * g_cov2 * jw;
    let g_jw = (g_cov2 * jw * sp.cov3d) * two;
    let g_j = g_jw * w.transpose();

    let t = &sp.geom.t;
    let iz = T::one() / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (gu, gv) = (rec[U], rec[V]);
    let g_t = Vector3::new(
        gu * k.fx * iz - k.fx * iz2 * g_j[(0, 2)],
        gv * k.fy * iz - k.fy * iz2 * g_j[(1, 2)],
        -gu * k.fx * t.x * iz2 - gv * k.fy * t.y * iz2 - k.fx * iz2 * g_j[(0, 0)]
            - k.fy * iz2 * g_j[(1, 1)]
            + two * k.fx * t.x * iz3 * g_j[(0, 2)]
            + two * k.fy * t.y * iz3 * g_j[(1, 2)]
            + rec[DEPTH],
    );
    let g_mean = w.transpose() * g_t + g_view;

    // Sigma = M M^T with M = R S.
    let m = sp.rot * Matrix3::from_diagonal(&sp.scale);
    let g_m = (g_sigma * m) * two;
    let mut log_scale = [0.0; 3];
    let mut g_r = Matrix3::<T>::zeros();
    for j in 0..3 {
        let mut gs = T::zero();
        for i in 0..3 {
            gs += g_m[(i, j)] * sp.rot[(i, j)];
            g_r[(i, j)] = g_m[(i, j)] * sp.scale[j];
        }
        log_scale[j] = (gs * sp.scale[j]).to_f64();
    }
    let g_q4 = quat_backward(&sp.unit_q, sp.q_norm, &g_r);

    let o = sp.opacity;
    let ndc_u = gu * T::of(cam.width as f64 * 0.5);
    let ndc_v = gv * T::of(cam.height as f64 * 0.5);
    GaussGrad {
        mean: [g_mean.x.to_f64(), g_mean.y.to_f64(), g_mean.z.to_f64()],
        rotation: g_q4.map(|v| v.to_f64()),
        log_scale,
        opacity_logit: (rec[OP] * o * (T::one() - o)).to_f64(),
        sh,
        mean2d_norm: (ndc_u * ndc_u + ndc_v * ndc_v).sqrt().to_f64(),
    }
}

fn backward_impl<T: Real>(
    cloud: &GaussianCloud,
    cam: &Camera,
    settings: &RasterSettings,
    up: &Upstream<'_>,
    source: ValueSource<'_>,
) -> RenderGrads {
    let prep = prepare::<T>(cloud, cam, settings, source, None);
    let dim = prep.dim;
    let stride = FEAT + dim;
    let partials: Vec<Vec<T>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|t| backward_tile(&prep, t, cam, settings, up))
        .collect();
    let mut acc = vec![T::zero(); prep.splats.len() * stride];
    for (t, partial) in partials.iter().enumerate() {
        for (slot, &s) in prep.tiles[t].iter().enumerate() {
            let dst = &mut acc[s as usize * stride..(s as usize + 1) * stride];
            for (d, v) in dst.iter_mut().zip(&partial[slot * stride..(slot + 1) * stride]) {
                *d += *v;
            }
        }
    }

    let k = Intrinsics::<T>::of(cam);
    let w: Matrix3<T> = cam.rotation_matrix().map(T::of);
    let per_splat: Vec<GaussGrad> = (0..prep.splats.len())
        .into_par_iter()
        .map(|s| splat_to_params(&prep, s, &acc[s * stride..(s + 1) * stride], cloud, cam, &k, &w))
        .collect();

    let mut grads = RenderGrads::zeros(cloud);
    let sh_stride = cloud.sh_stride();
    let fdim = cloud.feature_dim();
    for (s, gg) in per_splat.into_iter().enumerate() {
        let i = prep.splats[s].gaussian;
        grads.visible[i] = true;
        grads.means[i] = gg.mean;
        grads.rotations[i] = gg.rotation;
        grads.log_scales[i] = gg.log_scale;
        grads.opacity_logits[i] = gg.opacity_logit;
        grads.sh_coeffs[i * sh_stride..(i + 1) * sh_stride].copy_from_slice(&gg.sh);
        grads.mean2d_norm[i] = gg.mean2d_norm;
        if matches!(source, ValueSource::Features) {
            for kk in 0..fdim {
                grads.features[i * fdim + kk] = acc[s * stride + FEAT + kk].to_f64();
            }
        }
    }
    grads
}

fn check_len(name: &str, grad: &Option<Vec<f64>>, out: Option<usize>) -> Result<()> {
    match (grad, out) {
        (None, _) => Ok(()),
        (Some(_), None) => Err(contract(format!(
            "gradient supplied for {name} but the render has no {name} map"
        ))),
        (Some(g), Some(n)) if g.len() != n => Err(contract(format!(
            "{name} gradient has {} entries, render map has {n}",
            g.len()
        ))),
        _ => Ok(()),
    }
}

/// Analytic gradients of a scalar loss with respect to every cloud parameter,
/// given the loss gradients with respect to the maps of `output`.
pub fn render_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    output: &RenderOutput,
    d_output: &OutputGrads,
    settings: &RasterSettings,
) -> Result<RenderGrads> {
    if output.width != cam.width || output.height != cam.height {
        return Err(contract("render output does not match the camera"));
    }
    let n = output.pixel_count();
    let d = output.feature_dim;
    check_len("color", &d_output.color, output.color.as_ref().map(Vec::len))?;
    check_len("feature", &d_output.feature, output.feature.as_ref().map(Vec::len))?;
    check_len("feature_sq", &d_output.feature_sq, output.feature_sq.as_ref().map(Vec::len))?;
    check_len("variance", &d_output.variance, output.variance.as_ref().map(Vec::len))?;
    check_len("alpha", &d_output.alpha, Some(n))?;
    check_len("depth", &d_output.depth, Some(n))?;
    if output.feature.is_some() && d != cloud.feature_dim() {
        return Err(contract("render feature dimension differs from the cloud"));
    }

    let up = Upstream {
        color: d_output.color.as_deref(),
        feature: d_output.feature.as_deref(),
        feature_sq: d_output.feature_sq.as_deref(),
        variance: d_output.variance.as_deref(),
        alpha: d_output.alpha.as_deref(),
        depth: d_output.depth.as_deref(),
        rendered_feature: output.feature.as_deref(),
        mode: settings.variance_grad,
    };
    let needs_features =
        up.feature.is_some() || up.feature_sq.is_some() || up.variance.is_some();
    let source = if needs_features {
        ValueSource::Features
    } else {
        ValueSource::None
    };
    Ok(match settings.precision {
        Precision::F32 => backward_impl::<f32>(cloud, cam, settings, &up, source),
        Precision::F64 => backward_impl::<f64>(cloud, cam, settings, &up, source),
    })
}
