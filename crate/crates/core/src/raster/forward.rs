use rayon::prelude::*;

use super::prep::{prepare, Prepared, ValueSource};
use super::{Channels, RasterSettings};
use crate::error::{contract, Result};
use crate::real::{Precision, Real};
use crate::scene::{Camera, GaussianCloud};

/// Maps produced by one render pass. Multi-channel maps are pixel-major
/// (`(y * width + x) * channels + c`).
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Channels of `feature`, `feature_sq` and `variance`.
    pub feature_dim: usize,
    pub color: Option<Vec<f64>>,
    pub feature: Option<Vec<f64>>,
    /// Composited element-wise squared features.
    pub feature_sq: Option<Vec<f64>>,
    /// `feature_sq - feature^2`, the feature variance along each ray.
    pub variance: Option<Vec<f64>>,
    /// Accumulated opacity.
    pub alpha: Vec<f64>,
    /// Expected depth `sum_n w_n z_n` (not normalized by alpha).
    pub depth: Vec<f64>,
    /// Number of splats blended into each pixel.
    pub contrib_count: Vec<u32>,
}

impl RenderOutput {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn empty(cam: &Camera, dim: usize, channels: Channels) -> Self {
        let n = cam.pixel_count();
        let with_features = channels.features || channels.variance;
        RenderOutput {
            width: cam.width,
            height: cam.height,
            feature_dim: dim,
            color: channels.color.then(|| vec![0.0; n * 3]),
            feature: with_features.then(|| vec![0.0; n * dim]),
            feature_sq: channels.variance.then(|| vec![0.0; n * dim]),
            variance: channels.variance.then(|| vec![0.0; n * dim]),
            alpha: vec![0.0; n],
            depth: vec![0.0; n],
            contrib_count: vec![0; n],
        }
    }
}

/// Scalar constants of the compositing loop in working precision.
pub(crate) struct Consts<T> {
    pub alpha_min: T,
    pub alpha_max: T,
    pub t_min: T,
    pub cutoff_power: T,
}

impl<T: Real> Consts<T> {
    pub fn of(s: &RasterSettings) -> Self {
        Consts {
            alpha_min: T::of(s.alpha_min),
            alpha_max: T::of(s.alpha_max),
            t_min: T::of(s.transmittance_min),
            cutoff_power: T::of(0.5 * s.cutoff_sigma * s.cutoff_sigma),
        }
    }
}

/// One blended splat at a pixel.
#[derive(Clone, Copy)]
pub(crate) struct Blend<T> {
    pub splat: u32,
    /// Position of the splat in the tile list.
    pub slot: u32,
    pub alpha: T,
    /// Transmittance before this splat.
    pub trans: T,
    /// Whether alpha hit the clamp (no gradient flows through it).
    pub clamped: bool,
    pub dx: T,
    pub dy: T,
}

/// Front-to-back compositing walk for one pixel; calls `visit` for every
/// blended splat and returns the final transmittance.
#[inline]
pub(crate) fn walk_pixel<T: Real>(
    prep: &Prepared<T>,
    list: &[u32],
    px: T,
    py: T,
    c: &Consts<T>,
    mut visit: impl FnMut(Blend<T>),
) -> T {
    let mut trans = T::one();
    let half = T::of(0.5);
    for (slot, &s) in list.iter().enumerate() {
        let sp = &prep.splats[s as usize];
        let dx = px - sp.mean2d[0];
        let dy = py - sp.mean2d[1];
        let [a, b, cc] = sp.conic;
        let power = -half * (a * dx * dx + cc * dy * dy) - b * dx * dy;
        if power > T::zero() || -power > c.cutoff_power {
            continue;
        }
        let raw = sp.opacity * power.exp();
        let clamped = raw > c.alpha_max;
        let alpha = if clamped { c.alpha_max } else { raw };
        if alpha < c.alpha_min {
            continue;
        }
        let next = trans * (T::one() - alpha);
        if next < c.t_min {
            break;
        }
        visit(Blend {
            splat: s,
            slot: slot as u32,
            alpha,
            trans,
            clamped,
            dx,
            dy,
        });
        trans = next;
    }
    trans
}

struct TileMaps<T> {
    color: Vec<T>,
    feature: Vec<T>,
    feature_sq: Vec<T>,
    alpha: Vec<T>,
    depth: Vec<T>,
    count: Vec<u32>,
}

fn render_tile<T: Real>(
    prep: &Prepared<T>,
    tile: usize,
    cam: &Camera,
    settings: &RasterSettings,
    channels: Channels,
) -> TileMaps<T> {
    let (x0, y0, x1, y1) = prep.tile_rect(tile, cam, settings.tile_size);
    let npx = (x1 - x0) * (y1 - y0);
    let dim = prep.dim;
    let want_feat = channels.features || channels.variance;
    let mut out = TileMaps {
        color: vec![T::zero(); if channels.color { npx * 3 } else { 0 }],
        feature: vec![T::zero(); if want_feat { npx * dim } else { 0 }],
        feature_sq: vec![T::zero(); if channels.variance { npx * dim } else { 0 }],
        alpha: vec![T::zero(); npx],
        depth: vec![T::zero(); npx],
        count: vec![0; npx],
    };
    let consts = Consts::of(settings);
    let list = &prep.tiles[tile];
    let half = T::of(0.5);
    let mut p = 0;
    for y in y0..y1 {
        for x in x0..x1 {
            let px = T::of(x as f64) + half;
            let py = T::of(y as f64) + half;
            let mut depth = T::zero();
            let mut count = 0u32;
            let trans = walk_pixel(prep, list, px, py, &consts, |bl| {
                let sp = &prep.splats[bl.splat as usize];
                let w = bl.alpha * bl.trans;
                if channels.color {
                    for ch in 0..3 {
                        out.color[p * 3 + ch] += w * sp.color[ch];
                    }
                }
                if want_feat {
                    let vals = &prep.values[bl.splat as usize * dim..(bl.splat as usize + 1) * dim];
                    for (k, &v) in vals.iter().enumerate() {
                        out.feature[p * dim + k] += w * v;
                        if channels.variance {
                            out.feature_sq[p * dim + k] += w * v * v;
                        }
                    }
                }
                depth += w * sp.depth;
                count += 1;
            });
            out.alpha[p] = T::one() - trans;
            out.depth[p] = depth;
            out.count[p] = count;
            p += 1;
        }
    }
    out
}

pub(crate) fn render_prepared<T: Real>(
    prep: &Prepared<T>,
    cam: &Camera,
    settings: &RasterSettings,
    channels: Channels,
) -> RenderOutput {
    let dim = prep.dim;
    let tiles: Vec<TileMaps<T>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|t| render_tile(prep, t, cam, settings, channels))
        .collect();
    let mut out = RenderOutput::empty(cam, dim, channels);
    let w = cam.width;
    for (t, maps) in tiles.iter().enumerate() {
        let (x0, y0, x1, y1) = prep.tile_rect(t, cam, settings.tile_size);
        let mut p = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let g = y * w + x;
                out.alpha[g] = maps.alpha[p].to_f64();
                out.depth[g] = maps.depth[p].to_f64();
                out.contrib_count[g] = maps.count[p];
                if let Some(color) = out.color.as_mut() {
                    for ch in 0..3 {
                        color[g * 3 + ch] = maps.color[p * 3 + ch].to_f64();
                    }
                }
                if let Some(feat) = out.feature.as_mut() {
                    for k in 0..dim {
                        feat[g * dim + k] = maps.feature[p * dim + k].to_f64();
                    }
                }
                if let (Some(fsq), Some(var), Some(feat)) =
                    (out.feature_sq.as_mut(), out.variance.as_mut(), out.feature.as_ref())
                {
                    for k in 0..dim {
                        let sq = maps.feature_sq[p * dim + k].to_f64();
                        fsq[g * dim + k] = sq;
                        var[g * dim + k] = sq - feat[g * dim + k] * feat[g * dim + k];
                    }
                }
                p += 1;
            }
        }
    }
    out
}

fn check_inputs(cloud: &GaussianCloud, cam: &Camera) -> Result<()> {
    cam.validate()?;
    let n = cloud.len();
    if cloud.rotations.len() != n
        || cloud.log_scales.len() != n
        || cloud.opacity_logits.len() != n
        || cloud.sh_coeffs.len() != n * cloud.sh_stride()
        || cloud.features.len() != n * cloud.feature_dim()
    {
        return Err(contract("cloud parameter arrays disagree on the Gaussian count"));
    }
    Ok(())
}

/// Renders the requested channels of `cloud` seen from `cam`.
pub fn render(
    cloud: &GaussianCloud,
    cam: &Camera,
    channels: Channels,
    settings: &RasterSettings,
) -> Result<RenderOutput> {
    check_inputs(cloud, cam)?;
    let source = if channels.features || channels.variance {
        ValueSource::Features
    } else {
        ValueSource::None
    };
    Ok(match settings.precision {
        Precision::F32 => {
            let prep = prepare::<f32>(cloud, cam, settings, source, None);
            render_prepared(&prep, cam, settings, channels)
        }
        Precision::F64 => {
            let prep = prepare::<f64>(cloud, cam, settings, source, None);
            render_prepared(&prep, cam, settings, channels)
        }
    })
}

/// Composites arbitrary per-Gaussian vectors (`dim` values per Gaussian) in
/// place of the instance features. Gaussians with `subset[i] == false` are
/// removed from the scene entirely. The result lands in `feature`.
pub fn render_values(
    cloud: &GaussianCloud,
    cam: &Camera,
    values: &[f64],
    dim: usize,
    subset: Option<&[bool]>,
    settings: &RasterSettings,
) -> Result<RenderOutput> {
    check_inputs(cloud, cam)?;
    if values.len() != dim * cloud.len() {
        return Err(contract(format!(
            "expected {} values ({} per Gaussian), got {}",
            dim * cloud.len(),
            dim,
            values.len()
        )));
    }
    if subset.is_some_and(|s| s.len() != cloud.len()) {
        return Err(contract("subset mask length differs from the Gaussian count"));
    }
    let channels = Channels {
        color: false,
        features: true,
        variance: false,
    };
    let source = ValueSource::Custom { values, dim };
    Ok(match settings.precision {
        Precision::F32 => {
            let prep = prepare::<f32>(cloud, cam, settings, source, subset);
            render_prepared(&prep, cam, settings, channels)
        }
        Precision::F64 => {
            let prep = prepare::<f64>(cloud, cam, settings, source, subset);
            render_prepared(&prep, cam, settings, channels)
        }
    })
}
