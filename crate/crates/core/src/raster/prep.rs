//! Per-Gaussian preprocessing (projection, color, conic) and tile binning.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::RasterSettings;
use crate::real::Real;
use crate::scene::geometry::{covariance_generic, project_generic, quat_to_matrix, Intrinsics, ProjectionGeom};
use crate::scene::sh::basis_with_grad;
use crate::scene::{sh_bases, sigmoid, Camera, GaussianCloud};

/// Where the composited per-Gaussian vectors come from.
#[derive(Clone, Copy)]
pub(crate) enum ValueSource<'a> {
    None,
    Features,
    /// `dim` values per Gaussian, indexed like the cloud.
    Custom { values: &'a [f64], dim: usize },
}

impl ValueSource<'_> {
    pub fn dim(&self, cloud: &GaussianCloud) -> usize {
        match self {
            ValueSource::None => 0,
            ValueSource::Features => cloud.feature_dim(),
            ValueSource::Custom { dim, .. } => *dim,
        }
    }
}

/// A projected, visible Gaussian.
pub(crate) struct Splat<T: Real> {
    pub gaussian: usize,
    pub mean2d: [T; 2],
    /// Inverse 2D covariance `[a, b, c]` of `[[a, b], [b, c]]`.
    pub conic: [T; 3],
    pub opacity: T,
    pub color: [T; 3],
    /// Channels whose raw SH value was clamped at zero.
    pub clamped: [bool; 3],
    pub depth: T,
    pub geom: ProjectionGeom<T>,
    pub rot: Matrix3<T>,
    pub unit_q: [T; 4],
    pub q_norm: T,
    pub scale: Vector3<T>,
    pub cov3d: Matrix3<T>,
    /// Unnormalized view direction (mean minus camera center).
    pub view_vec: Vector3<T>,
}

pub(crate) struct Prepared<T: Real> {
    /// Visible splats in global depth order.
    pub splats: Vec<Splat<T>>,
    /// `dim` values per splat, aligned with `splats`.
    pub values: Vec<T>,
    pub dim: usize,
    /// Splat indices per tile, ascending (hence depth ordered).
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
}

impl<T: Real> Prepared<T> {
    pub fn tile_rect(&self, tile: usize, cam: &Camera, ts: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * ts;
        let y0 = ty * ts;
        (x0, y0, (x0 + ts).min(cam.width), (y0 + ts).min(cam.height))
    }
}

fn prepare_one<T: Real>(
    cloud: &GaussianCloud,
    i: usize,
    cam: &Camera,
    w: &Matrix3<T>,
    tvec: &Vector3<T>,
    k: &Intrinsics<T>,
    center: &Vector3<T>,
    settings: &RasterSettings,
) -> Option<(Splat<T>, [usize; 4])> {
    let q = cloud.rotations[i].map(T::of);
    let (rot, unit_q, q_norm) = quat_to_matrix(&q)?;
    let scale = Vector3::from(cloud.log_scales[i].map(|v| T::of(v.exp())));
    let cov3d = covariance_generic(&rot, &scale);
    let mean = Vector3::from(cloud.means[i].map(T::of));
    let geom = project_generic(
        &mean,
        &cov3d,
        w,
        tvec,
        k,
        T::of(settings.near),
        T::of(settings.dilation),
    )?;
    let c = geom.cov2d;
    let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(0, 1)];
    if !(det > T::zero()) {
        return None;
    }
    let conic = [c[(1, 1)] / det, -c[(0, 1)] / det, c[(0, 0)] / det];
    let mid = (c[(0, 0)] + c[(1, 1)]) * T::of(0.5);
    let lambda_max = mid + (mid * mid - det).max(T::zero()).sqrt();
    let radius = T::of(settings.cutoff_sigma) * lambda_max.sqrt();
    let (u, v) = (geom.mean2d.x, geom.mean2d.y);
    let half = T::of(0.5);
    let x_lo = (u - radius - half).ceil().to_f64().max(0.0);
    let x_hi = (u + radius - half).floor().to_f64().min(cam.width as f64 - 1.0);
    let y_lo = (v - radius - half).ceil().to_f64().max(0.0);
    let y_hi = (v + radius - half).floor().to_f64().min(cam.height as f64 - 1.0);
    if !(x_lo <= x_hi && y_lo <= y_hi) {
        return None;
    }
    let rect = [x_lo as usize, y_lo as usize, x_hi as usize, y_hi as usize];

    let view_vec = mean - center;
    let dir = view_vec.try_normalize(T::zero()).unwrap_or_else(Vector3::z);
    let degree = cloud.sh_degree();
    let nb = sh_bases(degree);
    let (basis, _) = basis_with_grad(degree, &dir);
    let sh = cloud.sh(i);
    let mut color = [T::zero(); 3];
    let mut clamped = [false; 3];
    for ch in 0..3 {
        let mut raw = T::of(0.5);
        for b in 0..nb {
            raw += T::of(sh[ch * nb + b]) * basis[b];
        }
        if raw < T::zero() {
            clamped[ch] = true;
            raw = T::zero();
        }
        color[ch] = raw;
    }
    let splat = Splat {
        gaussian: i,
        mean2d: [u, v],
        conic,
        opacity: T::of(sigmoid(cloud.opacity_logits[i])),
        color,
        clamped,
        depth: geom.t.z,
        geom,
        rot,
        unit_q,
        q_norm,
        scale,
        cov3d,
        view_vec,
    };
    Some((splat, rect))
}

pub(crate) fn prepare<T: Real>(
    cloud: &GaussianCloud,
    cam: &Camera,
    settings: &RasterSettings,
    source: ValueSource<'_>,
    subset: Option<&[bool]>,
) -> Prepared<T> {
    let w: Matrix3<T> = cam.rotation_matrix().map(T::of);
    let tvec = Vector3::from(cam.translation.map(T::of));
    let k = Intrinsics::<T>::of(cam);
    let center = Vector3::from(cam.center().map(T::of));

    let mut visible: Vec<(Splat<T>, [usize; 4])> = (0..cloud.len())
        .into_par_iter()
        .filter(|&i| subset.is_none_or(|s| s[i]))
        .filter_map(|i| prepare_one(cloud, i, cam, &w, &tvec, &k, &center, settings))
        .collect();
    visible.sort_by(|a, b| {
        a.0.depth
            .partial_cmp(&b.0.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.gaussian.cmp(&b.0.gaussian))
    });

    let ts = settings.tile_size.max(1);
    let tiles_x = cam.width.div_ceil(ts);
    let tiles_y = cam.height.div_ceil(ts);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (s, (_, rect)) in visible.iter().enumerate() {
        for ty in rect[1] / ts..=rect[3] / ts {
            for tx in rect[0] / ts..=rect[2] / ts {
                tiles[ty * tiles_x + tx].push(s as u32);
            }
        }
    }

    let dim = source.dim(cloud);
    let mut values = Vec::with_capacity(dim * visible.len());
    for (s, _) in &visible {
        match source {
            ValueSource::None => {}
            ValueSource::Features => values.extend(cloud.feature(s.gaussian).iter().map(|&v| T::of(v))),
            ValueSource::Custom { values: src, dim } => values.extend(
                src[s.gaussian * dim..(s.gaussian + 1) * dim].iter().map(|&v| T::of(v)),
            ),
        }
    }
    Prepared {
        splats: visible.into_iter().map(|(s, _)| s).collect(),
        values,
        dim,
        tiles,
        tiles_x,
    }
}
