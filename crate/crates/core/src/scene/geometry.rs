//! Closed-form Gaussian geometry: quaternion rotation, 3D covariance and the
//! local-affine (EWA) projection to a 2D screen-space covariance.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::camera::Camera;
use crate::error::{Error, Result};
use crate::real::Real;

/// Near-plane distance below which Gaussians are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Low-pass dilation added to both diagonal entries of the 2D covariance.
pub const AA_DILATION: f64 = 0.3;

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quat_to_matrix<T: Real>(q: &[T; 4]) -> Option<(Matrix3<T>, [T; 4], T)> {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if norm == T::zero() {
        return None;
    }
    let [w, x, y, z] = q.map(|v| v / norm);
    let one = T::one();
    let two = T::of(2.0);
    let r = Matrix3::new(
        one - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        one - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        one - two * (x * x + y * y),
    );
    Some((r, [w, x, y, z], norm))
}

/// Gradient of a loss with respect to the raw quaternion, given its gradient
/// with respect to the rotation matrix built from the normalized quaternion.
pub fn quat_backward<T: Real>(unit: &[T; 4], norm: T, d_r: &Matrix3<T>) -> [T; 4] {
    let [w, x, y, z] = *unit;
    let two = T::of(2.0);
    let four = T::of(4.0);
    let g = |i: usize, j: usize| d_r[(i, j)];
    let dw = two
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = two * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1))
        - four * x * (g(1, 1) + g(2, 2));
    let dy = two * (x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1))
        - four * y * (g(0, 0) + g(2, 2));
    let dz = two * (-w * g(0, 1) + x * g(0, 2) + w * g(1, 0) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1))
        - four * z * (g(0, 0) + g(1, 1));
    let du = [dw, dx, dy, dz];
    let dot = du[0] * w + du[1] * x + du[2] * y + du[3] * z;
    [
        (du[0] - w * dot) / norm,
        (du[1] - x * dot) / norm,
        (du[2] - y * dot) / norm,
        (du[3] - z * dot) / norm,
    ]
}

/// `Sigma = R S S^T R^T` with `S = diag(exp(log_scale))`.
pub fn covariance_generic<T: Real>(rot: &Matrix3<T>, scale: &Vector3<T>) -> Matrix3<T> {
    let m = rot * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// 3D covariance of a Gaussian from its quaternion and log-scales.
pub fn build_covariance(rotation: [f64; 4], log_scale: [f64; 3]) -> Result<Matrix3<f64>> {
    let (r, _, _) = quat_to_matrix(&rotation)
        .ok_or_else(|| Error::InvalidParameter("zero-norm quaternion".into()))?;
    let s = Vector3::from(log_scale.map(f64::exp));
    if !s.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::InvalidParameter("scale must be positive and finite".into()));
    }
    Ok(covariance_generic(&r, &s))
}

/// Intermediate quantities of one projection, reused by the backward pass.
#[derive(Clone, Debug)]
pub struct ProjectionGeom<T: Real> {
    /// Mean in camera coordinates.
    pub t: Vector3<T>,
    pub mean2d: Vector2<T>,
    /// `J * W` where `J` is the projection Jacobian and `W` the camera rotation.
    pub jw: Matrix2x3<T>,
    /// Dilated screen-space covariance.
    pub cov2d: Matrix2<T>,
}

pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> Intrinsics<T> {
    pub fn of(cam: &Camera) -> Self {
        Self {
            fx: T::of(cam.fx),
            fy: T::of(cam.fy),
            cx: T::of(cam.cx),
            cy: T::of(cam.cy),
        }
    }
}

/// Projection Jacobian at camera-space point `t`.
pub fn projection_jacobian<T: Real>(t: &Vector3<T>, k: &Intrinsics<T>) -> Matrix2x3<T> {
    let iz = T::one() / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        k.fx * iz,
        T::zero(),
        -k.fx * t.x * iz2,
        T::zero(),
        k.fy * iz,
        -k.fy * t.y * iz2,
    )
}

/// Projects a world-space Gaussian. Returns `None` when the mean is not in
/// front of the near plane.
pub fn project_generic<T: Real>(
    mean: &Vector3<T>,
    cov: &Matrix3<T>,
    w: &Matrix3<T>,
    tvec: &Vector3<T>,
    k: &Intrinsics<T>,
    near: T,
    dilation: T,
) -> Option<ProjectionGeom<T>> {
    let t = w * mean + tvec;
    if t.z <= near {
        return None;
    }
    let mean2d = Vector2::new(k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy);
    let j = projection_jacobian(&t, k);
    let jw = j * w;
    let mut cov2d = jw * cov * jw.transpose();
    cov2d[(0, 0)] += dilation;
    cov2d[(1, 1)] += dilation;
    // Symmetrize against rounding.
    let off = (cov2d[(0, 1)] + cov2d[(1, 0)]) * T::of(0.5);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    Some(ProjectionGeom {
        t,
        mean2d,
        jw,
        cov2d,
    })
}

/// Screen-space footprint of a Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub mean2d: [f64; 2],
    pub cov2d: [[f64; 2]; 2],
    /// Camera-space z of the mean.
    pub depth: f64,
}

/// Projects a Gaussian with the default near plane and anti-aliasing dilation.
/// `None` means the Gaussian is culled (behind the camera or too close).
pub fn project_gaussian(mean: [f64; 3], cov: &Matrix3<f64>, camera: &Camera) -> Option<Projection> {
    project_gaussian_with(mean, cov, camera, NEAR_PLANE, AA_DILATION)
}

pub fn project_gaussian_with(
    mean: [f64; 3],
    cov: &Matrix3<f64>,
    camera: &Camera,
    near: f64,
    dilation: f64,
) -> Option<Projection> {
    let g = project_generic(
        &Vector3::from(mean),
        cov,
        &camera.rotation_matrix(),
        &Vector3::from(camera.translation),
        &Intrinsics::of(camera),
        near,
        dilation,
    )?;
    Some(Projection {
        mean2d: [g.mean2d.x, g.mean2d.y],
        cov2d: [[g.cov2d[(0, 0)], g.cov2d[(0, 1)]], [g.cov2d[(1, 0)], g.cov2d[(1, 1)]]],
        depth: g.t.z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
        let a = Vector3::from(axis).normalize();
        let (s, c) = (angle / 2.0).sin_cos();
        [c, a.x * s, a.y * s, a.z * s]
    }

    fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ]
    }

    fn on_axis_camera() -> Camera {
        Camera {
            view_id: 0,
            width: 64,
            height: 48,
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 24.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    #[test]
    fn identity_covariance() {
        let c = build_covariance([1.0, 0.0, 0.0, 0.0], [0.0; 3]).unwrap();
        assert!((c - Matrix3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn axis_aligned_scaling() {
        let c = build_covariance([1.0, 0.0, 0.0, 0.0], [2f64.ln(), 0.0, 0.0]).unwrap();
        assert!((c - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        // R = [[0,-1,0],[1,0,0],[0,0,1]]; R diag(4,1,1) R^T = diag(1,4,1).
        let q = axis_angle([0.0, 0.0, 1.0], 2.0 * FRAC_PI_4);
        let c = build_covariance(q, [2f64.ln(), 0.0, 0.0]).unwrap();
        assert!((c - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn zero_quaternion_errors() {
        assert!(matches!(
            build_covariance([0.0; 4], [0.0; 3]),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn normalized_quaternion_is_unit() {
        let (_, u, _) = quat_to_matrix(&[3.0, -1.0, 0.5, 2.0]).unwrap();
        let n: f64 = u.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let q = [0.3, -0.7, 0.2, 0.5];
        let ls = [0.1, -0.4, 0.6];
        let c = build_covariance(q, ls).unwrap();
        let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let mut expect: Vec<f64> = ls.iter().map(|l| (2.0 * l).exp()).collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((c - c.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn covariance_is_rotation_equivariant() {
        let r = [0.9, 0.1, -0.3, 0.2];
        let q = axis_angle([1.0, 2.0, -0.5], 0.8);
        let s = [0.2, -0.1, 0.5];
        let lhs = build_covariance(quat_mul(q, r), s).unwrap();
        let (rq, _, _) = quat_to_matrix(&q).unwrap();
        let rhs = rq * build_covariance(r, s).unwrap() * rq.transpose();
        assert!((lhs - rhs).abs().max() < 1e-9);
    }

    #[test]
    fn on_axis_projection() {
        let cam = on_axis_camera();
        let p = project_gaussian([0.0, 0.0, 2.0], &Matrix3::identity(), &cam).unwrap();
        assert_eq!(p.mean2d, [32.0, 24.0]);
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn isotropic_on_axis_covariance() {
        let cam = on_axis_camera();
        let (sigma, z) = (0.05, 2.0);
        let p =
            project_gaussian([0.0, 0.0, z], &(Matrix3::identity() * sigma * sigma), &cam).unwrap();
        let expect = (100.0 * sigma / z).powi(2) + 0.3;
        assert!((p.cov2d[0][0] - expect).abs() < 1e-12);
        assert!((p.cov2d[1][1] - expect).abs() < 1e-12);
        assert!(p.cov2d[0][1].abs() < 1e-15);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = on_axis_camera();
        assert!(project_gaussian([0.0, 0.0, -1.0], &Matrix3::identity(), &cam).is_none());
    }

    /// The 2D covariance equals the numerically linearized projection applied
    /// to the 3D covariance (before dilation), on and off axis.
    #[test]
    fn covariance_matches_numerical_jacobian() {
        let cam = Camera::look_at(0, [0.4, -3.0, 0.8], [0.1, 0.2, 0.0], [0.0, 0.0, 1.0], 80, 60, 70.0, 75.0)
            .unwrap();
        let cov = build_covariance([0.8, 0.3, -0.2, 0.4], [-1.0, -1.5, -0.7]).unwrap();
        for mean in [[0.1, 0.2, 0.0], [0.9, -0.5, 0.6], [-0.7, 0.4, -0.3]] {
            let p = project_gaussian_with(mean, &cov, &cam, NEAR_PLANE, 0.0).unwrap();
            let proj = |x: Vector3<f64>| {
                let t = cam.to_camera([x.x, x.y, x.z]);
                Vector2::new(cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy)
            };
            let h = 1e-6;
            let mut jac = Matrix2x3::zeros();
            for k in 0..3 {
                let mut e = Vector3::zeros();
                e[k] = h;
                let m = Vector3::from(mean);
                let d = (proj(m + e) - proj(m - e)) / (2.0 * h);
                jac.set_column(k, &d);
            }
            let num = jac * cov * jac.transpose();
            for i in 0..2 {
                for j in 0..2 {
                    let rel = (num[(i, j)] - p.cov2d[i][j]).abs() / num[(i, i)].abs().max(1e-12);
                    assert!(rel < 1e-4, "entry ({i},{j}): {} vs {}", num[(i, j)], p.cov2d[i][j]);
                }
            }
        }
    }

    #[test]
    fn quaternion_backward_matches_finite_differences() {
        let q = [0.7, -0.4, 0.3, 0.9];
        let weights = Matrix3::new(0.3, -1.2, 0.5, 0.8, 0.1, -0.7, 0.2, 0.9, -0.4);
        let loss = |q: [f64; 4]| {
            let (r, _, _) = quat_to_matrix(&q).unwrap();
            r.component_mul(&weights).sum()
        };
        let (_, unit, norm) = quat_to_matrix(&q).unwrap();
        let g = quat_backward(&unit, norm, &weights);
        for k in 0..4 {
            let h = 1e-6;
            let mut p = q;
            let mut m = q;
            p[k] += h;
            m[k] -= h;
            let fd = (loss(p) - loss(m)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "component {k}: {fd} vs {}", g[k]);
        }
    }
}
