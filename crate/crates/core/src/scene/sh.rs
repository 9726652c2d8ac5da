//! Real spherical harmonics up to degree 3 with the sign convention of the
//! reference Gaussian splatting rasterizer, plus analytic direction gradients.

use nalgebra::Vector3;

use super::cloud::sh_bases;
use crate::error::{contract, Error, Result};
use crate::real::Real;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values `Y_b(dir)` and their gradients with respect to the unit
/// direction components, for `b < (degree + 1)^2`. Unused slots are zero.
pub fn basis_with_grad<T: Real>(degree: u32, dir: &Vector3<T>) -> ([T; 16], [[T; 3]; 16]) {
    let c = T::of;
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [T::zero(); 16];
    let mut g = [[T::zero(); 3]; 16];
    b[0] = c(SH_C0);
    if degree >= 1 {
        let c1 = c(SH_C1);
        b[1] = -c1 * y;
        g[1] = [T::zero(), -c1, T::zero()];
        b[2] = c1 * z;
        g[2] = [T::zero(), T::zero(), c1];
        b[3] = -c1 * x;
        g[3] = [-c1, T::zero(), T::zero()];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let two = c(2.0);
        let k = SH_C2.map(c);
        b[4] = k[0] * x * y;
        g[4] = [k[0] * y, k[0] * x, T::zero()];
        b[5] = k[1] * y * z;
        g[5] = [T::zero(), k[1] * z, k[1] * y];
        b[6] = k[2] * (two * zz - xx - yy);
        g[6] = [-two * k[2] * x, -two * k[2] * y, c(4.0) * k[2] * z];
        b[7] = k[3] * x * z;
        g[7] = [k[3] * z, T::zero(), k[3] * x];
        b[8] = k[4] * (xx - yy);
        g[8] = [two * k[4] * x, -two * k[4] * y, T::zero()];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let k = SH_C3.map(c);
        let (two, three, four, six, eight) = (c(2.0), c(3.0), c(4.0), c(6.0), c(8.0));
        b[9] = k[0] * y * (three * xx - yy);
        g[9] = [k[0] * six * x * y, k[0] * (three * xx - three * yy), T::zero()];
        b[10] = k[1] * x * y * z;
        g[10] = [k[1] * y * z, k[1] * x * z, k[1] * x * y];
        b[11] = k[2] * y * (four * zz - xx - yy);
        g[11] = [
            -k[2] * two * x * y,
            k[2] * (four * zz - xx - three * yy),
            k[2] * eight * y * z,
        ];
        b[12] = k[3] * z * (two * zz - three * xx - three * yy);
        g[12] = [
            -k[3] * six * x * z,
            -k[3] * six * y * z,
            k[3] * (six * zz - three * xx - three * yy),
        ];
        b[13] = k[4] * x * (four * zz - xx - yy);
        g[13] = [
            k[4] * (four * zz - three * xx - yy),
            -k[4] * two * x * y,
            k[4] * eight * x * z,
        ];
        b[14] = k[5] * z * (xx - yy);
        g[14] = [k[5] * two * x * z, -k[5] * two * y * z, k[5] * (xx - yy)];
        b[15] = k[6] * x * (xx - three * yy);
        g[15] = [k[6] * (three * xx - three * yy), -k[6] * six * x * y, T::zero()];
    }
    (b, g)
}

/// Color of one Gaussian seen along `view_dir`: `max(0, sum_b c_b Y_b(dir) + 0.5)`.
///
/// `coeffs` is channel-major, `3 * B` values. The direction is normalized
/// internally.
pub fn sh_eval(coeffs: &[f64], degree: u32, view_dir: [f64; 3]) -> Result<[f64; 3]> {
    let nb = sh_bases(degree);
    if coeffs.len() != 3 * nb {
        return Err(contract(format!(
            "expected {} SH coefficients for degree {degree}, got {}",
            3 * nb,
            coeffs.len()
        )));
    }
    let dir = Vector3::from(view_dir)
        .try_normalize(0.0)
        .ok_or_else(|| Error::InvalidParameter("zero view direction".into()))?;
    let (basis, _) = basis_with_grad::<f64>(degree, &dir);
    let mut rgb = [0.0; 3];
    for (ch, out) in rgb.iter_mut().enumerate() {
        let raw: f64 = (0..nb).map(|b| coeffs[ch * nb + b] * basis[b]).sum::<f64>() + 0.5;
        *out = raw.max(0.0);
    }
    Ok(rgb)
}

/// DC coefficient that reproduces `color` for a degree-0 Gaussian.
pub fn rgb_to_dc(color: f64) -> f64 {
    (color - 0.5) / SH_C0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn degree_zero_constant() {
        let c = [0.7, -0.2, 1.3];
        let rgb = sh_eval(&c, 0, [0.3, -0.5, 0.8]).unwrap();
        for ch in 0..3 {
            assert!((rgb[ch] - (0.282_094_79 * c[ch] + 0.5).max(0.0)).abs() < 1e-8);
        }
        // Y00 = 1 / (2 sqrt(pi))
        assert!((SH_C0 - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficients_give_half_gray() {
        let rgb = sh_eval(&[0.0; 12], 1, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(rgb, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn degree_one_is_odd() {
        let mut c = vec![0.0; 12];
        for ch in 0..3 {
            for b in 1..4 {
                c[ch * 4 + b] = 0.1 * (ch + b) as f64 - 0.15;
            }
        }
        let d = [0.2, -0.4, 0.7];
        let a = sh_eval(&c, 1, d).unwrap();
        let b = sh_eval(&c, 1, d.map(|v| -v)).unwrap();
        for ch in 0..3 {
            assert!((a[ch] - 0.5 + (b[ch] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_direction_rejected() {
        assert!(sh_eval(&[0.0; 3], 0, [0.0; 3]).is_err());
        assert!(sh_eval(&[0.0; 4], 0, [1.0, 0.0, 0.0]).is_err());
    }

    /// Basis functions of degree l are orthonormal on the sphere; check by
    /// Monte Carlo-free quadrature on a Fibonacci lattice.
    #[test]
    fn basis_is_orthonormal() {
        let n = 20000;
        let mut gram = [[0.0f64; 16]; 16];
        let golden = PI * (3.0 - 5f64.sqrt());
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let d = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            let (b, _) = basis_with_grad::<f64>(3, &d);
            for p in 0..16 {
                for q in 0..16 {
                    gram[p][q] += b[p] * b[q] * 4.0 * PI / n as f64;
                }
            }
        }
        for p in 0..16 {
            for q in 0..16 {
                let expect = if p == q { 1.0 } else { 0.0 };
                assert!((gram[p][q] - expect).abs() < 2e-3, "({p},{q}) = {}", gram[p][q]);
            }
        }
    }

    #[test]
    fn basis_gradients_match_finite_differences() {
        let d = Vector3::new(0.3, -0.6, 0.74);
        let (_, g) = basis_with_grad::<f64>(3, &d);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = d;
            let mut m = d;
            p[axis] += h;
            m[axis] -= h;
            let (bp, _) = basis_with_grad::<f64>(3, &p);
            let (bm, _) = basis_with_grad::<f64>(3, &m);
            for b in 0..16 {
                let fd = (bp[b] - bm[b]) / (2.0 * h);
                assert!((fd - g[b][axis]).abs() < 1e-7, "basis {b} axis {axis}");
            }
        }
    }
}
