//! Small scene fixtures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::sh::rgb_to_dc;
use crate::scene::{logit, sh_bases, Camera, Gaussian, GaussianCloud};

/// Camera at the origin looking down +z with the principal point at the image center.
pub fn axis_camera(width: usize, height: usize, f: f64) -> Camera {
    Camera {
        view_id: 0,
        width,
        height,
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    }
}

/// Isotropic degree-0 Gaussian with a flat color.
pub fn flat_gaussian(mean: [f64; 3], sigma: f64, opacity: f64, rgb: [f64; 3], feature: &[f64]) -> Gaussian {
    Gaussian {
        mean,
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scale: [sigma.ln(); 3],
        opacity_logit: logit(opacity),
        sh: rgb.iter().map(|&c| rgb_to_dc(c)).collect(),
        feature: feature.to_vec(),
    }
}

pub fn cloud_of(gaussians: Vec<Gaussian>, feature_dim: usize) -> GaussianCloud {
    let mut cloud = GaussianCloud::new(0, feature_dim).unwrap();
    for g in gaussians {
        cloud.push(g).unwrap();
    }
    cloud
}

/// Random Gaussians in front of [`axis_camera`], visible in a small image.
pub fn random_cloud(seed: u64, n: usize, sh_degree: u32, feature_dim: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = sh_bases(sh_degree);
    let mut cloud = GaussianCloud::new(sh_degree, feature_dim).unwrap();
    for _ in 0..n {
        let z = rng.random_range(2.0..4.0);
        let mut sh = vec![0.0; 3 * nb];
        for ch in 0..3 {
            // Keep raw colors well above the clamp at zero.
            sh[ch * nb] = rgb_to_dc(rng.random_range(0.3..0.9));
            for b in 1..nb {
                sh[ch * nb + b] = rng.random_range(-0.05..0.05);
            }
        }
        cloud
            .push(Gaussian {
                mean: [rng.random_range(-0.4..0.4) * z, rng.random_range(-0.4..0.4) * z, z],
                rotation: [
                    rng.random_range(0.5..1.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ],
                log_scale: [
                    rng.random_range(-2.0f64..-1.0),
                    rng.random_range(-2.0f64..-1.0),
                    rng.random_range(-2.0f64..-1.0),
                ],
                opacity_logit: rng.random_range(-1.5..1.5),
                sh,
                feature: (0..feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .unwrap();
    }
    cloud
}
