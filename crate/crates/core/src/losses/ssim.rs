//! Structural similarity with an 11x11 Gaussian window (sigma 1.5).
//!
//! Near the image border the window is cut to the image and renormalized,
//! so constant images have exactly constant local statistics.

const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Renormalized 1D blur of `n` samples at `stride`, or its adjoint.
fn blur_1d(src: &[f64], dst: &mut [f64], n: usize, stride: usize, offset: usize, k: &[f64], norm: &[f64], adjoint: bool) {
    for i in 0..n {
        let lo = i.saturating_sub(RADIUS);
        let hi = (i + RADIUS).min(n - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            let w = k[j + RADIUS - i];
            acc += if adjoint {
                w * src[offset + j * stride] / norm[j]
            } else {
                w * src[offset + j * stride]
            };
        }
        dst[offset + i * stride] = if adjoint { acc } else { acc / norm[i] };
    }
}

fn norms(n: usize, k: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(RADIUS);
            let hi = (i + RADIUS).min(n - 1);
            (lo..=hi).map(|j| k[j + RADIUS - i]).sum()
        })
        .collect()
}

struct Blur {
    w: usize,
    h: usize,
    k: [f64; 2 * RADIUS + 1],
    nx: Vec<f64>,
    ny: Vec<f64>,
}

impl Blur {
    fn new(w: usize, h: usize) -> Self {
        let k = kernel();
        Blur {
            w,
            h,
            nx: norms(w, &k),
            ny: norms(h, &k),
            k,
        }
    }

    fn apply(&self, img: &[f64], adjoint: bool) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0; w * h];
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            blur_1d(img, &mut tmp, w, 1, y * w, &self.k, &self.nx, adjoint);
        }
        for x in 0..w {
            blur_1d(&tmp, &mut out, h, w, x, &self.k, &self.ny, adjoint);
        }
        out
    }
}

/// Mean SSIM over pixels and channels of two pixel-major images, and its
/// gradient with respect to `a`.
pub fn ssim_with_grad(a: &[f64], b: &[f64], width: usize, height: usize, channels: usize) -> (f64, Vec<f64>) {
    let n = width * height;
    let blur = Blur::new(width, height);
    let mut total = 0.0;
    let mut grad = vec![0.0; n * channels];
    let scale = 1.0 / (n * channels) as f64;
    for c in 0..channels {
        let pa: Vec<f64> = (0..n).map(|p| a[p * channels + c]).collect();
        let pb: Vec<f64> = (0..n).map(|p| b[p * channels + c]).collect();
        let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };
        let ma = blur.apply(&pa, false);
        let mb = blur.apply(&pb, false);
        let saa = blur.apply(&sq(&pa, &pa), false);
        let sbb = blur.apply(&sq(&pb, &pb), false);
        let sab = blur.apply(&sq(&pa, &pb), false);
        let mut g_ma = vec![0.0; n];
        let mut g_saa = vec![0.0; n];
        let mut g_sab = vec![0.0; n];
        for p in 0..n {
            let (mu_a, mu_b) = (ma[p], mb[p]);
            let a1 = 2.0 * mu_a * mu_b + C1;
            let a2 = 2.0 * (sab[p] - mu_a * mu_b) + C2;
            let b1 = mu_a * mu_a + mu_b * mu_b + C1;
            let b2 = (saa[p] - mu_a * mu_a) + (sbb[p] - mu_b * mu_b) + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            g_ma[p] = scale * s * (2.0 * mu_b / a1 - 2.0 * mu_b / a2 - 2.0 * mu_a / b1 + 2.0 * mu_a / b2);
            g_saa[p] = -scale * s / b2;
            g_sab[p] = 2.0 * scale * s / a2;
        }
        let ta = blur.apply(&g_ma, true);
        let tsaa = blur.apply(&g_saa, true);
        let tsab = blur.apply(&g_sab, true);
        for p in 0..n {
            grad[p * channels + c] = ta[p] + 2.0 * pa[p] * tsaa[p] + pb[p] * tsab[p];
        }
    }
    (total * scale, grad)
}
