use crate::error::{contract, Error, Result};

/// Number of spherical-harmonic basis functions per color channel for `degree`.
pub const fn sh_bases(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

pub const MAX_SH_DEGREE: u32 = 3;

/// Parameter arrays of a [`GaussianCloud`], in checkpoint declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Means,
    Rotations,
    LogScales,
    OpacityLogits,
    Sh,
    Features,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Means,
        ParamGroup::Rotations,
        ParamGroup::LogScales,
        ParamGroup::OpacityLogits,
        ParamGroup::Sh,
        ParamGroup::Features,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Means => "means",
            ParamGroup::Rotations => "rotations",
            ParamGroup::LogScales => "log_scales",
            ParamGroup::OpacityLogits => "opacity_logits",
            ParamGroup::Sh => "sh_coeffs",
            ParamGroup::Features => "features",
        }
    }
}

/// Structure-of-arrays storage for every per-Gaussian parameter.
///
/// Parameters are stored in 64-bit floats; the rasterizer converts to its
/// working precision per pass. `sh_coeffs` holds `3 * B` values per Gaussian
/// laid out channel-major (`[r_0..r_B, g_0..g_B, b_0..b_B]`), `features` holds
/// `feature_dim` values per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<[f64; 3]>,
    /// Quaternions `(w, x, y, z)`, normalized on use.
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
    pub features: Vec<f64>,
    sh_degree: u32,
    feature_dim: usize,
}

/// One Gaussian's parameters, used to build and grow clouds.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
    pub feature: Vec<f64>,
}

impl GaussianCloud {
    pub fn new(sh_degree: u32, feature_dim: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "SH degree {sh_degree} exceeds {MAX_SH_DEGREE}"
            )));
        }
        Ok(Self {
            means: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_coeffs: Vec::new(),
            features: Vec::new(),
            sh_degree,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn sh_degree(&self) -> u32 {
        self.sh_degree
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Coefficients per Gaussian (`3 * B`).
    pub fn sh_stride(&self) -> usize {
        3 * sh_bases(self.sh_degree)
    }

    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        if g.sh.len() != self.sh_stride() {
            return Err(contract(format!(
                "expected {} SH coefficients, got {}",
                self.sh_stride(),
                g.sh.len()
            )));
        }
        if g.feature.len() != self.feature_dim {
            return Err(contract(format!(
                "expected feature of length {}, got {}",
                self.feature_dim,
                g.feature.len()
            )));
        }
        self.means.push(g.mean);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.sh_coeffs.extend_from_slice(&g.sh);
        self.features.extend_from_slice(&g.feature);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            mean: self.means[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh(i).to_vec(),
            feature: self.feature(i).to_vec(),
        }
    }

    pub fn sh(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh_coeffs[i * s..(i + 1) * s]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        let d = self.feature_dim;
        &self.features[i * d..(i + 1) * d]
    }

    pub fn feature_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.feature_dim;
        &mut self.features[i * d..(i + 1) * d]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        self.log_scales[i].map(f64::exp)
    }

    /// Flat mutable view of one parameter group.
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

    /// Values per Gaussian in `group`.
    pub fn group_stride(&self, group: ParamGroup) -> usize {
        match group {
            ParamGroup::Means | ParamGroup::LogScales => 3,
            ParamGroup::Rotations => 4,
            ParamGroup::OpacityLogits => 1,
            ParamGroup::Sh => self.sh_stride(),
            ParamGroup::Features => self.feature_dim,
        }
    }

    /// New cloud holding the Gaussians at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> GaussianCloud {
        let mut out = GaussianCloud {
            means: Vec::with_capacity(indices.len()),
            rotations: Vec::with_capacity(indices.len()),
            log_scales: Vec::with_capacity(indices.len()),
            opacity_logits: Vec::with_capacity(indices.len()),
            sh_coeffs: Vec::with_capacity(indices.len() * self.sh_stride()),
            features: Vec::with_capacity(indices.len() * self.feature_dim),
            sh_degree: self.sh_degree,
            feature_dim: self.feature_dim,
        };
        for &i in indices {
            out.means.push(self.means[i]);
            out.rotations.push(self.rotations[i]);
            out.log_scales.push(self.log_scales[i]);
            out.opacity_logits.push(self.opacity_logits[i]);
            out.sh_coeffs.extend_from_slice(self.sh(i));
            out.features.extend_from_slice(self.feature(i));
        }
        out
    }

    /// Keep only Gaussians where `keep[i]` is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep[i]).collect();
        *self = self.select(&idx);
    }

    /// Replace the feature block, e.g. to switch a cloud to another embedding size.
    pub fn set_features(&mut self, feature_dim: usize, features: Vec<f64>) -> Result<()> {
        if features.len() != feature_dim * self.len() {
            return Err(contract(format!(
                "feature block of length {} does not match {} x {}",
                features.len(),
                self.len(),
                feature_dim
            )));
        }
        self.feature_dim = feature_dim;
        self.features = features;
        Ok(())
    }

    /// Check the structural and numeric invariants of the cloud.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.sh_coeffs.len() != n * self.sh_stride()
            || self.features.len() != n * self.feature_dim
        {
            return Err(contract("parameter arrays disagree on the Gaussian count"));
        }
        for i in 0..n {
            let q = self.rotations[i];
            if q.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                return Err(Error::InvalidParameter(format!("zero quaternion at {i}")));
            }
            if !self.means[i].iter().all(|v| v.is_finite())
                || !self.log_scales[i].iter().all(|v| v.exp().is_finite())
                || !self.opacity_logits[i].is_finite()
            {
                return Err(Error::InvalidParameter(format!("non-finite parameter at {i}")));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(d: usize, tag: f64) -> Gaussian {
        Gaussian {
            mean: [tag, 0.0, 1.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            opacity_logit: 0.0,
            sh: vec![tag; 12],
            feature: vec![tag; d],
        }
    }

    #[test]
    fn select_keeps_rows_together() {
        let mut c = GaussianCloud::new(1, 2).unwrap();
        for t in 0..4 {
            c.push(gaussian(2, t as f64)).unwrap();
        }
        let s = c.select(&[3, 1]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.means[0][0], 3.0);
        assert_eq!(s.feature(1), &[1.0, 1.0]);
        assert_eq!(s.sh(0), &[3.0; 12]);
        s.validate().unwrap();
    }

    #[test]
    fn push_rejects_wrong_shapes() {
        let mut c = GaussianCloud::new(1, 2).unwrap();
        assert!(c.push(gaussian(3, 0.0)).is_err());
        assert!(GaussianCloud::new(4, 8).is_err());
    }

    #[test]
    fn zero_quaternion_is_invalid() {
        let mut c = GaussianCloud::new(0, 1).unwrap();
        let mut g = gaussian(1, 0.0);
        g.sh = vec![0.0; 3];
        g.rotation = [0.0; 4];
        c.push(g).unwrap();
        assert!(matches!(c.validate(), Err(Error::InvalidParameter(_))));
    }
}
