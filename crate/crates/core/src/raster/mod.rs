//! Tile-based rasterization of Gaussian clouds.
//!
//! A render pass projects every Gaussian, sorts the resulting splats globally
//! by camera-space depth (ties broken by Gaussian index), bins them into
//! 16x16-pixel tiles and alpha-composites each pixel front to back. Besides
//! color, the pass can composite the per-Gaussian instance features, their
//! element-wise squares and hence the per-pixel feature variance along the ray.
//!
//! [`render_backward`] re-runs the per-pixel compositing and returns analytic
//! gradients for every cloud parameter. Tiles are processed in parallel; each
//! pixel is composited by one thread in global depth order and per-tile
//! gradient partials are reduced in tile order, so results are bit-identical
//! for any thread count.

mod backward;
mod forward;
mod prep;
mod silhouette;

use serde::{Deserialize, Serialize};

pub use backward::{render_backward, OutputGrads, RenderGrads};
pub use forward::{render, render_values, RenderOutput};
pub use silhouette::{render_instance_ids, render_instance_silhouette};

use crate::real::Precision;

/// How the variance channel's gradient is propagated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceGrad {
    /// Blending weights are held constant; only features receive gradient.
    #[default]
    FeaturesOnly,
    /// Exact gradient, including opacity and geometry.
    Full,
}

/// Fixed rasterizer constants. Defaults follow the reference splatting
/// rasterizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterSettings {
    pub tile_size: usize,
    /// Splats with a smaller per-pixel alpha are skipped.
    pub alpha_min: f64,
    /// Per-splat alpha is clamped to this value.
    pub alpha_max: f64,
    /// Compositing stops before transmittance would drop below this.
    pub transmittance_min: f64,
    /// Splat support radius in standard deviations (tile binning and per-pixel cut).
    pub cutoff_sigma: f64,
    pub near: f64,
    pub dilation: f64,
    pub precision: Precision,
    pub variance_grad: VarianceGrad,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            cutoff_sigma: 3.0,
            near: crate::scene::geometry::NEAR_PLANE,
            dilation: crate::scene::geometry::AA_DILATION,
            precision: Precision::F32,
            variance_grad: VarianceGrad::FeaturesOnly,
        }
    }
}

impl RasterSettings {
    /// Settings with every hard cutoff disabled, so the rendered maps are
    /// smooth functions of the parameters. Used by finite-difference checks.
    pub fn smooth_f64() -> Self {
        Self {
            alpha_min: 0.0,
            alpha_max: 1.0,
            transmittance_min: 0.0,
            cutoff_sigma: 1e3,
            precision: Precision::F64,
            ..Self::default()
        }
    }
}

/// Which optional maps a render pass produces. Alpha, depth and the
/// contribution count are always produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Channels {
    pub color: bool,
    pub features: bool,
    /// Also produces `feature_sq` and `variance`; implies `features`.
    pub variance: bool,
}

impl Channels {
    pub const ALL: Channels = Channels {
        color: true,
        features: true,
        variance: true,
    };
    pub const COLOR: Channels = Channels {
        color: true,
        features: false,
        variance: false,
    };
    pub const NONE: Channels = Channels {
        color: false,
        features: false,
        variance: false,
    };
}
