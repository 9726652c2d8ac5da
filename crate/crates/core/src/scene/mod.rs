//! Gaussian cloud parameterization, cameras, and the closed-form geometry and
//! appearance math shared by every other module.

mod camera;
mod cloud;
pub mod geometry;
pub mod sh;

pub use camera::Camera;
pub use cloud::{logit, sh_bases, sigmoid, Gaussian, GaussianCloud, ParamGroup, MAX_SH_DEGREE};
pub use geometry::{build_covariance, project_gaussian, project_gaussian_with, Projection};
pub use sh::sh_eval;
