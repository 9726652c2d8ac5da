//! Run configuration: one TOML table per pipeline stage.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::RasterSettings;

/// Prefix of environment variables that override config keys, e.g.
/// `SPLATSEG_LOSSES__LAMBDA_VAR=0.1`.
pub const ENV_PREFIX: &str = "SPLATSEG_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub sh_degree: u32,
    /// Instance feature dimension `d`.
    pub feature_dim: usize,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            sh_degree: 1,
            feature_dim: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// SSIM share of the photometric loss.
    pub beta: f64,
    pub lambda_inst2d: f64,
    pub lambda_var: f64,
    pub w_pos: f64,
    pub w_neg: f64,
    /// Margin on squared prototype distances.
    pub gamma: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            beta: 0.2,
            lambda_inst2d: 0.1,
            lambda_var: 0.5,
            w_pos: 1.0,
            w_neg: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub iterations: usize,
    /// Initial position learning rate, multiplied by the scene extent.
    pub lr_means: f64,
    pub lr_means_final: f64,
    pub lr_features: f64,
    pub lr_opacity: f64,
    pub lr_scales: f64,
    pub lr_rotations: f64,
    pub lr_sh: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub densify_grad_threshold: f64,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    pub prune_opacity: f64,
    /// Gaussians whose largest scale is at most this fraction of the scene
    /// extent are cloned, larger ones are split.
    pub percent_dense: f64,
    pub split_scale_divisor: f64,
    /// Densification stops growing the cloud beyond this size.
    pub max_gaussians: usize,
    /// Features start uniform in `[-feature_init, feature_init]`.
    pub feature_init: f64,
    /// Write a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_interval: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr_means: 1.6e-4,
            lr_means_final: 1.6e-6,
            lr_features: 2.5e-3,
            lr_opacity: 5e-2,
            lr_scales: 5e-3,
            lr_rotations: 1e-3,
            lr_sh: 2.5e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-15,
            densify_grad_threshold: 4e-4,
            densify_from: 500,
            densify_until: 15000,
            densify_interval: 100,
            prune_opacity: 0.005,
            percent_dense: 0.01,
            split_scale_divisor: 1.6,
            max_gaussians: 60_000,
            feature_init: 0.05,
            checkpoint_interval: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    /// Fixed minimum cluster size; when absent, 0.1% of the cloud floored at 50.
    pub min_cluster_size: Option<usize>,
    pub min_samples: usize,
    pub allow_single_cluster: bool,
    /// Gaussians less opaque than this are left out of clustering (noise).
    pub min_opacity: f64,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        Self {
            min_cluster_size: None,
            min_samples: 10,
            allow_single_cluster: false,
            min_opacity: 0.0,
        }
    }
}

impl ClusteringSection {
    pub fn min_cluster_size_for(&self, n: usize) -> usize {
        self.min_cluster_size.unwrap_or_else(|| (n / 1000).max(50))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageSection {
    pub top_k: usize,
    pub zoom_levels: usize,
    pub expansion: f64,
    pub silhouette_threshold: f64,
    /// Queries select every instance scoring at least this; `None` picks the top one.
    pub query_threshold: Option<f64>,
}

impl Default for LanguageSection {
    fn default() -> Self {
        Self {
            top_k: 5,
            zoom_levels: 3,
            expansion: 0.3,
            silhouette_threshold: 0.5,
            query_threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Boundary band width as a fraction of the image diagonal.
    pub boundary_ratio: f64,
    pub macc_threshold: f64,
    pub ioa_threshold: f64,
    /// Smooth transferred point labels with graph segmentation before scoring.
    pub smooth: bool,
    pub smooth_k: usize,
    /// Felzenszwalb-Huttenlocher constant in units of the point-cloud diagonal.
    pub smooth_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            boundary_ratio: 0.02,
            macc_threshold: 0.25,
            ioa_threshold: 0.75,
            smooth: false,
            smooth_k: 16,
            smooth_threshold: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub iou_weight: f64,
    pub stability_weight: f64,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            iou_weight: 1.0,
            stability_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub scene: SceneSection,
    pub raster: RasterSettings,
    pub losses: LossSection,
    pub trainer: TrainerSection,
    pub clustering: ClusteringSection,
    pub language: LanguageSection,
    pub eval: EvalSection,
    pub masks: MaskSection,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Applies `section.key = value` overrides. Values are parsed as TOML
    /// scalars, falling back to a plain string.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        for (key, raw) in overrides {
            let value = parse_scalar(raw);
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                [top] => {
                    doc.insert(top.to_string(), value);
                }
                [section, field] => {
                    let table = doc
                        .entry(section.to_string())
                        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                        .as_table_mut()
                        .ok_or_else(|| Error::Config(format!("`{section}` is not a section")))?;
                    table.insert(field.to_string(), value);
                }
                _ => return Err(Error::Config(format!("malformed override key `{key}`"))),
            }
        }
        let cfg: SceneConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides from `SPLATSEG_SECTION__KEY` variables (or `SPLATSEG_SEED`).
    pub fn with_env(&self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?;
                Some((rest.to_ascii_lowercase().replace("__", "."), v))
            })
            .collect();
        self.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.losses;
        check((0.0..=1.0).contains(&l.beta), || format!("losses.beta must lie in [0, 1], got {}", l.beta))?;
        check(l.gamma > 0.0, || format!("losses.gamma must be positive, got {}", l.gamma))?;
        for (name, v) in [
            ("lambda_inst2d", l.lambda_inst2d),
            ("lambda_var", l.lambda_var),
            ("w_pos", l.w_pos),
            ("w_neg", l.w_neg),
        ] {
            check(v >= 0.0 && v.is_finite(), || format!("losses.{name} must be non-negative, got {v}"))?;
        }
        check(self.scene.sh_degree <= crate::scene::MAX_SH_DEGREE, || {
            format!("scene.sh_degree must be at most 3, got {}", self.scene.sh_degree)
        })?;
        check(self.scene.feature_dim >= 1, || "scene.feature_dim must be at least 1".into())?;
        let r = &self.raster;
        check(r.tile_size >= 1, || "raster.tile_size must be at least 1".into())?;
        check(r.alpha_max > 0.0 && r.alpha_max <= 1.0, || "raster.alpha_max must lie in (0, 1]".into())?;
        check(r.cutoff_sigma > 0.0, || "raster.cutoff_sigma must be positive".into())?;
        check(r.near > 0.0, || "raster.near must be positive".into())?;
        let t = &self.trainer;
        for (name, v) in [
            ("lr_means", t.lr_means),
            ("lr_means_final", t.lr_means_final),
            ("lr_features", t.lr_features),
            ("lr_opacity", t.lr_opacity),
            ("lr_scales", t.lr_scales),
            ("lr_rotations", t.lr_rotations),
            ("lr_sh", t.lr_sh),
            ("adam_eps", t.adam_eps),
        ] {
            check(v >= 0.0 && v.is_finite(), || format!("trainer.{name} must be non-negative, got {v}"))?;
        }
        check((0.0..1.0).contains(&t.adam_beta1) && (0.0..1.0).contains(&t.adam_beta2), || {
            "trainer.adam_beta1 and adam_beta2 must lie in [0, 1)".into()
        })?;
        check(t.densify_interval >= 1, || "trainer.densify_interval must be at least 1".into())?;
        check(t.split_scale_divisor > 0.0, || "trainer.split_scale_divisor must be positive".into())?;
        let c = &self.clustering;
        check(c.min_cluster_size.is_none_or(|m| m >= 2), || "clustering.min_cluster_size must be at least 2".into())?;
        check(c.min_samples >= 1, || "clustering.min_samples must be at least 1".into())?;
        let g = &self.language;
        check(g.top_k >= 1, || "language.top_k must be at least 1".into())?;
        check(g.zoom_levels >= 1, || "language.zoom_levels must be at least 1".into())?;
        check(g.expansion >= 0.0, || "language.expansion must be non-negative".into())?;
        check(g.silhouette_threshold > 0.0 && g.silhouette_threshold < 1.0, || {
            "language.silhouette_threshold must lie in (0, 1)".into()
        })?;
        let e = &self.eval;
        check(e.boundary_ratio > 0.0, || "eval.boundary_ratio must be positive".into())?;
        check(e.smooth_k >= 1, || "eval.smooth_k must be at least 1".into())?;
        check((0.0..=1.0).contains(&e.ioa_threshold), || "eval.ioa_threshold must lie in [0, 1]".into())?;
        Ok(())
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
