//! Per-view optimization of a Gaussian cloud with densification.

mod adam;
mod densify;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_update, learning_rate, Moments};
pub use densify::{densify_and_prune, DensifyReport};

use crate::config::SceneConfig;
use crate::error::{contract, Error, Result};
use crate::io::manifest::View;
use crate::losses::{view_losses, LossReport};
use crate::raster::{render, render_backward, Channels, RenderGrads};
use crate::scene::sh::rgb_to_dc;
use crate::scene::{logit, sh_bases, Camera, Gaussian, GaussianCloud, ParamGroup};
use crate::spatial::KdTree;

/// Everything the optimizer carries between steps.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub moments: Moments,
    /// Sum of screen-space positional gradient norms since the last densification.
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
    /// Scene radius used to scale the position learning rate and the clone/split rule.
    pub extent: f64,
    /// Iteration budget driving the position learning-rate schedule.
    pub total_steps: usize,
    pub rng: ChaCha8Rng,
}

impl OptimizerState {
    pub fn new(cloud: &GaussianCloud, extent: f64, total_steps: usize, seed: u64) -> Self {
        OptimizerState {
            moments: Moments::zeros(cloud),
            grad_accum: vec![0.0; cloud.len()],
            grad_count: vec![0; cloud.len()],
            extent,
            total_steps,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de75),
        }
    }

    pub fn step(&self) -> usize {
        self.moments.step
    }
}

/// Radius of the camera rig: 1.1 times the largest distance of a camera
/// center from their mean (1 for a single camera).
pub fn scene_extent(cameras: &[&Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let centers: Vec<[f64; 3]> = cameras.iter().map(|c| c.center()).collect();
    let mut mean = [0.0; 3];
    for c in &centers {
        for a in 0..3 {
            mean[a] += c[a] / centers.len() as f64;
        }
    }
    let r = centers
        .iter()
        .map(|c| ((c[0] - mean[0]).powi(2) + (c[1] - mean[1]).powi(2) + (c[2] - mean[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Builds the initial cloud from colored points: isotropic scales from the
/// mean squared distance to the three nearest neighbors, opacity 0.1, color
/// in the SH DC term and features uniform in `[-feature_init, feature_init]`.
pub fn init_from_points(points: &[[f64; 3]], colors: &[[f64; 3]], cfg: &SceneConfig) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("initial point set is empty".into()));
    }
    if colors.len() != points.len() {
        return Err(contract("one color per initial point is required"));
    }
    let d = cfg.scene.feature_dim;
    let nb = sh_bases(cfg.scene.sh_degree);
    let mut cloud = GaussianCloud::new(cfg.scene.sh_degree, d)?;
    let tree = KdTree::new(points);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = cfg.trainer.feature_init;
    for (i, p) in points.iter().enumerate() {
        let nn = tree.knn(p, 4);
        let others: Vec<f64> = nn.iter().filter(|e| e.0 != i).take(3).map(|e| e.1).collect();
        let mean_d2 = if others.is_empty() {
            1e-2
        } else {
            (others.iter().sum::<f64>() / others.len() as f64).max(1e-7)
        };
        let mut sh = vec![0.0; 3 * nb];
        for ch in 0..3 {
            sh[ch * nb] = rgb_to_dc(colors[i][ch]);
        }
        let feature = (0..d)
            .map(|_| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 })
            .collect();
        cloud.push(Gaussian {
            mean: *p,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.5 * mean_d2.ln(); 3],
            opacity_logit: logit(0.1),
            sh,
            feature,
        })?;
    }
    Ok(cloud)
}

fn channels_for(cfg: &SceneConfig, has_mask: bool) -> Channels {
    let contrastive = cfg.losses.lambda_inst2d > 0.0 && has_mask;
    let variance = cfg.losses.lambda_var > 0.0;
    Channels {
        color: true,
        features: contrastive || variance,
        variance,
    }
}

/// Loss and gradients of one view without updating anything.
pub fn evaluate_view(cloud: &GaussianCloud, view: &View, cfg: &SceneConfig, iteration: usize) -> Result<(LossReport, RenderGrads)> {
    let cam = &view.camera;
    if view.image.width != cam.width || view.image.height != cam.height {
        return Err(contract("target image does not match the camera"));
    }
    let mask = view.mask.as_ref();
    let out = render(cloud, cam, channels_for(cfg, mask.is_some()), &cfg.raster)?;
    let (report, d_out) = view_losses(&out, &view.image.data, mask, &cfg.losses)?;
    if let Some(term) = report.non_finite_term() {
        return Err(Error::NonFinite {
            iteration,
            view: cam.view_id,
            term: term.into(),
        });
    }
    let grads = render_backward(cloud, cam, &out, &d_out, &cfg.raster)?;
    if !grads.all_finite() {
        return Err(Error::NonFinite {
            iteration,
            view: cam.view_id,
            term: "gradient".into(),
        });
    }
    Ok((report, grads))
}

/// One optimization step on one view: render, losses, backward, update.
pub fn train_step(cloud: &mut GaussianCloud, view: &View, cfg: &SceneConfig, state: &mut OptimizerState) -> Result<LossReport> {
    let iteration = state.step() + 1;
    let (report, grads) = evaluate_view(cloud, view, cfg, iteration)?;
    for i in 0..cloud.len() {
        if grads.visible[i] {
            state.grad_accum[i] += grads.mean2d_norm[i];
            state.grad_count[i] += 1;
        }
    }
    state.moments.step += 1;
    let step = state.moments.step;
    for (k, g) in ParamGroup::ALL.into_iter().enumerate() {
        let lr = learning_rate(&cfg.trainer, g, step, state.total_steps, state.extent);
        adam_update(
            cloud.group_mut(g),
            grads.group(g),
            &mut state.moments.m[k],
            &mut state.moments.v[k],
            lr,
            step,
            &cfg.trainer,
        );
    }
    Ok(report)
}

/// Densifies using the accumulated statistics, then resets them.
pub fn densify_step(cloud: &mut GaussianCloud, state: &mut OptimizerState, cfg: &SceneConfig) -> DensifyReport {
    let mean_grads: Vec<f64> = state
        .grad_accum
        .iter()
        .zip(&state.grad_count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let report = densify_and_prune(cloud, &mean_grads, &cfg.trainer, state.extent, &mut state.rng);
    state.moments.remap(cloud, &report.src);
    state.grad_accum = vec![0.0; cloud.len()];
    state.grad_count = vec![0; cloud.len()];
    report
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub l1: f64,
    pub ssim: f64,
    pub rgb: f64,
    pub pos: f64,
    pub neg: f64,
    pub var: f64,
    pub total: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub lr: f64,
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub struct TrainOutcome {
    pub cloud: GaussianCloud,
    pub log: Vec<LogRow>,
    pub state: OptimizerState,
}

/// Runs the configured number of iterations over `views`, visiting them in a
/// seeded random order reshuffled every epoch. `checkpoint` is called every
/// `checkpoint_interval` iterations.
pub fn optimize_scene(
    views: &[&View],
    init: GaussianCloud,
    cfg: &SceneConfig,
    mut checkpoint: impl FnMut(usize, &GaussianCloud) -> Result<()>,
) -> Result<TrainOutcome> {
    if views.is_empty() {
        return Err(Error::InvalidParameter("training needs at least one view".into()));
    }
    if init.is_empty() {
        return Err(Error::InvalidParameter("initial cloud is empty".into()));
    }
    init.validate()?;
    let t = &cfg.trainer;
    let cams: Vec<&Camera> = views.iter().map(|v| &v.camera).collect();
    let mut cloud = init;
    let mut state = OptimizerState::new(&cloud, scene_extent(&cams), t.iterations, cfg.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(t.iterations);
    for it in 1..=t.iterations {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut order_rng);
            order.reverse();
        }
        let v = order.pop().unwrap();
        let report = train_step(&mut cloud, views[v], cfg, &mut state)?;
        log.push(LogRow {
            iteration: it,
            l1: report.l1,
            ssim: report.ssim,
            rgb: report.rgb,
            pos: report.pos,
            neg: report.neg,
            var: report.var,
            total: report.total,
            n: cloud.len(),
            lr: learning_rate(t, ParamGroup::Means, it, t.iterations, state.extent),
        });
        if it > t.densify_from && it < t.densify_until && it % t.densify_interval == 0 {
            densify_step(&mut cloud, &mut state, cfg);
        }
        if t.checkpoint_interval > 0 && it % t.checkpoint_interval == 0 {
            checkpoint(it, &cloud)?;
        }
    }
    Ok(TrainOutcome { cloud, log, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::manifest::Split;
    use crate::io::RgbImage;
    use crate::masks::InstanceMask;
    use crate::raster::{render, RasterSettings};
    use crate::real::Precision;
    use crate::test_util::{axis_camera, cloud_of, flat_gaussian, random_cloud};

    fn view_of(cloud: &GaussianCloud, cam: Camera, mask: Option<InstanceMask>) -> View {
        let out = render(cloud, &cam, Channels::COLOR, &RasterSettings::default()).unwrap();
        View {
            image: RgbImage::new(cam.width, cam.height, out.color.unwrap()).unwrap(),
            camera: cam,
            mask,
            gt_mask: None,
            split: Split::Train,
        }
    }

    fn rgb_only() -> SceneConfig {
        let mut cfg = SceneConfig::default();
        cfg.losses.lambda_inst2d = 0.0;
        cfg.losses.lambda_var = 0.0;
        cfg
    }

    #[test]
    fn converged_rgb_has_zero_gradient() {
        let cloud = random_cloud(3, 10, 1, 8);
        let view = view_of(&cloud, axis_camera(16, 16, 24.0), None);
        let (report, grads) = evaluate_view(&cloud, &view, &rgb_only(), 1).unwrap();
        assert!(report.total.abs() < 1e-9);
        assert!(grads.max_abs() < 1e-9, "{}", grads.max_abs());
    }

    #[test]
    fn variance_only_step_pulls_features_together() {
        let mut cloud = cloud_of(
            vec![
                flat_gaussian([0.0, 0.0, 2.0], 0.1, 0.5, [1.0, 0.0, 0.0], &[1.0]),
                flat_gaussian([0.0, 0.0, 3.0], 0.1, 0.5, [0.0, 0.0, 1.0], &[0.0]),
            ],
            1,
        );
        let view = view_of(&cloud, axis_camera(1, 1, 10.0), None);
        let mut cfg = rgb_only();
        cfg.scene.feature_dim = 1;
        cfg.scene.sh_degree = 0;
        cfg.losses.lambda_var = 0.5;
        cfg.raster.precision = Precision::F64;
        let mut state = OptimizerState::new(&cloud, 1.0, 10, 0);
        train_step(&mut cloud, &view, &cfg, &mut state).unwrap();
        assert!(cloud.features[0] < 1.0);
        assert!(cloud.features[1] > 0.0);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let cloud = random_cloud(1, 5, 0, 2);
        let mut view = view_of(&cloud, axis_camera(8, 8, 12.0), None);
        view.camera.view_id = 42;
        view.image.data[0] = f64::NAN;
        let mut c = cloud.clone();
        let mut state = OptimizerState::new(&c, 1.0, 10, 0);
        match train_step(&mut c, &view, &rgb_only(), &mut state) {
            Err(Error::NonFinite { iteration, view, term }) => {
                assert_eq!((iteration, view, term.as_str()), (1, 42, "l1"));
            }
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn zero_iterations_return_the_init() {
        let cloud = random_cloud(2, 6, 1, 8);
        let view = view_of(&cloud, axis_camera(8, 8, 12.0), None);
        let mut cfg = SceneConfig::default();
        cfg.trainer.iterations = 0;
        let out = optimize_scene(&[&view], cloud.clone(), &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(out.cloud, cloud);
        assert!(out.log.is_empty());
    }

    fn small_problem() -> (GaussianCloud, Vec<View>, SceneConfig) {
        let truth = random_cloud(8, 15, 0, 2);
        let mut views = Vec::new();
        for k in 0..3 {
            let mut cam = axis_camera(16, 16, 24.0);
            cam.view_id = k;
            cam.translation = [0.1 * k as f64, 0.0, 0.0];
            let mut ids = vec![0u16; 256];
            for (p, id) in ids.iter_mut().enumerate() {
                *id = if p % 16 < 8 { 1 } else { 2 };
            }
            views.push(view_of(&truth, cam, Some(InstanceMask::new(16, 16, ids).unwrap())));
        }
        let mut init = truth.clone();
        for m in init.means.iter_mut() {
            m[0] += 0.05;
        }
        let mut cfg = SceneConfig::default();
        cfg.scene.sh_degree = 0;
        cfg.scene.feature_dim = 2;
        cfg.trainer.iterations = 60;
        cfg.trainer.densify_from = 10;
        cfg.trainer.densify_interval = 20;
        (init, views, cfg)
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (init, views, mut cfg) = small_problem();
        cfg.trainer.densify_until = 0;
        let refs: Vec<&View> = views.iter().collect();
        let a = optimize_scene(&refs, init.clone(), &cfg, |_, _| Ok(())).unwrap();
        let b = optimize_scene(&refs, init, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.cloud, b.cloud);
        let first: f64 = a.log[..6].iter().map(|r| r.total).sum();
        let last: f64 = a.log[54..].iter().map(|r| r.total).sum();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn state_tracks_cloud_shape_through_densification() {
        let (init, views, mut cfg) = small_problem();
        cfg.trainer.densify_grad_threshold = 0.0;
        cfg.trainer.iterations = 41;
        let refs: Vec<&View> = views.iter().collect();
        let out = optimize_scene(&refs, init.clone(), &cfg, |_, _| Ok(())).unwrap();
        assert!(out.cloud.len() > init.len());
        for g in ParamGroup::ALL {
            assert_eq!(out.state.moments.m(g).len(), out.cloud.group(g).len());
            assert_eq!(out.state.moments.v(g).len(), out.cloud.group(g).len());
        }
        assert_eq!(out.state.grad_accum.len(), out.cloud.len());
    }

    #[test]
    fn checkpoints_fire_on_interval() {
        let (init, views, mut cfg) = small_problem();
        cfg.trainer.iterations = 10;
        cfg.trainer.checkpoint_interval = 4;
        let refs: Vec<&View> = views.iter().collect();
        let mut seen = Vec::new();
        optimize_scene(&refs, init, &cfg, |it, _| {
            seen.push(it);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![4, 8]);
    }

    #[test]
    fn init_uses_neighbor_distances() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let cfg = SceneConfig::default();
        let cloud = init_from_points(&pts, &[[1.0, 0.0, 0.0]; 4], &cfg).unwrap();
        assert!((cloud.scale(0)[0] - 1.0).abs() < 1e-12);
        assert!((cloud.opacity(0) - 0.1).abs() < 1e-12);
        assert!(cloud.features.iter().all(|f| f.abs() <= 0.05));
        assert_eq!(cloud.feature_dim(), 8);
        let again = init_from_points(&pts, &[[1.0, 0.0, 0.0]; 4], &cfg).unwrap();
        assert_eq!(cloud, again);
    }

    #[test]
    fn log_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        write_log(&p, &[LogRow { iteration: 1, l1: 0.1, ssim: 0.2, rgb: 0.3, pos: 0.0, neg: 0.0, var: 0.0, total: 0.3, n: 5, lr: 1e-4 }]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("iteration,l1,ssim,rgb,pos,neg,var,total,N,lr\n"));
    }
}
