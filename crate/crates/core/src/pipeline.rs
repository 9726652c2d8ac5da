//! End-to-end stages. Each stage reads its inputs from files and writes its
//! outputs to a run directory, so running the stages one by one gives the
//! same artifacts as [`run_pipeline`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{assign_instances, cluster_cloud, write_cluster_csv};
use crate::config::SceneConfig;
use crate::error::{Error, Result};
use crate::eval::{
    diagonal, graph_smooth, instance_ap, instances_from_labels, macc_at, matched_instance_miou, miou_biou, psnr,
    semantic_ap, transfer_labels, GtInstance, LabeledPointCloud, MaskPair, PredInstance,
};
use crate::io::manifest::{load_scene, LoadedScene, Split, View};
use crate::io::points::read_points;
use crate::io::checkpoint::{self, CheckpointMeta};
use crate::io::{ply, pnm, save_mask_pgm};
use crate::language::{
    assign_semantics, embed_instances, instance_crops, query, select_instances, EmbedView, Embedder, FileEmbedder,
    InstanceTable, MockEmbedder,
};
use crate::raster::{render, render_instance_silhouette, Channels, RasterSettings};
use crate::scene::GaussianCloud;
use crate::synth::{generate, SynthSpec};
use crate::train::{init_from_points, optimize_scene, write_log};

pub const CLOUD_FILE: &str = "cloud.osp";
pub const LOG_FILE: &str = "train_log.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const INSTANCES_FILE: &str = "instances.json";
pub const REPORT_FILE: &str = "report.json";

/// Which embedder to use: the built-in color mock or a precomputed table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmbedderSpec {
    Mock,
    File(PathBuf),
}

impl FromStr for EmbedderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(if s == "mock" { EmbedderSpec::Mock } else { EmbedderSpec::File(PathBuf::from(s)) })
    }
}

impl EmbedderSpec {
    pub fn open(&self) -> Result<Box<dyn Embedder>> {
        Ok(match self {
            EmbedderSpec::Mock => Box::new(MockEmbedder),
            EmbedderSpec::File(p) => Box::new(FileEmbedder::load(p)?),
        })
    }
}

/// Metric groups the eval stage can compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Held-out PSNR.
    Psnr,
    /// Hungarian-matched instance IoU and purity on ground-truth points.
    Miou3d,
    /// Class-agnostic and semantic AP on ground-truth points.
    Ap,
    /// Text queries per ground-truth object: top-1 accuracy and 2D mask metrics.
    Query,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Psnr, Metric::Miou3d, Metric::Ap, Metric::Query];

    /// Parses a comma-separated list; `all` selects every metric.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "all" => out.extend(Metric::ALL),
                "psnr" => out.push(Metric::Psnr),
                "miou3d" => out.push(Metric::Miou3d),
                "ap" => out.push(Metric::Ap),
                "query" => out.push(Metric::Query),
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown metric {other:?} (expected psnr, miou3d, ap, query or all)"
                    )))
                }
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

/// Turns a scene argument into a manifest path. `synth://<n>obj` generates
/// the scene (seeded with the config seed) into `<out>/scene`.
pub fn resolve_scene(scene: &str, out: &Path, seed: u64) -> Result<PathBuf> {
    if scene.starts_with("synth://") {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::from_uri(scene)?
        };
        return generate(&spec)?.write(&out.join("scene"));
    }
    Ok(PathBuf::from(scene))
}

/// Initial cloud from the scene's colored point file.
pub fn initial_cloud(scene: &LoadedScene, cfg: &SceneConfig) -> Result<GaussianCloud> {
    let rel = scene
        .manifest
        .init_points
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("scene manifest lists no init_points".into()))?;
    let table = ply::read(&scene.resolve(rel))?;
    let points = table.positions()?;
    let colors = table.colors().unwrap_or_else(|| vec![[0.5; 3]; points.len()]);
    init_from_points(&points, &colors, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub gaussians: usize,
    pub final_loss: Option<f64>,
}

/// Optimizes the scene from its initial points and writes the checkpoint
/// and loss log to `out`.
pub fn train_stage(scene: &LoadedScene, cfg: &SceneConfig, out: &Path) -> Result<TrainSummary> {
    fs::create_dir_all(out)?;
    let init = initial_cloud(scene, cfg)?;
    let views: Vec<&View> = scene.split(Split::Train).collect();
    let ckpt_dir = out.join("checkpoints");
    let meta = |iteration: usize, cloud: &GaussianCloud| CheckpointMeta {
        iteration,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        gaussians: cloud.len(),
    };
    let result = optimize_scene(&views, init, cfg, |it, cloud| {
        fs::create_dir_all(&ckpt_dir)?;
        checkpoint::save_with_meta(&ckpt_dir.join(format!("iter_{it:06}.osp")), cloud, &meta(it, cloud))
    })?;
    checkpoint::save_with_meta(&out.join(CLOUD_FILE), &result.cloud, &meta(cfg.trainer.iterations, &result.cloud))?;
    write_log(&out.join(LOG_FILE), &result.log)?;
    Ok(TrainSummary {
        iterations: cfg.trainer.iterations,
        gaussians: result.cloud.len(),
        final_loss: result.log.last().map(|r| r.total),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub clusters: usize,
    pub noise: usize,
}

/// Clusters the checkpoint's features and writes the per-Gaussian CSV and
/// the instance table.
pub fn cluster_stage(cloud_path: &Path, cfg: &SceneConfig, out: &Path) -> Result<ClusterSummary> {
    fs::create_dir_all(out)?;
    let cloud = checkpoint::load(cloud_path)?;
    let result = cluster_cloud(&cloud, &cfg.clustering)?;
    write_cluster_csv(&out.join(CLUSTERS_FILE), &result)?;
    assign_instances(&cloud, &result)?.save(&out.join(INSTANCES_FILE))?;
    Ok(ClusterSummary {
        clusters: result.cluster_count,
        noise: result.labels.iter().filter(|&&l| l < 0).count(),
    })
}

fn embed_views(scene: &LoadedScene) -> Vec<EmbedView<'_>> {
    scene
        .split(Split::Train)
        .map(|v| EmbedView {
            camera: &v.camera,
            image: &v.image,
        })
        .collect()
}

/// One exported crop: the embedding lookup key and the files holding the
/// crop (relative to the export directory).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropEntry {
    pub key: String,
    pub image: String,
    pub mask: String,
}

pub const CROP_INDEX: &str = "index.json";

/// Writes every crop the embed stage would embed as `<n>.ppm` plus a binary
/// `<n>.mask.pgm`, and an index mapping lookup keys to the files. Embedding
/// each crop externally and saving the vectors under these keys yields a
/// table for [`FileEmbedder`].
pub fn export_crops(scene: &LoadedScene, cloud: &GaussianCloud, table: &InstanceTable, cfg: &SceneConfig, dir: &Path) -> Result<Vec<CropEntry>> {
    fs::create_dir_all(dir)?;
    let views = embed_views(scene);
    let mut entries = Vec::new();
    for inst in &table.instances {
        for (key, crop) in instance_crops(cloud, &table.labels, inst, &views, &cfg.language, &cfg.raster)? {
            let n = entries.len();
            let entry = CropEntry {
                key: key.name(),
                image: format!("{n:05}.ppm"),
                mask: format!("{n:05}.mask.pgm"),
            };
            fs::write(dir.join(&entry.image), pnm::encode_ppm(crop.image.width, crop.image.height, &crop.image.data))?;
            save_mask_pgm(&dir.join(&entry.mask), crop.image.width, crop.image.height, &crop.mask)?;
            entries.push(entry);
        }
    }
    fs::write(dir.join(CROP_INDEX), serde_json::to_string_pretty(&entries)?)?;
    Ok(entries)
}

/// Embeds every instance from the training views and rewrites the table.
pub fn embed_stage(
    scene: &LoadedScene,
    cloud_path: &Path,
    instances_path: &Path,
    embedder: &dyn Embedder,
    cfg: &SceneConfig,
) -> Result<usize> {
    let cloud = checkpoint::load(cloud_path)?;
    let mut table = InstanceTable::load(instances_path)?;
    let views = embed_views(scene);
    let n = embed_instances(&cloud, &mut table, &views, embedder, &cfg.language, &cfg.raster)?;
    table.save(instances_path)?;
    Ok(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub text: String,
    pub ranking: Vec<(usize, f64)>,
    pub selected: Vec<usize>,
}

pub fn query_stage(table: &InstanceTable, text: &str, embedder: &dyn Embedder, cfg: &SceneConfig) -> Result<QueryResult> {
    let ranking = query(table, text, embedder)?;
    let selected = select_instances(&ranking, cfg.language.query_threshold);
    Ok(QueryResult {
        text: text.to_string(),
        ranking,
        selected,
    })
}

/// Occlusion-free silhouette of the union of `instances` in one view.
pub fn selection_silhouette(
    cloud: &GaussianCloud,
    labels: &[i64],
    instances: &[usize],
    view: &View,
    threshold: f64,
    settings: &RasterSettings,
) -> Result<Vec<bool>> {
    let mut mask = vec![false; view.camera.pixel_count()];
    for &i in instances {
        let s = render_instance_silhouette(cloud, labels, i as i64, &view.camera, false, threshold, settings)?;
        mask.iter_mut().zip(s).for_each(|(m, s)| *m |= s);
    }
    Ok(mask)
}

/// Scores the cloud and instance table against the scene's ground truth.
pub fn eval_stage(
    scene: &LoadedScene,
    cloud: &GaussianCloud,
    table: &InstanceTable,
    embedder: Option<&dyn Embedder>,
    cfg: &SceneConfig,
    metrics: &[Metric],
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    if table.gaussian_count != cloud.len() {
        return Err(crate::error::contract("instance table belongs to a different cloud"));
    }
    if metrics.contains(&Metric::Psnr) {
        let test: Vec<&View> = scene.split(Split::Test).collect();
        let (key, views) = if test.is_empty() {
            ("psnr_train", scene.split(Split::Train).collect())
        } else {
            ("psnr_test", test)
        };
        let mut total = 0.0;
        for v in &views {
            let r = render(cloud, &v.camera, Channels::COLOR, &cfg.raster)?;
            total += psnr(&r.color.expect("color requested"), &v.image.data)?;
        }
        out.insert(key.to_string(), total / views.len() as f64);
    }
    let needs_points = metrics.iter().any(|m| matches!(m, Metric::Miou3d | Metric::Ap | Metric::Query));
    if !needs_points {
        return Ok(out);
    }
    let rel = scene
        .manifest
        .gt_points
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("scene manifest lists no gt_points".into()))?;
    let records = read_points(&scene.resolve(rel))?;
    let positions: Vec<[f64; 3]> = records.iter().map(|r| [r.x, r.y, r.z]).collect();
    let gt: Vec<i64> = records.iter().map(|r| r.instance_id).collect();
    let predicted = predict_point_labels(cloud, &table.labels, &positions, cfg)?;
    let matching = matched_instance_miou(&predicted, &gt)?;
    if metrics.contains(&Metric::Miou3d) {
        out.insert("miou3d".into(), matching.miou);
        out.insert("purity3d".into(), matching.purity);
    }
    let semantics = match embedder {
        Some(e) if table.instances.iter().any(|i| i.embedding.is_some()) && !scene.manifest.semantic_names.is_empty() => {
            Some(assign_semantics(table, &scene.manifest.semantic_names, e)?)
        }
        _ => None,
    };
    if metrics.contains(&Metric::Ap) {
        let preds: Vec<PredInstance> = instances_from_labels(&predicted)
            .into_iter()
            .map(|(l, points)| PredInstance {
                points,
                confidence: table.instances.get(l as usize).map_or(1.0, |i| i.stability),
                label: semantics.as_ref().and_then(|s| s[l as usize]).map_or(-1, |s| s as i64),
            })
            .collect();
        let gts: Vec<GtInstance> = instances_from_labels(&gt)
            .into_iter()
            .map(|(_, points)| GtInstance {
                label: records[points[0]].semantic_id,
                points,
            })
            .collect();
        if let Some(s) = instance_ap(&preds, &gts) {
            out.insert("ap".into(), s.ap);
            out.insert("ap50".into(), s.ap50);
            out.insert("ap25".into(), s.ap25);
        }
        if semantics.is_some() {
            if let Some(s) = semantic_ap(&preds, &gts) {
                out.insert("sem_ap".into(), s.ap);
                out.insert("sem_ap50".into(), s.ap50);
                out.insert("sem_ap25".into(), s.ap25);
            }
        }
    }
    if metrics.contains(&Metric::Query) {
        let e = embedder.ok_or_else(|| Error::InvalidParameter("query metrics need an embedder".into()))?;
        let names = &scene.manifest.semantic_names;
        let mut hits = 0usize;
        let mut queries = 0usize;
        let mut pairs_owned = Vec::new();
        for m in &matching.matches {
            let sid = records.iter().find(|r| r.instance_id == m.gt).map(|r| r.semantic_id);
            let Some(text) = sid.and_then(|s| names.get(s as usize)) else {
                continue;
            };
            let q = query_stage(table, text, e, cfg)?;
            queries += 1;
            if q.selected.first().map(|&i| i as i64) == m.pred {
                hits += 1;
            }
            for v in scene.split(Split::Test) {
                let Some(gt_mask) = &v.gt_mask else { continue };
                let target = gt_mask.binary(m.gt as u16 + 1);
                if !target.contains(&true) {
                    continue;
                }
                let pred = selection_silhouette(cloud, &table.labels, &q.selected, v, cfg.language.silhouette_threshold, &cfg.raster)?;
                pairs_owned.push((v.camera.width, v.camera.height, pred, target));
            }
        }
        if queries > 0 {
            out.insert("query_top1".into(), hits as f64 / queries as f64);
        }
        if !pairs_owned.is_empty() {
            let pairs: Vec<MaskPair> = pairs_owned
                .iter()
                .map(|(w, h, p, g)| MaskPair {
                    width: *w,
                    height: *h,
                    pred: p,
                    gt: g,
                })
                .collect();
            let (miou, mbiou) = miou_biou(&pairs, cfg.eval.boundary_ratio)?;
            let ious: Vec<f64> = pairs.iter().map(|p| crate::eval::iou(p.pred, p.gt)).collect::<Result<_>>()?;
            out.insert("miou2d".into(), miou);
            out.insert("mbiou2d".into(), mbiou);
            out.insert("macc2d".into(), macc_at(&ious, cfg.eval.macc_threshold)?);
        }
    }
    Ok(out)
}

/// Labels points by their nearest clustered Gaussian (noise Gaussians are
/// skipped), optionally smoothed by graph segmentation.
pub fn predict_point_labels(cloud: &GaussianCloud, labels: &[i64], points: &[[f64; 3]], cfg: &SceneConfig) -> Result<Vec<i64>> {
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| labels[i] >= 0).collect();
    if keep.is_empty() {
        return Ok(vec![-1; points.len()]);
    }
    let means: Vec<[f64; 3]> = keep.iter().map(|&i| cloud.means[i]).collect();
    let ls: Vec<i64> = keep.iter().map(|&i| labels[i]).collect();
    let predicted = transfer_labels(&means, &ls, points)?;
    if !cfg.eval.smooth {
        return Ok(predicted);
    }
    let pc = LabeledPointCloud {
        positions: points.to_vec(),
        predicted,
        gt_instance: None,
        gt_semantic: None,
    };
    let threshold = cfg.eval.smooth_threshold * diagonal(points);
    Ok(graph_smooth(&pc, cfg.eval.smooth_k, threshold)?.predicted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scene: String,
    pub config_hash: String,
    pub seed: u64,
    pub train: TrainSummary,
    pub cluster: ClusterSummary,
    pub embedded: usize,
    pub metrics: BTreeMap<String, f64>,
}

/// Train, cluster, embed and evaluate, writing every artifact into `out`.
pub fn run_pipeline(
    scene_arg: &str,
    cfg: &SceneConfig,
    out: &Path,
    embedder: &EmbedderSpec,
    metrics: &[Metric],
) -> Result<PipelineReport> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let manifest = resolve_scene(scene_arg, out, cfg.seed)?;
    let scene = load_scene(&manifest)?;
    let train = train_stage(&scene, cfg, out)?;
    let cluster = cluster_stage(&out.join(CLOUD_FILE), cfg, out)?;
    let e = embedder.open()?;
    let embedded = embed_stage(&scene, &out.join(CLOUD_FILE), &out.join(INSTANCES_FILE), e.as_ref(), cfg)?;
    let cloud = checkpoint::load(&out.join(CLOUD_FILE))?;
    let table = InstanceTable::load(&out.join(INSTANCES_FILE))?;
    let metrics = eval_stage(&scene, &cloud, &table, Some(e.as_ref()), cfg, metrics)?;
    let report = PipelineReport {
        scene: scene.manifest.name.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        train,
        cluster,
        embedded,
        metrics,
    };
    fs::write(out.join(REPORT_FILE), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}
