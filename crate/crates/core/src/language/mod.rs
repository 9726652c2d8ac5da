//! Per-instance language embeddings and text queries.
//!
//! Each instance is scored in every view by how much of the image its
//! silhouette covers times the fraction of its Gaussians inside the viewport.
//! The best views are cropped at several zoom levels, every crop is embedded
//! and the normalized mean becomes the instance embedding.

mod embed;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use embed::{cosine, text_key, Embedder, FileEmbedder, MockEmbedder, RegionKey, MOCK_DIM};

use crate::config::LanguageSection;
use crate::error::{contract, Error, Result};
use crate::io::RgbImage;
use crate::raster::{render_instance_silhouette, RasterSettings};
use crate::scene::{Camera, GaussianCloud};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: usize,
    /// Indices of the member Gaussians.
    pub members: Vec<usize>,
    /// Cluster stability, used as detection confidence.
    pub stability: f64,
    /// Unit-length language embedding, absent until embedded.
    #[serde(skip)]
    pub embedding: Option<Vec<f64>>,
    /// View ids the embedding was averaged over.
    pub views: Vec<usize>,
    pub zoom_levels: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceTable {
    pub gaussian_count: usize,
    /// Instance id per Gaussian, `-1` for noise.
    pub labels: Vec<i64>,
    pub instances: Vec<Instance>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    embedding_dim: usize,
    embedded: Vec<bool>,
    #[serde(flatten)]
    table: InstanceTable,
}

fn embedding_block(path: &Path) -> PathBuf {
    path.with_extension("f32")
}

impl InstanceTable {
    pub fn embedding_dim(&self) -> usize {
        self.instances.iter().find_map(|i| i.embedding.as_ref().map(Vec::len)).unwrap_or(0)
    }

    /// Writes JSON metadata to `path` and the embeddings as a little-endian
    /// f32 matrix (one row per instance, zeros when unembedded) next to it
    /// with the extension `.f32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dim = self.embedding_dim();
        let mut block = Vec::with_capacity(self.instances.len() * dim * 4);
        for inst in &self.instances {
            match &inst.embedding {
                Some(e) if e.len() == dim => e.iter().for_each(|&x| block.extend_from_slice(&(x as f32).to_le_bytes())),
                Some(e) => {
                    return Err(contract(format!(
                        "instance {} has a {}-dim embedding, table dim is {dim}",
                        inst.id,
                        e.len()
                    )))
                }
                None => block.extend(std::iter::repeat_n(0u8, dim * 4)),
            }
        }
        let file = TableFile {
            embedding_dim: dim,
            embedded: self.instances.iter().map(|i| i.embedding.is_some()).collect(),
            table: self.clone(),
        };
        fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        fs::write(embedding_block(path), block)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: TableFile = serde_json::from_slice(&fs::read(path)?)?;
        let mut table = file.table;
        let dim = file.embedding_dim;
        let block = fs::read(embedding_block(path)).or_else(|e| {
            if dim == 0 && e.kind() == std::io::ErrorKind::NotFound {
                Ok(Vec::new())
            } else {
                Err(e)
            }
        })?;
        if block.len() != table.instances.len() * dim * 4 || file.embedded.len() != table.instances.len() {
            return Err(Error::Format(format!(
                "embedding block of {} bytes does not hold {} rows of dim {dim}",
                block.len(),
                table.instances.len()
            )));
        }
        for (k, inst) in table.instances.iter_mut().enumerate() {
            if file.embedded[k] {
                let row = &block[k * dim * 4..(k + 1) * dim * 4];
                let v = row.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
                inst.embedding = Some(
                    embed::normalize(v).ok_or_else(|| Error::Format(format!("instance {k} has a zero embedding")))?,
                );
            }
        }
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.gaussian_count {
            return Err(contract(format!(
                "{} labels for {} Gaussians",
                self.labels.len(),
                self.gaussian_count
            )));
        }
        for (k, inst) in self.instances.iter().enumerate() {
            if inst.id != k {
                return Err(contract(format!("instance at position {k} has id {}", inst.id)));
            }
            if let Some(&g) = inst.members.iter().find(|&&g| g >= self.gaussian_count || self.labels[g] != k as i64) {
                return Err(contract(format!("Gaussian {g} is listed in instance {k} but not labeled so")));
            }
        }
        Ok(())
    }
}

/// Fraction of the image covered by the silhouette times the fraction of
/// member Gaussians whose means project inside the viewport in front of the
/// camera.
pub fn visibility_score(cloud: &GaussianCloud, members: &[usize], mask: &[bool], cam: &Camera) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Undefined("visibility of an instance without Gaussians".into()));
    }
    if mask.len() != cam.pixel_count() {
        return Err(contract("silhouette does not match the camera"));
    }
    let area = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
    let inside = members
        .iter()
        .filter(|&&g| {
            let p = cam.to_camera(cloud.means[g]);
            if p[2] <= 0.0 {
                return false;
            }
            let u = cam.fx * p[0] / p[2] + cam.cx;
            let v = cam.fy * p[1] / p[2] + cam.cy;
            (0.0..cam.width as f64).contains(&u) && (0.0..cam.height as f64).contains(&v)
        })
        .count();
    Ok(area * inside as f64 / members.len() as f64)
}

/// Positions of the `k` highest positive scores, best first; ties keep the
/// lower position.
pub fn select_topk_views(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > 0.0).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CropBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub level: usize,
    pub bounds: CropBox,
    pub image: RgbImage,
    pub mask: Vec<bool>,
}

/// Crops around the mask at `levels` zoom levels. Level `l` grows the tight
/// bounding box by `round(expansion * l * size)` pixels on each side, per
/// axis, clamped to the image.
pub fn build_crops(image: &RgbImage, mask: &[bool], levels: usize, expansion: f64) -> Result<Vec<Crop>> {
    let (w, h) = (image.width, image.height);
    if mask.len() != w * h {
        return Err(contract("mask does not match the image"));
    }
    if !(expansion >= 0.0 && expansion.is_finite()) {
        return Err(Error::InvalidParameter(format!("expansion ratio must be >= 0, got {expansion}")));
    }
    let mut tight: Option<CropBox> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (i % w, i / w);
        let b = tight.get_or_insert(CropBox {
            x0: x,
            y0: y,
            x1: x + 1,
            y1: y + 1,
        });
        b.x0 = b.x0.min(x);
        b.x1 = b.x1.max(x + 1);
        b.y0 = b.y0.min(y);
        b.y1 = b.y1.max(y + 1);
    }
    let tight = tight.ok_or_else(|| Error::EmptySelection("cannot crop around an empty mask".into()))?;
    Ok((0..levels)
        .map(|level| {
            let px = (expansion * level as f64 * tight.width() as f64).round() as usize;
            let py = (expansion * level as f64 * tight.height() as f64).round() as usize;
            let b = CropBox {
                x0: tight.x0.saturating_sub(px),
                y0: tight.y0.saturating_sub(py),
                x1: (tight.x1 + px).min(w),
                y1: (tight.y1 + py).min(h),
            };
            let mut data = Vec::with_capacity(b.width() * b.height() * 3);
            let mut m = Vec::with_capacity(b.width() * b.height());
            for y in b.y0..b.y1 {
                data.extend_from_slice(&image.data[(y * w + b.x0) * 3..(y * w + b.x1) * 3]);
                m.extend_from_slice(&mask[y * w + b.x0..y * w + b.x1]);
            }
            Crop {
                level,
                bounds: b,
                image: RgbImage {
                    width: b.width(),
                    height: b.height(),
                    data,
                },
                mask: m,
            }
        })
        .collect())
}

/// Normalized mean of the vectors; `None` when there are none or they cancel.
pub fn aggregate(vectors: &[Vec<f64>]) -> Option<Vec<f64>> {
    let first = vectors.first()?;
    let mut mean = vec![0.0; first.len()];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / vectors.len() as f64;
        }
    }
    embed::normalize(mean)
}

/// A view an instance can be embedded from.
#[derive(Clone, Copy, Debug)]
pub struct EmbedView<'a> {
    pub camera: &'a Camera,
    pub image: &'a RgbImage,
}

/// The crops an instance is embedded from: top-K views by visibility (with
/// occlusion-respecting silhouettes), `zoom_levels` crops each.
pub fn instance_crops(
    cloud: &GaussianCloud,
    labels: &[i64],
    instance: &Instance,
    views: &[EmbedView],
    cfg: &LanguageSection,
    settings: &RasterSettings,
) -> Result<Vec<(RegionKey, Crop)>> {
    let mut masks = Vec::with_capacity(views.len());
    let mut scores = Vec::with_capacity(views.len());
    for v in views {
        if (v.image.width, v.image.height) != (v.camera.width, v.camera.height) {
            return Err(contract(format!("image of view {} does not match its camera", v.camera.view_id)));
        }
        let mask = render_instance_silhouette(
            cloud,
            labels,
            instance.id as i64,
            v.camera,
            true,
            cfg.silhouette_threshold,
            settings,
        )?;
        scores.push(visibility_score(cloud, &instance.members, &mask, v.camera)?);
        masks.push(mask);
    }
    let mut out = Vec::new();
    for k in select_topk_views(&scores, cfg.top_k) {
        for crop in build_crops(views[k].image, &masks[k], cfg.zoom_levels, cfg.expansion)? {
            let key = RegionKey {
                instance: instance.id,
                view: views[k].camera.view_id,
                zoom: crop.level,
            };
            out.push((key, crop));
        }
    }
    Ok(out)
}

/// Embeds one instance. Returns `None` when no view sees it.
pub fn embed_instance(
    cloud: &GaussianCloud,
    labels: &[i64],
    instance: &Instance,
    views: &[EmbedView],
    embedder: &dyn Embedder,
    cfg: &LanguageSection,
    settings: &RasterSettings,
) -> Result<Option<Instance>> {
    let crops = instance_crops(cloud, labels, instance, views, cfg, settings)?;
    let vectors = crops
        .iter()
        .map(|(key, c)| embedder.embed_image_region(key, &c.image, &c.mask))
        .collect::<Result<Vec<_>>>()?;
    let Some(embedding) = aggregate(&vectors) else {
        return Ok(None);
    };
    let mut used: Vec<usize> = crops.iter().map(|(k, _)| k.view).collect();
    used.dedup();
    Ok(Some(Instance {
        embedding: Some(embedding),
        views: used,
        zoom_levels: cfg.zoom_levels,
        ..instance.clone()
    }))
}

/// Embeds every instance in parallel; returns how many received an embedding.
pub fn embed_instances(
    cloud: &GaussianCloud,
    table: &mut InstanceTable,
    views: &[EmbedView],
    embedder: &dyn Embedder,
    cfg: &LanguageSection,
    settings: &RasterSettings,
) -> Result<usize> {
    if table.gaussian_count != cloud.len() {
        return Err(contract("instance table belongs to a different cloud"));
    }
    let labels = &table.labels;
    let done = table
        .instances
        .par_iter()
        .map(|inst| embed_instance(cloud, labels, inst, views, embedder, cfg, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut count = 0;
    for (inst, new) in table.instances.iter_mut().zip(done) {
        match new {
            Some(n) => {
                *inst = n;
                count += 1;
            }
            None => {
                inst.embedding = None;
                inst.views.clear();
                inst.zoom_levels = 0;
            }
        }
    }
    Ok(count)
}

/// Embedded instances ranked by cosine similarity to the text, best first;
/// ties keep the lower id.
pub fn query(table: &InstanceTable, text: &str, embedder: &dyn Embedder) -> Result<Vec<(usize, f64)>> {
    if table.instances.iter().all(|i| i.embedding.is_none()) {
        return Ok(Vec::new());
    }
    let t = embedder.embed_text(text)?;
    let mut ranked: Vec<(usize, f64)> = table
        .instances
        .iter()
        .filter_map(|i| i.embedding.as_ref().map(|e| (i.id, cosine(e, &t))))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Instances selected for a query: the top one, or all at or above `threshold`.
pub fn select_instances(ranked: &[(usize, f64)], threshold: Option<f64>) -> Vec<usize> {
    match threshold {
        None => ranked.first().map(|r| r.0).into_iter().collect(),
        Some(t) => ranked.iter().filter(|r| r.1 >= t).map(|r| r.0).collect(),
    }
}

/// Best-matching label name (index into `names`) per instance; `None` for
/// unembedded instances.
pub fn assign_semantics(table: &InstanceTable, names: &[String], embedder: &dyn Embedder) -> Result<Vec<Option<usize>>> {
    let texts = names.iter().map(|n| embedder.embed_text(n)).collect::<Result<Vec<_>>>()?;
    Ok(table
        .instances
        .iter()
        .map(|inst| {
            let e = inst.embedding.as_ref()?;
            (0..texts.len()).max_by(|&a, &b| cosine(e, &texts[a]).total_cmp(&cosine(e, &texts[b])).then(b.cmp(&a)))
        })
        .collect())
}
