//! Synthetic scenes with known instances: colored ellipsoids and boxes made
//! of Gaussians, seen from a ring of cameras.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::distance_to_background_sq;
use crate::io::manifest::{SceneManifest, Split, View, ViewEntry};
use crate::io::points::{write_points, PointRecord};
use crate::io::{checkpoint, ply, pnm, RgbImage};
use crate::masks::InstanceMask;
use crate::raster::{render, render_instance_ids, Channels, RasterSettings};
use crate::scene::sh::rgb_to_dc;
use crate::scene::{logit, Camera, Gaussian, GaussianCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Ellipsoid,
    Box,
}

/// Flat colors with distinct hues; each scene draws a seeded subset.
pub const PALETTE: &[(&str, [f64; 3])] = &[
    ("red", [0.85, 0.12, 0.1]),
    ("green", [0.12, 0.8, 0.15]),
    ("blue", [0.1, 0.2, 0.9]),
    ("yellow", [0.9, 0.85, 0.1]),
    ("magenta", [0.85, 0.1, 0.8]),
    ("cyan", [0.1, 0.8, 0.85]),
    ("orange", [0.95, 0.5, 0.05]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub objects: usize,
    pub train_views: usize,
    pub test_views: usize,
    pub width: usize,
    pub height: usize,
    pub min_gaussians: usize,
    pub max_gaussians: usize,
    /// Typical Gaussian standard deviation in scene units.
    pub sigma: f64,
    /// Each training mask region is cut into at most this many parts.
    pub over_segment: usize,
    /// Training mask regions lose the pixels within this many pixels of
    /// their boundary.
    pub erode: f64,
    /// Fraction of ground-truth Gaussians kept as initialization points.
    pub init_fraction: f64,
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            objects: 3,
            train_views: 40,
            test_views: 8,
            width: 64,
            height: 64,
            min_gaussians: 600,
            max_gaussians: 1000,
            sigma: 0.05,
            over_segment: 1,
            erode: 0.0,
            init_fraction: 0.3,
            init_jitter: 0.02,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Parses `synth://<n>obj`, e.g. `synth://3obj`.
    pub fn from_uri(uri: &str) -> Result<Self> {
        let objects = uri
            .strip_prefix("synth://")
            .and_then(|r| r.strip_suffix("obj"))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::InvalidParameter(format!("not a synthetic scene uri: {uri:?} (expected synth://<n>obj)")))?;
        Ok(Self {
            objects,
            ..Self::default()
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.objects == 0 || self.objects > PALETTE.len() {
            return bad(format!("object count must be in 1..={}, got {}", PALETTE.len(), self.objects));
        }
        if self.train_views == 0 || self.width == 0 || self.height == 0 {
            return bad("need at least one training view and a non-empty image".into());
        }
        if self.min_gaussians == 0 || self.min_gaussians > self.max_gaussians {
            return bad(format!("bad Gaussian count range {}..={}", self.min_gaussians, self.max_gaussians));
        }
        if self.over_segment == 0 {
            return bad("over_segment must be >= 1".into());
        }
        if !(self.sigma > 0.0) || !(0.0..=1.0).contains(&self.init_fraction) || !(self.init_jitter >= 0.0) || !(self.erode >= 0.0) {
            return bad("sigma must be positive, init_fraction in [0, 1], jitter and erosion >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub color_name: String,
    pub color: [f64; 3],
    /// Index into [`PALETTE`]; used as the semantic id.
    pub semantic_id: usize,
    pub shape: Shape,
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
}

impl SynthObject {
    pub fn name(&self) -> String {
        let shape = match self.shape {
            Shape::Ellipsoid => "ellipsoid",
            Shape::Box => "box",
        };
        format!("{} {shape}", self.color_name)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SynthSpec,
    pub objects: Vec<SynthObject>,
    /// Ground-truth cloud; `labels[g]` is the object of Gaussian `g`.
    pub cloud: GaussianCloud,
    pub labels: Vec<i64>,
    pub views: Vec<View>,
    pub init_points: Vec<[f64; 3]>,
    pub init_colors: Vec<[f64; 3]>,
}

fn quantize8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Ring of cameras around the origin with z up. Training views alternate
/// between two heights; test views sit halfway between them.
pub fn camera_ring(spec: &SynthSpec) -> Result<Vec<(Camera, Split)>> {
    let f = 0.5 * spec.width as f64 / (22.5f64).to_radians().tan();
    let radius = 4.0;
    let mut out = Vec::new();
    let mut push = |id: usize, angle: f64, z: f64, split| -> Result<()> {
        let eye = [radius * angle.cos(), radius * angle.sin(), z];
        let cam = Camera::look_at(id, eye, [0.0; 3], [0.0, 0.0, 1.0], spec.width, spec.height, f, f)?;
        out.push((cam, split));
        Ok(())
    };
    let n = spec.train_views as f64;
    for k in 0..spec.train_views {
        push(k, std::f64::consts::TAU * k as f64 / n, if k % 2 == 0 { 1.2 } else { 2.2 }, Split::Train)?;
    }
    let t = spec.test_views.max(1) as f64;
    for k in 0..spec.test_views {
        let angle = std::f64::consts::TAU * (k as f64 + 0.5) / t;
        push(spec.train_views + k, angle, 1.7, Split::Test)?;
    }
    Ok(out)
}

fn place_objects(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<SynthObject> {
    let mut colors: Vec<usize> = (0..PALETTE.len()).collect();
    colors.shuffle(rng);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..spec.objects)
        .map(|k| {
            let angle = phase + std::f64::consts::TAU * k as f64 / spec.objects as f64;
            let r = if spec.objects == 1 { 0.0 } else { 0.9 };
            let (name, color) = PALETTE[colors[k]];
            SynthObject {
                color_name: name.to_string(),
                color,
                semantic_id: colors[k],
                shape: if k % 2 == 0 { Shape::Ellipsoid } else { Shape::Box },
                center: [r * angle.cos(), r * angle.sin(), 0.0],
                half_extent: [0; 3].map(|_| rng.random_range(0.2..0.32)),
            }
        })
        .collect()
}

fn sample_inside(obj: &SynthObject, rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let u = [0; 3].map(|_| rng.random_range(-1.0..1.0f64));
        if obj.shape == Shape::Box || u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return [0, 1, 2].map(|a| obj.center[a] + u[a] * obj.half_extent[a]);
        }
    }
}

/// Cuts every region of the id map into at most `parts` pieces along a
/// random direction; the union of each region is preserved.
pub fn over_segment(mask: &InstanceMask, parts: usize, rng: &mut ChaCha8Rng) -> InstanceMask {
    if parts <= 1 {
        return mask.clone();
    }
    let w = mask.width;
    let count = mask.ids.iter().copied().max().unwrap_or(0) as usize;
    let mut ids = vec![0u16; mask.ids.len()];
    let mut next = 1u16;
    for id in 1..=count as u16 {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let mut pix: Vec<(f64, usize)> = (0..mask.ids.len())
            .filter(|&i| mask.ids[i] == id)
            .map(|i| (((i % w) as f64) * theta.cos() + ((i / w) as f64) * theta.sin(), i))
            .collect();
        if pix.is_empty() {
            continue;
        }
        pix.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = parts.min(pix.len());
        for (rank, &(_, i)) in pix.iter().enumerate() {
            ids[i] = next + (rank * k / pix.len()) as u16;
        }
        next += k as u16;
    }
    InstanceMask {
        width: mask.width,
        height: mask.height,
        ids,
    }
}

/// Removes the pixels of each region within `radius` of its boundary.
pub fn erode_regions(mask: &InstanceMask, radius: f64) -> InstanceMask {
    if radius <= 0.0 {
        return mask.clone();
    }
    let mut ids = mask.ids.clone();
    let count = mask.ids.iter().copied().max().unwrap_or(0);
    for id in 1..=count {
        let region = mask.binary(id);
        let d = distance_to_background_sq(&region, mask.width, mask.height);
        for i in 0..ids.len() {
            if region[i] && d[i] <= radius * radius {
                ids[i] = 0;
            }
        }
    }
    InstanceMask {
        width: mask.width,
        height: mask.height,
        ids,
    }
}

/// Builds the scene. Images are quantized to 8 bits so the in-memory scene
/// equals what [`SyntheticScene::write`] stores.
pub fn generate(spec: &SynthSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects = place_objects(spec, &mut rng);
    let mut cloud = GaussianCloud::new(0, 1)?;
    let mut labels = Vec::new();
    for (k, obj) in objects.iter().enumerate() {
        let n = rng.random_range(spec.min_gaussians..=spec.max_gaussians);
        for _ in 0..n {
            let mean = sample_inside(obj, &mut rng);
            let s = spec.sigma * rng.random_range(0.8..1.2);
            cloud.push(Gaussian {
                mean,
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: [s.ln(); 3],
                opacity_logit: logit(0.95),
                sh: obj.color.map(rgb_to_dc).to_vec(),
                feature: vec![0.0],
            })?;
            labels.push(k as i64);
        }
    }

    let jitter = Normal::new(0.0, spec.init_jitter.max(f64::MIN_POSITIVE)).expect("positive deviation");
    let mut init_points = Vec::new();
    let mut init_colors = Vec::new();
    for g in 0..cloud.len() {
        if rng.random::<f64>() < spec.init_fraction {
            let p = cloud.means[g];
            init_points.push(if spec.init_jitter > 0.0 { p.map(|v| v + jitter.sample(&mut rng)) } else { p });
            init_colors.push(objects[labels[g] as usize].color.map(quantize8));
        }
    }

    let settings = RasterSettings::default();
    let mut views = Vec::new();
    for (cam, split) in camera_ring(spec)? {
        let out = render(&cloud, &cam, Channels::COLOR, &settings)?;
        let image = RgbImage::new(cam.width, cam.height, out.color.expect("color requested").into_iter().map(quantize8).collect())?;
        let ids = render_instance_ids(&cloud, &labels, objects.len(), &cam, 0.5, &settings)?;
        let gt = InstanceMask::new(
            cam.width,
            cam.height,
            ids.iter().map(|id| id.map_or(0, |i| i as u16 + 1)).collect(),
        )?;
        let train_mask = over_segment(&erode_regions(&gt, spec.erode), spec.over_segment, &mut rng).normalized();
        views.push(View {
            camera: cam,
            image,
            mask: Some(train_mask),
            gt_mask: Some(gt),
            split,
        });
    }
    Ok(SyntheticScene {
        spec: spec.clone(),
        objects,
        cloud,
        labels,
        views,
        init_points,
        init_colors,
    })
}

impl SyntheticScene {
    /// Ground-truth Gaussian means with their instance and semantic ids.
    pub fn gt_points(&self) -> Vec<PointRecord> {
        self.cloud
            .means
            .iter()
            .zip(&self.labels)
            .map(|(p, &l)| PointRecord {
                x: p[0],
                y: p[1],
                z: p[2],
                instance_id: l,
                semantic_id: self.objects[l as usize].semantic_id as i64,
            })
            .collect()
    }

    /// Writes images, masks, points and a manifest into `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["images", "masks", "gt_masks"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let mut entries = Vec::new();
        for v in &self.views {
            let stem = format!(
                "{}_{:03}",
                if v.split == Split::Train { "train" } else { "test" },
                v.camera.view_id
            );
            let image = format!("images/{stem}.ppm");
            fs::write(dir.join(&image), pnm::encode_ppm(v.image.width, v.image.height, &v.image.data))?;
            let write_mask = |sub: &str, m: &InstanceMask| -> Result<String> {
                let rel = format!("{sub}/{stem}.pgm");
                pnm::write_pgm16(&dir.join(&rel), m.width, m.height, &m.ids)?;
                Ok(rel)
            };
            entries.push(ViewEntry {
                image,
                mask: v.mask.as_ref().map(|m| write_mask("masks", m)).transpose()?,
                gt_mask: v.gt_mask.as_ref().map(|m| write_mask("gt_masks", m)).transpose()?,
                camera: v.camera.clone(),
                split: v.split,
            });
        }
        ply::write(&dir.join("init.ply"), &ply::colored_points(&self.init_points, &self.init_colors))?;
        write_points(&dir.join("gt_points.csv"), &self.gt_points())?;
        checkpoint::save(&dir.join("gt_cloud.osp"), &self.cloud)?;
        fs::write(dir.join("objects.json"), serde_json::to_vec_pretty(&self.objects)?)?;
        let manifest = SceneManifest {
            name: format!("synth-{}obj-seed{}", self.spec.objects, self.spec.seed),
            views: entries,
            init_points: Some("init.ply".into()),
            gt_points: Some("gt_points.csv".into()),
            semantic_names: PALETTE.iter().map(|(n, _)| format!("{n} object")).collect(),
        };
        let path = dir.join("manifest.json");
        manifest.write(&path)?;
        Ok(path)
    }
}
