//! Scene manifests: a JSON file listing each view's image, instance mask
//! and camera, plus optional point files. Paths are relative to the
//! manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::io::{load_image, RgbImage};
use crate::masks::{load_id_map, load_view_masks, InstanceMask};
use crate::scene::Camera;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub image: String,
    /// Training instance masks (e.g. combined SAM proposals).
    #[serde(default)]
    pub mask: Option<String>,
    /// Ground-truth instance masks for evaluation.
    #[serde(default)]
    pub gt_mask: Option<String>,
    pub camera: Camera,
    #[serde(default)]
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub name: String,
    pub views: Vec<ViewEntry>,
    /// Colored PLY used to initialize training.
    #[serde(default)]
    pub init_points: Option<String>,
    /// Labeled ground-truth points (CSV).
    #[serde(default)]
    pub gt_points: Option<String>,
    /// Text name of each semantic id in the ground truth.
    #[serde(default)]
    pub semantic_names: Vec<String>,
}

/// One view with its decoded files.
#[derive(Clone, Debug)]
pub struct View {
    pub camera: Camera,
    pub image: RgbImage,
    pub mask: Option<InstanceMask>,
    pub gt_mask: Option<InstanceMask>,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub manifest: SceneManifest,
    pub dir: PathBuf,
    pub views: Vec<View>,
}

impl LoadedScene {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &View> {
        self.views.iter().filter(move |v| v.split == split)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }
}

impl SceneManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn check_mask(mask: &InstanceMask, cam: &Camera, what: &str) -> Result<()> {
    if mask.width != cam.width || mask.height != cam.height {
        return Err(contract(format!(
            "{what} is {}x{}, camera {} is {}x{}",
            mask.width, mask.height, cam.view_id, cam.width, cam.height
        )));
    }
    Ok(())
}

/// Reads the manifest and every referenced image and mask.
pub fn load_scene(path: &Path) -> Result<LoadedScene> {
    let manifest = SceneManifest::read(path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if manifest.views.is_empty() {
        return Err(Error::Format(format!("{} lists no views", path.display())));
    }
    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        entry.camera.validate()?;
        let image = load_image(&dir.join(&entry.image))?;
        if image.width != entry.camera.width || image.height != entry.camera.height {
            return Err(contract(format!(
                "image {} does not match its camera size",
                entry.image
            )));
        }
        let mask = entry.mask.as_ref().map(|m| load_view_masks(&dir.join(m))).transpose()?;
        let gt_mask = entry.gt_mask.as_ref().map(|m| load_id_map(&dir.join(m))).transpose()?;
        if let Some(m) = &mask {
            check_mask(m, &entry.camera, "mask")?;
        }
        if let Some(m) = &gt_mask {
            check_mask(m, &entry.camera, "ground-truth mask")?;
        }
        views.push(View {
            camera: entry.camera.clone(),
            image,
            mask,
            gt_mask,
            split: entry.split,
        });
    }
    Ok(LoadedScene { manifest, dir, views })
}
