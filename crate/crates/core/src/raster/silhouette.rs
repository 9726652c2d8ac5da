use super::forward::render_values;
use super::RasterSettings;
use crate::error::{contract, Error, Result};
use crate::scene::{Camera, GaussianCloud};

fn check_labels(cloud: &GaussianCloud, labels: &[i64]) -> Result<()> {
    if labels.len() != cloud.len() {
        return Err(contract(format!(
            "{} labels for {} Gaussians",
            labels.len(),
            cloud.len()
        )));
    }
    Ok(())
}

/// Binary mask of the pixels covered by the Gaussians labeled `instance`.
///
/// With `respect_occlusion` the whole scene is composited with value 1 for
/// members and 0 for everything else, so foreground objects hide the
/// instance. Without it the members are rendered alone and their accumulated
/// alpha is thresholded.
pub fn render_instance_silhouette(
    cloud: &GaussianCloud,
    labels: &[i64],
    instance: i64,
    cam: &Camera,
    respect_occlusion: bool,
    threshold: f64,
    settings: &RasterSettings,
) -> Result<Vec<bool>> {
    check_labels(cloud, labels)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "silhouette threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let members: Vec<bool> = labels.iter().map(|&l| l == instance).collect();
    if !members.contains(&true) {
        return Err(Error::EmptySelection(format!("instance {instance} has no Gaussians")));
    }
    if respect_occlusion {
        let values: Vec<f64> = members.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let out = render_values(cloud, cam, &values, 1, None, settings)?;
        let comp = out.feature.expect("render_values fills the feature map");
        Ok(comp.iter().map(|&v| v >= threshold).collect())
    } else {
        let values = vec![0.0; cloud.len()];
        let out = render_values(cloud, cam, &values, 1, Some(&members), settings)?;
        Ok(out.alpha.iter().map(|&a| a >= threshold).collect())
    }
}

/// Per-pixel instance id: the label with the largest composited weight, or
/// `None` where the accumulated alpha is below `min_alpha`. Labels must lie
/// in `-1..count`; `-1` (noise) never wins a pixel.
pub fn render_instance_ids(
    cloud: &GaussianCloud,
    labels: &[i64],
    count: usize,
    cam: &Camera,
    min_alpha: f64,
    settings: &RasterSettings,
) -> Result<Vec<Option<usize>>> {
    check_labels(cloud, labels)?;
    if let Some(&bad) = labels.iter().find(|&&l| l < -1 || l >= count as i64) {
        return Err(contract(format!("label {bad} outside -1..{count}")));
    }
    if count == 0 {
        return Ok(vec![None; cam.pixel_count()]);
    }
    let mut values = vec![0.0; cloud.len() * count];
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            values[i * count + l as usize] = 1.0;
        }
    }
    let out = render_values(cloud, cam, &values, count, None, settings)?;
    let comp = out.feature.expect("render_values fills the feature map");
    Ok((0..cam.pixel_count())
        .map(|p| {
            if out.alpha[p] < min_alpha {
                return None;
            }
            let row = &comp[p * count..(p + 1) * count];
            let mut best = 0;
            for k in 1..count {
                if row[k] > row[best] {
                    best = k;
                }
            }
            (row[best] > 0.0).then_some(best)
        })
        .collect())
}
