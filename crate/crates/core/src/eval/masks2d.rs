//! 2D mask metrics: IoU, boundary IoU, thresholded accuracy and the
//! observer selection rule.

use crate::error::{contract, Error, Result};

/// IoU of two binary masks; two empty masks agree perfectly.
pub fn iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(contract(format!("masks of {} and {} pixels", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

const FAR: f64 = 1e20;

/// Exact 1D squared distance transform (lower envelope of parabolas).
fn dt1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    v.resize(n, 0);
    z.clear();
    z.resize(n + 1, 0.0);
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let parabola = |q: usize| f[q] + (q * q) as f64;
    for q in 1..n {
        let mut s = (parabola(q) - parabola(v[k])) / (2.0 * (q - v[k]) as f64);
        while s <= z[k] {
            k -= 1;
            s = (parabola(q) - parabola(v[k])) / (2.0 * (q - v[k]) as f64);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        *o = (q as f64 - v[k] as f64).powi(2) + f[v[k]];
    }
}

/// Squared Euclidean distance from each pixel to the nearest background
/// pixel, where everything outside the image counts as background.
pub fn distance_to_background_sq(mask: &[bool], width: usize, height: usize) -> Vec<f64> {
    let (pw, ph) = (width + 2, height + 2);
    let mut grid = vec![0.0; pw * ph];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                grid[(y + 1) * pw + x + 1] = FAR;
            }
        }
    }
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut col = vec![0.0; ph];
    let mut out = vec![0.0; ph];
    for x in 0..pw {
        for y in 0..ph {
            col[y] = grid[y * pw + x];
        }
        dt1d(&col, &mut out, &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    let mut row = vec![0.0; pw];
    let mut out = vec![0.0; pw];
    let mut res = vec![0.0; width * height];
    for y in 1..=height {
        row.copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        dt1d(&row, &mut out, &mut v, &mut z);
        res[(y - 1) * width..y * width].copy_from_slice(&out[1..=width]);
    }
    res
}

/// Mask pixels within `radius` of the background: the mask minus its
/// erosion by a disk of that radius.
pub fn boundary_band(mask: &[bool], width: usize, height: usize, radius: f64) -> Vec<bool> {
    let d = distance_to_background_sq(mask, width, height);
    mask.iter().zip(&d).map(|(&m, &d)| m && d <= radius * radius).collect()
}

pub fn boundary_radius(width: usize, height: usize, ratio: f64) -> f64 {
    ratio * ((width * width + height * height) as f64).sqrt()
}

/// Boundary IoU with the band radius given as a fraction of the image diagonal.
pub fn boundary_iou(a: &[bool], b: &[bool], width: usize, height: usize, ratio: f64) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height {
        return Err(contract("mask does not match the image size"));
    }
    let r = boundary_radius(width, height, ratio);
    iou(&boundary_band(a, width, height, r), &boundary_band(b, width, height, r))
}

/// Per-query binary masks of one image size.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair<'a> {
    pub width: usize,
    pub height: usize,
    pub pred: &'a [bool],
    pub gt: &'a [bool],
}

/// Mean IoU and mean boundary IoU over queries.
pub fn miou_biou(pairs: &[MaskPair], boundary_ratio: f64) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Undefined("mean IoU over zero queries".into()));
    }
    let (mut m, mut b) = (0.0, 0.0);
    for p in pairs {
        m += iou(p.pred, p.gt)?;
        b += boundary_iou(p.pred, p.gt, p.width, p.height, boundary_ratio)?;
    }
    Ok((m / pairs.len() as f64, b / pairs.len() as f64))
}

/// Fraction of queries whose IoU strictly exceeds `threshold`.
pub fn macc_at(ious: &[f64], threshold: f64) -> Result<f64> {
    if ious.is_empty() {
        return Err(Error::Undefined("accuracy over zero queries".into()));
    }
    Ok(ious.iter().filter(|&&v| v > threshold).count() as f64 / ious.len() as f64)
}

/// Instances whose rendered region overlaps the proposal and is covered by
/// it to at least `threshold` (intersection over the instance's area).
pub fn observer_select(id_map: &[Option<usize>], proposal: &[bool], threshold: f64) -> Result<Vec<usize>> {
    if id_map.len() != proposal.len() {
        return Err(contract("proposal does not match the id map"));
    }
    let count = id_map.iter().flatten().max().map_or(0, |&m| m + 1);
    let mut area = vec![0usize; count];
    let mut inter = vec![0usize; count];
    for (id, &p) in id_map.iter().zip(proposal) {
        if let Some(i) = *id {
            area[i] += 1;
            inter[i] += p as usize;
        }
    }
    Ok((0..count)
        .filter(|&i| inter[i] > 0 && inter[i] as f64 / area[i] as f64 >= threshold)
        .collect())
}

/// Union of the pixels of the selected instances.
pub fn selection_mask(id_map: &[Option<usize>], selected: &[usize]) -> Vec<bool> {
    id_map.iter().map(|id| id.is_some_and(|i| selected.contains(&i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(w: usize, h: usize, x0: usize, y0: usize, s: usize) -> Vec<bool> {
        (0..w * h).map(|i| (x0..x0 + s).contains(&(i % w)) && (y0..y0 + s).contains(&(i / w))).collect()
    }

    fn pair<'a>(w: usize, h: usize, pred: &'a [bool], gt: &'a [bool]) -> MaskPair<'a> {
        MaskPair { width: w, height: h, pred, gt }
    }

    #[test]
    fn iou_examples() {
        let a = square(40, 40, 5, 5, 10);
        let b = square(40, 40, 10, 5, 10);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let far = square(40, 40, 25, 25, 10);
        assert_eq!(miou_biou(&[pair(40, 40, &a, &a)], 0.02).unwrap(), (1.0, 1.0));
        assert_eq!(miou_biou(&[pair(40, 40, &a, &far)], 0.02).unwrap(), (0.0, 0.0));
        let empty = vec![false; 1600];
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou(&a, &empty).unwrap(), 0.0);
        assert!(iou(&a, &empty[..3]).is_err());
        assert!(miou_biou(&[], 0.02).is_err());
    }

    #[test]
    fn band_of_a_square() {
        let m = square(20, 20, 5, 5, 8);
        let band = boundary_band(&m, 20, 20, 1.0);
        // A radius-1 band is the outer ring of the square.
        assert_eq!(band.iter().filter(|&&b| b).count(), 8 * 8 - 6 * 6);
        let band2 = boundary_band(&m, 20, 20, 2.0);
        assert_eq!(band2.iter().filter(|&&b| b).count(), 8 * 8 - 4 * 4);
        // The image border is background.
        let full = vec![true; 100];
        assert_eq!(boundary_band(&full, 10, 10, 1.0).iter().filter(|&&b| b).count(), 100 - 64);
    }

    fn brute_dist(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
        let (w, h) = (w as i64, h as i64);
        (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let mut best = f64::INFINITY;
                for by in -1..=h {
                    for bx in -1..=w {
                        let inside = (0..w).contains(&bx) && (0..h).contains(&by);
                        if !inside || !mask[(by * w + bx) as usize] {
                            best = best.min(((bx - x).pow(2) + (by - y).pow(2)) as f64);
                        }
                    }
                }
                best
            })
            .collect()
    }

    proptest! {
        #[test]
        fn distance_transform_matches_brute_force(w in 1usize..12, h in 1usize..12, bits in prop::collection::vec(any::<bool>(), 144)) {
            let mask = &bits[..w * h];
            prop_assert_eq!(distance_to_background_sq(mask, w, h), brute_dist(mask, w, h));
        }

        #[test]
        fn iou_is_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 64), b in prop::collection::vec(any::<bool>(), 64)) {
            let (m1, b1) = miou_biou(&[pair(8, 8, &a, &b)], 0.1).unwrap();
            let (m2, b2) = miou_biou(&[pair(8, 8, &b, &a)], 0.1).unwrap();
            prop_assert_eq!((m1, b1), (m2, b2));
            prop_assert!((0.0..=1.0).contains(&m1) && (0.0..=1.0).contains(&b1));
        }
    }

    #[test]
    fn macc_examples() {
        assert_eq!(macc_at(&[1.0, 1.0], 0.25).unwrap(), 1.0);
        assert_eq!(macc_at(&[0.3, 0.2], 0.25).unwrap(), 0.5);
        assert_eq!(macc_at(&[0.0, 0.0], 0.25).unwrap(), 0.0);
        assert_eq!(macc_at(&[0.25], 0.25).unwrap(), 0.0);
        assert!(matches!(macc_at(&[], 0.25), Err(Error::Undefined(_))));
    }

    #[test]
    fn observer_examples() {
        // Instance 0 on the left half, instance 1 on the right half.
        let ids: Vec<Option<usize>> = (0..16).map(|i| Some(usize::from(i % 4 >= 2))).collect();
        let left: Vec<bool> = ids.iter().map(|&i| i == Some(0)).collect();
        assert_eq!(observer_select(&ids, &left, 0.75).unwrap(), vec![0]);
        let half_of_left: Vec<bool> = (0..16).map(|i| i % 4 == 0).collect();
        assert!(observer_select(&ids, &half_of_left, 0.6).unwrap().is_empty());
        let overlap_both: Vec<bool> = (0..16).map(|i| i % 4 == 1 || i % 4 == 2).collect();
        assert_eq!(observer_select(&ids, &overlap_both, 0.0).unwrap(), vec![0, 1]);
        assert!(observer_select(&ids, &[false; 16], 0.0).unwrap().is_empty());
        assert_eq!(selection_mask(&ids, &[0]), left);
    }
}
