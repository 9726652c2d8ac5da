//! ASCII PLY vertex tables (x, y, z plus arbitrary scalar properties).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::scene::{sh_bases, GaussianCloud};

/// Vertex properties by name, one row per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyTable {
    pub properties: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlyTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn positions(&self) -> Result<Vec<[f64; 3]>> {
        let idx = ["x", "y", "z"].map(|n| self.column_index(n));
        let [Some(x), Some(y), Some(z)] = idx else {
            return Err(Error::Format("PLY lacks x, y, z properties".into()));
        };
        Ok(self.rows.iter().map(|r| [r[x], r[y], r[z]]).collect())
    }

    /// Per-vertex RGB in `[0, 1]` from `red/green/blue` properties, if present.
    pub fn colors(&self) -> Option<Vec<[f64; 3]>> {
        let idx = ["red", "green", "blue"].map(|n| self.column_index(n));
        let [Some(r), Some(g), Some(b)] = idx else {
            return None;
        };
        // Integer-valued colors above 1 are 8-bit.
        let eight_bit = self.rows.iter().any(|row| row[r] > 1.0 || row[g] > 1.0 || row[b] > 1.0);
        let s = if eight_bit { 1.0 / 255.0 } else { 1.0 };
        Some(self.rows.iter().map(|row| [row[r] * s, row[g] * s, row[b] * s]).collect())
    }
}

pub fn parse(text: &str) -> Result<PlyTable> {
    let bad = |m: String| Error::Format(format!("PLY: {m}"));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing magic".into()));
    }
    let mut count = None;
    let mut properties = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or_else(|| bad("missing end_header".into()))?.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", f, ..] => return Err(bad(format!("unsupported format {f}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n}")))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => return Err(bad("list properties on vertices".into())),
            ["property", _ty, name] => {
                if in_vertex {
                    properties.push(name.to_string());
                }
            }
            ["property", ..] => {}
            _ => return Err(bad(format!("unexpected header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let line = lines.next().ok_or_else(|| bad(format!("expected {count} vertices, found {i}")))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| bad(format!("bad number `{w}` in vertex {i}"))))
            .collect::<Result<_>>()?;
        if row.len() != properties.len() {
            return Err(bad(format!("vertex {i} has {} values, expected {}", row.len(), properties.len())));
        }
        rows.push(row);
    }
    Ok(PlyTable { properties, rows })
}

pub fn render_text(table: &PlyTable) -> Result<String> {
    if table.rows.iter().any(|r| r.len() != table.properties.len()) {
        return Err(contract("PLY row length differs from the property count"));
    }
    let mut s = String::new();
    writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", table.rows.len()).unwrap();
    for p in &table.properties {
        writeln!(s, "property double {p}").unwrap();
    }
    s.push_str("end_header\n");
    for row in &table.rows {
        let words: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&words.join(" "));
        s.push('\n');
    }
    Ok(s)
}

pub fn read(path: &Path) -> Result<PlyTable> {
    parse(&fs::read_to_string(path)?)
}

pub fn write(path: &Path, table: &PlyTable) -> Result<()> {
    fs::write(path, render_text(table)?)?;
    Ok(())
}

/// Points with 8-bit colors, as used for initialization.
pub fn colored_points(points: &[[f64; 3]], colors: &[[f64; 3]]) -> PlyTable {
    let properties = ["x", "y", "z", "red", "green", "blue"].map(String::from).to_vec();
    let rows = points
        .iter()
        .zip(colors)
        .map(|(p, c)| {
            let mut r = p.to_vec();
            r.extend(c.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round()));
            r
        })
        .collect();
    PlyTable { properties, rows }
}

/// Every cloud parameter as vertex properties, with optional instance labels.
pub fn cloud_table(cloud: &GaussianCloud, labels: Option<&[i64]>) -> PlyTable {
    let nb = sh_bases(cloud.sh_degree());
    let mut properties: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
    properties.extend((0..4).map(|i| format!("rot_{i}")));
    properties.extend((0..3).map(|i| format!("scale_{i}")));
    properties.push("opacity".into());
    for ch in 0..3 {
        properties.extend((0..nb).map(|b| format!("sh_{ch}_{b}")));
    }
    properties.extend((0..cloud.feature_dim()).map(|k| format!("feature_{k}")));
    if labels.is_some() {
        properties.push("instance".into());
    }
    let rows = (0..cloud.len())
        .map(|i| {
            let mut r = cloud.means[i].to_vec();
            r.extend_from_slice(&cloud.rotations[i]);
            r.extend_from_slice(&cloud.log_scales[i]);
            r.push(cloud.opacity_logits[i]);
            r.extend_from_slice(cloud.sh(i));
            r.extend_from_slice(cloud.feature(i));
            if let Some(l) = labels {
                r.push(l[i] as f64);
            }
            r
        })
        .collect();
    PlyTable { properties, rows }
}
