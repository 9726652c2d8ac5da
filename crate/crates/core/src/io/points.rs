//! Labeled point files: CSV with header `x,y,z,instance_id,semantic_id`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub instance_id: i64,
    pub semantic_id: i64,
}

pub fn read_points(path: &Path) -> Result<Vec<PointRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<PointRecord>, _>>()?;
    Ok(rows)
}

pub fn write_points(path: &Path, points: &[PointRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
