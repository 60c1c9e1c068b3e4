//! Three-column `a,b,u` grid files at 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointSet;

pub fn write_grid_csv(path: &Path, axes: [&str; 2], points: &PointSet, values: &[f64]) -> Result<()> {
    crate::error::check_dim(points.len(), values.len())?;
    crate::error::check_dim(2, points.dim())?;
    let mut s = format!("{},{},u\n", axes[0], axes[1]);
    for (p, v) in points.iter().zip(values) {
        writeln!(s, "{:.16e},{:.16e},{:.16e}", p[0], p[1], v).expect("string write");
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_grid_csv(path: &Path) -> Result<(PointSet, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Csv(format!("{}: empty file", path.display())))?;
    if header.split(',').count() != 3 {
        return Err(Error::Csv(format!("{}: expected 3 columns, header {header:?}", path.display())));
    }
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Csv(format!("{} line {}: {e}", path.display(), i + 2)))?;
        if fields.len() != 3 {
            return Err(Error::Csv(format!("{} line {}: expected 3 fields", path.display(), i + 2)));
        }
        coords.extend_from_slice(&fields[..2]);
        values.push(fields[2]);
    }
    Ok((PointSet::from_flat(2, coords)?, values))
}
