//! CSV writers for training reports, density diagnostics and error fields.

use std::fmt::Write as _;
use std::path::Path;

use super::{DensitySnapshot, IterationRecord, Reference};
use crate::error::{check_dim, Result};

pub const REPORT_COLUMNS: [&str; 7] = ["iter", "loss", "rel_l2", "eta", "nnz_frac", "kl_uniform", "wall_ms"];

/// Missing relative errors are written as empty fields.
pub fn write_report_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut s = REPORT_COLUMNS.join(",");
    s.push('\n');
    for r in records {
        let rel = r.rel_l2.map(|v| format!("{v:.16e}")).unwrap_or_default();
        writeln!(
            s,
            "{},{:.16e},{rel},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.iter, r.loss, r.eta, r.nnz_frac, r.kl_uniform, r.wall_ms
        )
        .expect("string write");
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// One row per ball per snapshot: `iter,kl_uniform,ball,c_0..c_{d-1},radius,mass`.
pub fn write_density_csv(path: &Path, snapshots: &[DensitySnapshot]) -> Result<()> {
    let d = snapshots.first().and_then(|s| s.balls.first()).map_or(0, |b| b.center.len());
    let mut s = String::from("iter,kl_uniform,ball");
    for k in 0..d {
        write!(s, ",c_{k}").expect("string write");
    }
    s.push_str(",radius,mass\n");
    for snap in snapshots {
        for (j, b) in snap.balls.iter().enumerate() {
            write!(s, "{},{:.16e},{j}", snap.iter, snap.kl_uniform).expect("string write");
            for c in &b.center {
                write!(s, ",{c:.16e}").expect("string write");
            }
            writeln!(s, ",{:.16e},{:.16e}", b.radius, b.mass).expect("string write");
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// `a,b,u,u_ref,err` with `err = u − u_ref`.
pub fn write_error_csv(path: &Path, axes: [&str; 2], reference: &Reference, pred: &[f64]) -> Result<()> {
    check_dim(reference.values.len(), pred.len())?;
    let mut s = format!("{},{},u,u_ref,err\n", axes[0], axes[1]);
    for ((x, u), r) in reference.points.iter().zip(pred).zip(&reference.values) {
        writeln!(s, "{:.16e},{:.16e},{u:.16e},{r:.16e},{:.16e}", x[0], x[1], u - r).expect("string write");
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::BallSnapshot;
    use super::*;
    use crate::geometry::PointSet;

    #[test]
    fn report_has_fixed_header_and_blank_missing_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let rec = IterationRecord {
            iter: 0,
            loss: 0.5,
            rel_l2: None,
            eta: 1e-3,
            nnz_frac: 0.25,
            kl_uniform: 0.1,
            wall_ms: 0.0,
            train_loss_before: 1.0,
            train_loss_after: 0.5,
            lm_accepted: true,
            lm_solves: 1,
            ascent_accepted: 0,
        };
        write_report_csv(&path, &[rec]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,loss,rel_l2,eta,nnz_frac,kl_uniform,wall_ms");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 7);
        assert_eq!(row[2], "");
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.5);
    }

    #[test]
    fn density_rows_per_ball() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("density.csv");
        let ball = |r| BallSnapshot { center: vec![0.1, 0.2], radius: r, mass: 0.3 };
        let snaps = [DensitySnapshot { iter: 4, kl_uniform: 0.01, balls: vec![ball(0.5), ball(0.6)] }];
        write_density_csv(&path, &snaps).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,kl_uniform,ball,c_0,c_1,radius,mass");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("4,1.0000000000000000e-2,1,"));
    }

    #[test]
    fn error_field_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("err.csv");
        let reference = Reference { points: PointSet::from_points(2, &[[0.0, 1.0]]).unwrap(), values: vec![2.0] };
        write_error_csv(&path, ["x", "t"], &reference, &[2.5]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,t,u,u_ref,err\n"));
        assert!(text.trim_end().ends_with("5.0000000000000000e-1"));
    }
}
