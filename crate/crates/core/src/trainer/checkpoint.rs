//! Versioned plain-text model checkpoints.
//!
//! ```text
//! pinn-balls-checkpoint 1
//! mlp <input_dim> <output_dim> <activation> <hidden widths…>
//! bounds <min> <max>
//! balls <M>
//! ball <center…> <radius>          (M lines)
//! expert <values…>                 (M lines)
//! ```
//!
//! Reals are written with 17 significant digits so a round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::mlp::{Activation, MlpSpec};
use crate::partition::{Ball, Partition, RadiusBounds};

pub const CHECKPOINT_HEADER: &str = "pinn-balls-checkpoint 1";

fn real(s: &mut String, v: f64) {
    write!(s, " {v:.16e}").expect("string write");
}

pub fn write_checkpoint(model: &EnsembleModel) -> String {
    let mlp = &model.mlp;
    let mut s = format!("{CHECKPOINT_HEADER}\nmlp {} {} {}", mlp.input_dim, mlp.output_dim, mlp.activation.name());
    for w in &mlp.hidden_widths {
        write!(s, " {w}").expect("string write");
    }
    s.push_str("\nbounds");
    real(&mut s, model.partition.bounds.min);
    real(&mut s, model.partition.bounds.max);
    writeln!(s, "\nballs {}", model.n_balls()).expect("string write");
    for b in &model.partition.balls {
        s.push_str("ball");
        for &c in &b.center {
            real(&mut s, c);
        }
        real(&mut s, b.radius);
        s.push('\n');
    }
    for j in 0..model.n_balls() {
        s.push_str("expert");
        for &v in model.expert(j) {
            real(&mut s, v);
        }
        s.push('\n');
    }
    s
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

fn parse_reals(fields: &[&str], line: usize) -> Result<Vec<f64>> {
    fields.iter().map(|f| f.parse::<f64>().map_err(|e| bad(line, format!("{f:?}: {e}")))).collect()
}

fn parse_usize(f: Option<&&str>, line: usize) -> Result<usize> {
    let f = f.ok_or_else(|| bad(line, "missing integer"))?;
    f.parse().map_err(|e| bad(line, format!("{f:?}: {e}")))
}

pub fn read_checkpoint(text: &str) -> Result<EnsembleModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()));
    let mut next = |tag: &str| -> Result<(usize, Vec<&str>)> {
        let (n, f) = lines.next().ok_or_else(|| Error::Checkpoint(format!("missing `{tag}` line")))?;
        if f.first() != Some(&tag) {
            return Err(bad(n, format!("expected `{tag}`")));
        }
        Ok((n, f[1..].to_vec()))
    };
    let (n, version) = next("pinn-balls-checkpoint")?;
    if version != ["1"] {
        return Err(bad(n, format!("unsupported version {version:?}")));
    }
    let (n, f) = next("mlp")?;
    let input_dim = parse_usize(f.first(), n)?;
    let output_dim = parse_usize(f.get(1), n)?;
    let activation = f
        .get(2)
        .and_then(|a| Activation::parse(a))
        .ok_or_else(|| bad(n, "unknown activation"))?;
    let hidden = f[3..].iter().map(|w| parse_usize(Some(w), n)).collect::<Result<Vec<_>>>()?;
    let mlp = MlpSpec::new(input_dim, hidden, output_dim, activation).map_err(|e| bad(n, e))?;
    let (n, f) = next("bounds")?;
    let b = parse_reals(&f, n)?;
    if b.len() != 2 {
        return Err(bad(n, "expected min and max radius"));
    }
    let bounds = RadiusBounds { min: b[0], max: b[1] };
    let (n, f) = next("balls")?;
    let m = parse_usize(f.first(), n)?;
    let mut balls = Vec::with_capacity(m);
    for _ in 0..m {
        let (n, f) = next("ball")?;
        let v = parse_reals(&f, n)?;
        if v.len() != input_dim + 1 {
            return Err(bad(n, format!("expected {} numbers", input_dim + 1)));
        }
        balls.push(Ball::new(v[..input_dim].to_vec(), v[input_dim]));
    }
    let per = mlp.param_count();
    let mut theta = Vec::with_capacity(m * per);
    for _ in 0..m {
        let (n, f) = next("expert")?;
        let v = parse_reals(&f, n)?;
        if v.len() != per {
            return Err(bad(n, format!("expected {per} parameters, found {}", v.len())));
        }
        theta.extend(v);
    }
    EnsembleModel::from_parts(Partition::new(balls, bounds), mlp, theta)
}

pub fn save_checkpoint(model: &EnsembleModel, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EnsembleModel> {
    read_checkpoint(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> EnsembleModel {
        let mlp = MlpSpec::new(2, vec![3, 2], 1, Activation::Sin).unwrap();
        let part = Partition::new(
            vec![Ball::new(vec![0.1, 1.0 / 3.0], 0.7), Ball::new(vec![0.9, 0.2], 0.45)],
            RadiusBounds { min: 0.05, max: 1.5 },
        );
        EnsembleModel::new(part, mlp, 3, false).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let text = write_checkpoint(&m);
        assert!(text.starts_with(CHECKPOINT_HEADER));
        assert_eq!(read_checkpoint(&text).unwrap(), m);
    }

    #[test]
    fn corruption_names_the_line() {
        let text = write_checkpoint(&model()).replace("ball 1", "ball x");
        let err = read_checkpoint(&text).unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
        let text = write_checkpoint(&model()).replace(CHECKPOINT_HEADER, "pinn-balls-checkpoint 9");
        assert!(read_checkpoint(&text).unwrap_err().to_string().contains("version"));
        let truncated: String = write_checkpoint(&model()).lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(read_checkpoint(&truncated).is_err());
    }
}
