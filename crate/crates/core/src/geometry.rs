//! Axis-aligned boxes and flat point sets.

use rand::Rng;

use crate::error::{Error, Result};

/// Closed axis-aligned box `[lo_0, hi_0] × … × [lo_{d-1}, hi_{d-1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidArgument("box bounds must have equal, positive length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidArgument(format!("degenerate box {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        Self { lo: vec![0.0; dim], hi: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extent(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.extent(k)).product()
    }

    pub fn diagonal(&self) -> f64 {
        (0..self.dim()).map(|k| self.extent(k).powi(2)).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Whether `x` lies in the box and within `tol` of face `k` at the low
    /// (`upper = false`) or high side.
    pub fn on_face(&self, x: &[f64], k: usize, upper: bool, tol: f64) -> bool {
        let target = if upper { self.hi[k] } else { self.lo[k] };
        (x[k] - target).abs() <= tol
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= *a - tol && *v <= *b + tol)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (a, b)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*a, *b);
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (k, v) in out.iter_mut().enumerate() {
            *v = self.lo[k] + rng.gen::<f64>() * self.extent(k);
        }
    }

    /// Uniform sample on face `k` (low or high side).
    pub fn sample_face<R: Rng + ?Sized>(&self, rng: &mut R, k: usize, upper: bool, out: &mut [f64]) {
        self.sample_uniform(rng, out);
        out[k] = if upper { self.hi[k] } else { self.lo[k] };
    }

    /// Measure of face `k` (product of the other extents; 1 in one dimension).
    pub fn face_measure(&self, k: usize) -> f64 {
        (0..self.dim()).filter(|&j| j != k).map(|j| self.extent(j)).product()
    }

    /// The `2^d` corners.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d).map(|k| if mask >> k & 1 == 1 { self.hi[k] } else { self.lo[k] }).collect()
            })
            .collect()
    }
}

/// Points of a common dimension stored contiguously.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, coords: Vec::new() }
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<P: AsRef<[f64]>>(dim: usize, points: &[P]) -> Result<Self> {
        let mut s = Self::new(dim);
        for p in points {
            s.push(p.as_ref())?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        crate::error::check_dim(self.dim, p.len())?;
        self.coords.extend_from_slice(p);
        Ok(())
    }

    pub fn extend(&mut self, other: &PointSet) -> Result<()> {
        crate::error::check_dim(self.dim, other.dim)?;
        self.coords.extend_from_slice(&other.coords);
        Ok(())
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }
}

/// Regular tensor grid of `n_k` nodes per axis; node `i` on axis `k` sits at
/// `lo_k + (i + offset) · h_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrid {
    pub axes: Vec<Vec<f64>>,
}

impl TensorGrid {
    /// Cell midpoints of an `n^d` subdivision of `domain`.
    pub fn midpoints(domain: &DomainBox, n: usize) -> Self {
        let axes = (0..domain.dim())
            .map(|k| {
                let h = domain.extent(k) / n as f64;
                (0..n).map(|i| domain.lo[k] + (i as f64 + 0.5) * h).collect()
            })
            .collect();
        Self { axes }
    }

    /// Nodes including both endpoints, `n_k ≥ 2` per axis.
    pub fn closed(domain: &DomainBox, n: &[usize]) -> Self {
        let axes = (0..domain.dim())
            .map(|k| {
                let h = domain.extent(k) / (n[k] - 1) as f64;
                (0..n[k])
                    .map(|i| if i + 1 == n[k] { domain.hi[k] } else { domain.lo[k] + i as f64 * h })
                    .collect()
            })
            .collect();
        Self { axes }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points in row-major order (last axis fastest).
    pub fn points(&self) -> PointSet {
        let d = self.dim();
        let n = self.len();
        let mut coords = Vec::with_capacity(n * d);
        let mut idx = vec![0usize; d];
        for _ in 0..n {
            for k in 0..d {
                coords.push(self.axes[k][idx[k]]);
            }
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < self.axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
        PointSet { dim: d, coords }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_measures() {
        let b = DomainBox::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(b.volume(), 2.0);
        assert!((b.diagonal() - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(b.corners().len(), 4);
        assert!(b.on_face(&[1.0, 0.3], 0, true, 1e-12));
        assert!(!b.on_face(&[0.5, 0.3], 0, true, 1e-12));
        assert!(DomainBox::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn grid_points_are_row_major() {
        let g = TensorGrid::closed(&DomainBox::unit(2), &[2, 3]);
        let p = g.points();
        assert_eq!(p.len(), 6);
        assert_eq!(p.get(1), &[0.0, 0.5]);
        assert_eq!(p.get(3), &[1.0, 0.0]);
    }
}
