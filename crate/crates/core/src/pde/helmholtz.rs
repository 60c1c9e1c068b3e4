//! Five-point finite differences for `Δu + k u = f` with zero Dirichlet data,
//! solved exactly by sine-transform diagonalization.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{ProblemKind, ProblemSpec};
use crate::error::{Error, Result};

/// Cells per axis of the coarse level used for the extrapolated reference.
pub const REFERENCE_CELLS: usize = 1024;

/// Interior nodal values on an `n × n` grid, `values[i * n + j]` at
/// `(lo_x + (i+1) h_x, lo_y + (j+1) h_y)`.
#[derive(Clone, Debug)]
pub struct FdSolution {
    pub n: usize,
    pub h: [f64; 2],
    pub lo: [f64; 2],
    pub values: Vec<f64>,
}

impl FdSolution {
    /// Value at node `(i, j)` of the closed grid `0..=n+1`; boundary nodes are 0.
    pub fn node(&self, i: usize, j: usize) -> f64 {
        let n = self.n;
        if i == 0 || j == 0 || i > n || j > n {
            0.0
        } else {
            self.values[(i - 1) * n + (j - 1)]
        }
    }

    pub fn cells(&self) -> usize {
        self.n + 1
    }

    /// `max |L_h u − f|` over interior nodes.
    pub fn discrete_residual(&self, problem: &ProblemSpec) -> Result<f64> {
        let k = wavenumber(problem)?;
        let [hx, hy] = self.h;
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 1..=n {
            for j in 1..=n {
                let u = self.node(i, j);
                let lap = (self.node(i - 1, j) - 2.0 * u + self.node(i + 1, j)) / (hx * hx)
                    + (self.node(i, j - 1) - 2.0 * u + self.node(i, j + 1)) / (hy * hy);
                let x = [self.lo[0] + i as f64 * hx, self.lo[1] + j as f64 * hy];
                worst = worst.max((lap + k * u - problem.forcing(&x)).abs());
            }
        }
        Ok(worst)
    }
}

fn wavenumber(problem: &ProblemSpec) -> Result<f64> {
    match problem.kind {
        ProblemKind::Helmholtz { kx, ky } => Ok(kx * ky),
        _ => Err(Error::KindMismatch(format!("{} has no Helmholtz oracle", problem.kind.name()))),
    }
}

/// Unnormalized DST-I of every length-`n` row of `data`, in place:
/// `X_k = Σ_j x_j sin(π (j+1)(k+1) / (n+1))`.
fn dst_rows(data: &mut [f64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    let len = 2 * (n + 1);
    data.par_chunks_mut(n).for_each_init(
        || (vec![Complex::new(0.0, 0.0); len], vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()]),
        |(buf, scratch), row| {
            buf[0] = Complex::new(0.0, 0.0);
            buf[n + 1] = Complex::new(0.0, 0.0);
            for (j, &v) in row.iter().enumerate() {
                buf[j + 1] = Complex::new(v, 0.0);
                buf[len - 1 - j] = Complex::new(-v, 0.0);
            }
            fft.process_with_scratch(buf, scratch);
            for (k, v) in row.iter_mut().enumerate() {
                *v = -0.5 * buf[k + 1].im;
            }
        },
    );
}

fn transpose(data: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = data[i * n + j];
        }
    }
    out
}

fn dst_2d(data: &mut Vec<f64>, n: usize, fft: &Arc<dyn Fft<f64>>) {
    dst_rows(data, n, fft);
    *data = transpose(data, n);
    dst_rows(data, n, fft);
    *data = transpose(data, n);
}

/// Solves the five-point system with `cells` intervals per axis.
pub fn helmholtz_reference(problem: &ProblemSpec, cells: usize) -> Result<FdSolution> {
    let k = wavenumber(problem)?;
    solve_five_point(problem, k, cells, &|x| problem.forcing(x))
}

fn solve_five_point(
    problem: &ProblemSpec,
    k: f64,
    cells: usize,
    forcing: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<FdSolution> {
    if cells < 2 {
        return Err(Error::InvalidArgument("finite-difference grid needs at least 2 cells".into()));
    }
    let n = cells - 1;
    let dom = &problem.domain;
    let h = [dom.extent(0) / cells as f64, dom.extent(1) / cells as f64];
    let lo = [dom.lo[0], dom.lo[1]];

    let mut rhs = vec![0.0; n * n];
    rhs.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = forcing(&[lo[0] + (i + 1) as f64 * h[0], lo[1] + (j + 1) as f64 * h[1]]);
        }
    });

    let fft = FftPlanner::new().plan_fft_forward(2 * cells);
    dst_2d(&mut rhs, n, &fft);

    let eig = |hk: f64, p: usize| {
        let s = (p as f64 * std::f64::consts::PI / (2.0 * cells as f64)).sin();
        -4.0 * s * s / (hk * hk)
    };
    let ex: Vec<f64> = (1..=n).map(|p| eig(h[0], p)).collect();
    let ey: Vec<f64> = (1..=n).map(|q| eig(h[1], q)).collect();
    let scale = ex[n - 1].abs() + ey[n - 1].abs();
    // Two DST-I passes per axis multiply by ((n+1)/2)² each.
    let norm = (2.0 / cells as f64).powi(2);
    for p in 0..n {
        for q in 0..n {
            let lam = ex[p] + ey[q] + k;
            if lam.abs() <= 1e-12 * scale {
                return Err(Error::SingularSystem(format!(
                    "k = {k} matches discrete eigenvalue at modes ({}, {})",
                    p + 1,
                    q + 1
                )));
            }
            rhs[p * n + q] *= norm / lam;
        }
    }
    dst_2d(&mut rhs, n, &fft);
    Ok(FdSolution { n, h, lo, values: rhs })
}

/// Richardson-extrapolated nodal values `(4 u_{h/2} − u_h) / 3` with `h` the
/// spacing of `cells` intervals, sampled on the closed `n_eval × n_eval` grid
/// (row-major, last axis fastest). `n_eval − 1` must divide `cells`.
pub fn helmholtz_richardson(problem: &ProblemSpec, cells: usize, n_eval: usize) -> Result<Vec<f64>> {
    if n_eval < 2 || cells % (n_eval - 1) != 0 {
        return Err(Error::InvalidArgument(format!(
            "evaluation grid of {n_eval} nodes does not align with {cells} cells"
        )));
    }
    let coarse = helmholtz_reference(problem, cells)?;
    let fine = helmholtz_reference(problem, 2 * cells)?;
    let stride = cells / (n_eval - 1);
    let mut out = Vec::with_capacity(n_eval * n_eval);
    for a in 0..n_eval {
        for b in 0..n_eval {
            let (i, j) = (a * stride, b * stride);
            out.push((4.0 * fine.node(2 * i, 2 * j) - coarse.node(i, j)) / 3.0);
        }
    }
    Ok(out)
}
