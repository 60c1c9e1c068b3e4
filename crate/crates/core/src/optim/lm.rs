//! Levenberg–Marquardt: damped normal equations `(JᵀJ + ηI) δ = −Jᵀr`.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rayon::prelude::*;

use super::sparse::{normal_matrix, CsrMatrix};
use crate::ensemble::EnsembleModel;
use crate::error::{check_dim, Error, Result};
use crate::geometry::PointSet;
use crate::mlp::{DerivativeBundle, JetOrder};
use crate::pde::ProblemSpec;

pub const ETA_MIN: f64 = 1e-12;
pub const ETA_MAX: f64 = 1e8;

/// Marquardt damping with multiplicative adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState {
    /// Current damping; 0 means "initialize from the first normal matrix".
    pub eta: f64,
    pub eta_bounds: [f64; 2],
    pub accept_factor: f64,
    pub reject_factor: f64,
}

impl Default for LmState {
    fn default() -> Self {
        Self { eta: 0.0, eta_bounds: [ETA_MIN, ETA_MAX], accept_factor: 1.0 / 3.0, reject_factor: 2.0 }
    }
}

impl LmState {
    /// Accepts iff `after < before`; NaN counts as a rejection.
    pub fn damping_update(&mut self, loss_before: f64, loss_after: f64) -> bool {
        let accept = loss_after < loss_before;
        if accept {
            self.eta = (self.eta * self.accept_factor).max(self.eta_bounds[0]);
        } else {
            self.reject();
        }
        accept
    }

    pub fn reject(&mut self) {
        self.eta = (self.eta * self.reject_factor).min(self.eta_bounds[1]);
    }

    pub fn at_max(&self) -> bool {
        self.eta >= self.eta_bounds[1]
    }

    /// Scale-aware start `1e-2 · trace(H) / n`.
    pub fn initialize(&mut self, h: &CsrMatrix) {
        let n = h.n_cols.max(1);
        let trace: f64 = (0..h.n_rows).map(|i| h.get(i, i)).sum();
        let eta = 1e-2 * trace / n as f64;
        self.eta = if eta > 0.0 { eta.clamp(self.eta_bounds[0], self.eta_bounds[1]) } else { 1e-3 };
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Dense Cholesky at or below this many columns, conjugate gradients above.
    pub dense_threshold: usize,
    pub cg_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { dense_threshold: 2000, cg_tol: 1e-12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolvePath {
    Dense,
    ConjugateGradient { iterations: usize },
}

fn shifted_matvec(h: &CsrMatrix, eta: f64, x: &[f64]) -> Vec<f64> {
    let mut y = h.matvec(x).expect("square system");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += eta * xi;
    }
    y
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `(H + ηI) δ = −g`. `η ≤ 0` is replaced by [`ETA_MIN`].
pub fn lm_solve(h: &CsrMatrix, g: &[f64], eta: f64, opts: &SolverOptions) -> Result<(Vec<f64>, SolvePath)> {
    let n = h.n_cols;
    check_dim(h.n_rows, n)?;
    check_dim(n, g.len())?;
    let eta = if eta > 0.0 { eta } else { ETA_MIN };
    if g.iter().all(|&v| v == 0.0) {
        return Ok((vec![0.0; n], SolvePath::Dense));
    }
    if n <= opts.dense_threshold {
        dense_solve(h, g, eta).map(|d| (d, SolvePath::Dense))
    } else {
        conjugate_gradient(h, g, eta, opts.cg_tol)
            .map(|(d, iterations)| (d, SolvePath::ConjugateGradient { iterations }))
    }
}

fn dense_solve(h: &CsrMatrix, g: &[f64], eta: f64) -> Result<Vec<f64>> {
    let n = h.n_cols;
    let mut a = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        let (cols, vals) = h.row(i);
        for (c, v) in cols.iter().zip(vals) {
            a[(i, *c as usize)] = *v;
        }
        a[(i, i)] += eta;
    }
    let llt = a.llt(Side::Lower).map_err(|_| Error::NotPositiveDefinite)?;
    let mut x = Mat::from_fn(n, 1, |i, _| -g[i]);
    llt.solve_in_place(&mut x);
    let mut delta: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    // A couple of refinement sweeps recover digits lost to conditioning.
    let gn = norm(g);
    for _ in 0..3 {
        let ax = shifted_matvec(h, eta, &delta);
        let res: Vec<f64> = ax.iter().zip(g).map(|(a, b)| -b - a).collect();
        if norm(&res) <= 1e-13 * gn {
            break;
        }
        let mut c = Mat::from_fn(n, 1, |i, _| res[i]);
        llt.solve_in_place(&mut c);
        for (d, i) in delta.iter_mut().zip(0..n) {
            *d += c[(i, 0)];
        }
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(delta)
}

/// Jacobi-preconditioned conjugate gradients, at most `10 n` iterations.
fn conjugate_gradient(h: &CsrMatrix, g: &[f64], eta: f64, tol: f64) -> Result<(Vec<f64>, usize)> {
    let n = h.n_cols;
    let inv_diag: Vec<f64> = (0..n).map(|i| 1.0 / (h.get(i, i) + eta)).collect();
    let b: Vec<f64> = g.iter().map(|v| -v).collect();
    let bn = norm(&b);
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_iter = 10 * n;
    for it in 1..=max_iter {
        let ap = shifted_matvec(h, eta, &p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * bn {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverStall { iterations: max_iter, residual: norm(&r) / bn })
}

/// A nonlinear least-squares objective `‖r(θ)‖²`.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn residual(&self, theta: &[f64]) -> Result<Vec<f64>>;
    /// Residual and its Jacobian.
    fn linearize(&self, theta: &[f64]) -> Result<(Vec<f64>, CsrMatrix)>;
}

pub fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Outcome of one damped step (possibly several solves).
#[derive(Clone, Debug, PartialEq)]
pub struct LmStepReport {
    pub loss_before: f64,
    pub loss_after: f64,
    pub accepted: bool,
    /// Damping after the step.
    pub eta: f64,
    pub solves: usize,
    pub jacobian_nnz: usize,
    pub jacobian_density: f64,
    pub last_path: Option<SolvePath>,
}

/// One LM iteration from `theta`, retrying with larger damping up to
/// `max_solves` times. On acceptance `theta` is updated in place.
pub fn lm_step<P: LeastSquares + ?Sized>(
    problem: &P,
    theta: &mut [f64],
    state: &mut LmState,
    opts: &SolverOptions,
    max_solves: usize,
) -> Result<LmStepReport> {
    check_dim(problem.n_params(), theta.len())?;
    let (r, j) = problem.linearize(theta)?;
    let loss_before = sum_squares(&r);
    let g = j.transpose_matvec(&r)?;
    let h = normal_matrix(&j);
    if state.eta == 0.0 {
        state.initialize(&h);
    }
    let mut report = LmStepReport {
        loss_before,
        loss_after: loss_before,
        accepted: false,
        eta: state.eta,
        solves: 0,
        jacobian_nnz: j.nnz(),
        jacobian_density: j.density(),
        last_path: None,
    };
    let mut trial = theta.to_vec();
    for _ in 0..max_solves.max(1) {
        report.solves += 1;
        let (delta, path) = match lm_solve(&h, &g, state.eta, opts) {
            Ok(v) => v,
            Err(Error::NotPositiveDefinite | Error::SolverStall { .. }) => {
                state.reject();
                continue;
            }
            Err(e) => return Err(e),
        };
        report.last_path = Some(path);
        for ((t, th), d) in trial.iter_mut().zip(theta.iter()).zip(&delta) {
            *t = th + d;
        }
        let loss_after = sum_squares(&problem.residual(&trial)?);
        if state.damping_update(loss_before, loss_after) {
            theta.copy_from_slice(&trial);
            report.loss_after = loss_after;
            report.accepted = true;
            break;
        }
        if state.at_max() {
            break;
        }
    }
    report.eta = state.eta;
    Ok(report)
}

/// Interior residual rows scaled by `1/√N_Ω` and boundary rows by `1/√N_∂Ω`,
/// so that `‖r‖²` is the sum of the two mean-squared losses.
pub struct CollocationFit<'a> {
    pub model: &'a EnsembleModel,
    pub problem: &'a ProblemSpec,
    pub interior: &'a PointSet,
    pub boundary: &'a PointSet,
}

fn with_index(e: Error, i: usize) -> Error {
    match e {
        Error::UncoveredPoint { point, .. } => Error::UncoveredPoint { index: Some(i), point },
        other => other,
    }
}

impl CollocationFit<'_> {
    fn weights(&self) -> (f64, f64) {
        let w = |n: usize| if n == 0 { 0.0 } else { 1.0 / (n as f64).sqrt() };
        (w(self.interior.len()), w(self.boundary.len()))
    }

    fn order(&self) -> JetOrder {
        if self.problem.kind.needs_derivatives() {
            JetOrder::Full
        } else {
            JetOrder::Value
        }
    }

    fn rebuilt(&self, theta: &[f64]) -> Result<EnsembleModel> {
        let mut m = self.model.clone();
        m.set_theta(theta)?;
        Ok(m)
    }

    /// Weighted residual vector of `model`.
    pub fn residual_of(&self, model: &EnsembleModel) -> Result<Vec<f64>> {
        let (wi, wb) = self.weights();
        let order = self.order();
        let ni = self.interior.len();
        let pts: Vec<&[f64]> = self.interior.iter().chain(self.boundary.iter()).collect();
        pts.par_iter()
            .enumerate()
            .map(|(i, x)| {
                if i < ni {
                    let lin = model.linearize(x, order).map_err(|e| with_index(e, i))?;
                    Ok(wi * self.problem.residual(lin.bundle(), x)?.value[0])
                } else {
                    let v = model.predict(x).map_err(|e| with_index(e, i))?[0];
                    Ok(wb * self.problem.boundary_residual(v, x)?)
                }
            })
            .collect()
    }

    /// Weighted residual and sparse Jacobian of `model`.
    pub fn assemble(&self, model: &EnsembleModel) -> Result<(Vec<f64>, CsrMatrix)> {
        let (wi, wb) = self.weights();
        let order = self.order();
        let ni = self.interior.len();
        let d = self.problem.dim();
        let pts: Vec<&[f64]> = self.interior.iter().chain(self.boundary.iter()).collect();
        let rows: Vec<Result<(f64, Vec<(usize, f64)>)>> = pts
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut row = Vec::new();
                if i < ni {
                    let lin = model.linearize(x, order).map_err(|e| with_index(e, i))?;
                    let res = self.problem.residual(lin.bundle(), x)?;
                    let mut cot = res.cotangents[0].clone();
                    cot.value.iter_mut().chain(&mut cot.grad).chain(&mut cot.hess).for_each(|v| *v *= wi);
                    lin.row_into(&cot, &mut row);
                    Ok((wi * res.value[0], row))
                } else {
                    let lin = model.linearize(x, JetOrder::Value).map_err(|e| with_index(e, i))?;
                    let r = self.problem.boundary_residual(lin.bundle().value[0], x)?;
                    let mut cot = DerivativeBundle::zeros(d, 1);
                    cot.value[0] = wb;
                    lin.row_into(&cot, &mut row);
                    Ok((wb * r, row))
                }
            })
            .collect();
        let mut r = Vec::with_capacity(rows.len());
        let mut jr = Vec::with_capacity(rows.len());
        for row in rows {
            let (v, entries) = row?;
            r.push(v);
            jr.push(entries);
        }
        Ok((r, CsrMatrix::from_rows(model.n_params(), &jr)?))
    }
}

impl LeastSquares for CollocationFit<'_> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn residual(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.residual_of(&self.rebuilt(theta)?)
    }

    fn linearize(&self, theta: &[f64]) -> Result<(Vec<f64>, CsrMatrix)> {
        self.assemble(&self.rebuilt(theta)?)
    }
}
