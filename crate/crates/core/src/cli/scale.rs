//! Cost of one LM update as the ensemble grows, on the supervised fit.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::ensemble::EnsembleModel;
use crate::error::Result;
use crate::geometry::PointSet;
use crate::mlp::{Activation, MlpSpec};
use crate::optim::{lm_solve, normal_matrix, CollocationFit, SolvePath, SolverOptions};
use crate::partition::{kmeans_init, RadiusBounds};
use crate::pde::ProblemSpec;
use crate::rng::derive_seed;
use crate::trainer::uniform_points;

/// Allocator-level accounting of live heap bytes.
pub trait MemoryProbe: Sync {
    /// Restarts peak tracking from the current live size.
    fn reset_peak(&self);
    /// Peak live bytes since the last reset.
    fn peak_bytes(&self) -> usize;
    fn current_bytes(&self) -> usize;
}

/// Probe that measures nothing.
pub struct NoProbe;

impl MemoryProbe for NoProbe {
    fn reset_peak(&self) {}
    fn peak_bytes(&self) -> usize {
        0
    }
    fn current_bytes(&self) -> usize {
        0
    }
}

/// Two hidden layers of equal width.
pub const BENCH_DEPTH: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleRow {
    pub target_params: usize,
    pub n_balls: usize,
    pub width: usize,
    pub n_params: usize,
    pub n_rows: usize,
    pub nnz_j: usize,
    pub nnz_frac_j: f64,
    pub nnz_h: usize,
    pub h_bytes: usize,
    pub h_dense_bytes: usize,
    pub assemble_s: f64,
    pub normal_s: f64,
    pub solve_s: f64,
    pub cg_iterations: usize,
    pub mem_peak_bytes: usize,
    /// `ok`, `skipped` (no expert fits the budget) or an error message.
    pub status: String,
}

fn per_expert(width: usize) -> usize {
    MlpSpec::new(2, vec![width; BENCH_DEPTH], 1, Activation::Tanh).expect("positive width").param_count()
}

/// Widest expert with `M · per_expert(width) ≤ target`, if any.
pub fn expert_width(target: usize, n_balls: usize) -> Option<usize> {
    let budget = target / n_balls.max(1);
    (1..).take_while(|&w| per_expert(w) <= budget).last()
}

/// One assemble, normal matrix and damped solve per `(target params, M)` case.
pub fn scale_bench(cases: &[(usize, usize)], seed: u64, probe: &dyn MemoryProbe) -> Vec<ScaleRow> {
    cases.iter().map(|&(target, m)| bench_case(target, m, seed, probe)).collect()
}

fn bench_case(target: usize, m: usize, seed: u64, probe: &dyn MemoryProbe) -> ScaleRow {
    let mut row = ScaleRow {
        target_params: target,
        n_balls: m,
        width: 0,
        n_params: 0,
        n_rows: 0,
        nnz_j: 0,
        nnz_frac_j: 0.0,
        nnz_h: 0,
        h_bytes: 0,
        h_dense_bytes: 0,
        assemble_s: 0.0,
        normal_s: 0.0,
        solve_s: 0.0,
        cg_iterations: 0,
        mem_peak_bytes: 0,
        status: "skipped".into(),
    };
    let Some(width) = expert_width(target, m) else {
        return row;
    };
    row.width = width;
    if let Err(e) = run_case(&mut row, seed, probe) {
        row.status = e.to_string();
    }
    row
}

fn run_case(row: &mut ScaleRow, seed: u64, probe: &dyn MemoryProbe) -> Result<()> {
    let problem = ProblemSpec::supervised_fit();
    let mlp = MlpSpec::new(2, vec![row.width; BENCH_DEPTH], 1, Activation::Tanh)?;
    let n_params = row.n_balls * mlp.param_count();
    let n_points = (2 * n_params).max(1000);
    let points = uniform_points(&problem, n_points, derive_seed(seed, row.n_balls as u64));
    let bounds = RadiusBounds { min: 1e-6, max: problem.domain.diagonal() };
    let (partition, _) = kmeans_init(&points, row.n_balls, 1.05, bounds, seed)?;
    let model = EnsembleModel::new(partition, mlp, seed, false)?;
    let empty = PointSet::new(2);
    let fit = CollocationFit { model: &model, problem: &problem, interior: &points, boundary: &empty };

    let t = Instant::now();
    let (r, j) = fit.assemble(&model)?;
    row.assemble_s = t.elapsed().as_secs_f64();
    row.n_params = n_params;
    row.n_rows = j.n_rows;
    row.nnz_j = j.nnz();
    row.nnz_frac_j = j.density();

    let g = j.transpose_matvec(&r)?;
    let base = probe.current_bytes();
    probe.reset_peak();
    let t = Instant::now();
    let h = normal_matrix(&j);
    row.normal_s = t.elapsed().as_secs_f64();
    row.nnz_h = h.nnz();
    row.h_bytes = h.storage_bytes();
    row.h_dense_bytes = n_params * n_params * std::mem::size_of::<f64>();
    let trace: f64 = (0..n_params).map(|i| h.get(i, i)).sum();
    let eta = 1e-2 * trace / n_params as f64;
    let t = Instant::now();
    let (_, path) = lm_solve(&h, &g, eta, &SolverOptions::default())?;
    row.solve_s = t.elapsed().as_secs_f64();
    if let SolvePath::ConjugateGradient { iterations } = path {
        row.cg_iterations = iterations;
    }
    row.mem_peak_bytes = probe.peak_bytes().saturating_sub(base);
    row.status = "ok".into();
    Ok(())
}

pub const SCALE_COLUMNS: &str = "target_params,n_balls,width,n_params,n_rows,nnz_j,nnz_pct_j,nnz_h,h_bytes,h_dense_bytes,assemble_s,normal_s,solve_s,cg_iterations,mem_peak_bytes,status";

pub fn write_scale_csv(path: &Path, rows: &[ScaleRow], with_timing: bool) -> Result<()> {
    let mut s = format!("{SCALE_COLUMNS}\n");
    let time = |v: f64| if with_timing { v } else { 0.0 };
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{:.16e},{},{},{},{:.16e},{:.16e},{:.16e},{},{},{}",
            r.target_params,
            r.n_balls,
            r.width,
            r.n_params,
            r.n_rows,
            r.nnz_j,
            100.0 * r.nnz_frac_j,
            r.nnz_h,
            r.h_bytes,
            r.h_dense_bytes,
            time(r.assemble_s),
            time(r.normal_s),
            time(r.solve_s),
            r.cg_iterations,
            if with_timing { r.mem_peak_bytes } else { 0 },
            r.status.replace(',', ";"),
        )
        .expect("string write");
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
