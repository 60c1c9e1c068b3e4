//! The minimax alternation: resample from the adaptive density, one LM step
//! on the expert weights, a few Adam ascent steps on the balls, renormalize.

mod checkpoint;
mod output;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_HEADER};
pub use output::{write_density_csv, write_error_csv, write_report_csv, REPORT_COLUMNS};

use std::time::Instant;

use rayon::prelude::*;

use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::geometry::{PointSet, TensorGrid};
use crate::mlp::{JetOrder, MlpSpec};
use crate::optim::{lm_step, sum_squares, CollocationFit, LmState, SolverOptions, ETA_MAX, ETA_MIN};
use crate::partition::{kmeans_init, Partition, RadiusBounds};
use crate::pde::{relative_l2, ProblemSpec};
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::{AdaptiveDensity, AscentOptimizer, InteriorSamples, Regularizer, DEFAULT_MC_POINTS};

// Stream tags for the independent random draws of one run.
const TAG_BOUNDARY: u64 = 1;
const TAG_HOLDOUT: u64 = 2;
const TAG_HOLDOUT_BOUNDARY: u64 = 3;
const TAG_INTERIOR: u64 = 1 << 20;
const TAG_BATCH: u64 = 2 << 20;
const TAG_DENSITY: u64 = 4;
const TAG_INIT: u64 = 5;
const TAG_EXPERTS: u64 = 6;

/// Consecutive rejected LM steps at maximal damping tolerated with a
/// non-finite loss before giving up.
pub const ABORT_REJECTS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub outer_iterations: usize,
    pub n_interior: usize,
    pub n_boundary: usize,
    /// Adam ascent steps per outer iteration; 0 freezes the partition.
    pub ascent_inner_steps: usize,
    /// Regularization weight; `None` picks `1e-2` times the initial mean
    /// squared residual.
    pub beta: Option<f64>,
    pub regularizer: Regularizer,
    pub lr0: f64,
    /// Per-iteration learning-rate factor; the default halves it every 500.
    pub lr_decay: f64,
    pub n_mc: usize,
    /// Initial damping; 0 derives it from the first normal matrix.
    pub eta0: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub max_lm_solves: usize,
    pub solver: SolverOptions,
    /// Outer iterations per fresh interior sample.
    pub resample_every: usize,
    /// Optional minibatch sizes drawn from the interior and boundary sets.
    pub batch_interior: Option<usize>,
    pub batch_boundary: Option<usize>,
    /// Uniform held-out points for the reported loss.
    pub n_holdout: usize,
    pub kl_cells: usize,
    /// Iterations between density snapshots.
    pub log_every: usize,
    pub record_wall_time: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 500,
            n_interior: 2000,
            n_boundary: 600,
            ascent_inner_steps: 20,
            beta: None,
            regularizer: Regularizer::Entropy,
            lr0: 1e-3,
            lr_decay: 0.5f64.powf(1.0 / 500.0),
            n_mc: DEFAULT_MC_POINTS,
            eta0: 0.0,
            eta_min: ETA_MIN,
            eta_max: ETA_MAX,
            max_lm_solves: 10,
            solver: SolverOptions { dense_threshold: 4000, ..Default::default() },
            resample_every: 1,
            batch_interior: None,
            batch_boundary: None,
            n_holdout: 2000,
            kl_cells: 50,
            log_every: 10,
            record_wall_time: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("outer_iterations", self.outer_iterations),
            ("n_interior", self.n_interior),
            ("n_boundary", self.n_boundary),
            ("n_mc", self.n_mc),
            ("max_lm_solves", self.max_lm_solves),
            ("resample_every", self.resample_every),
            ("n_holdout", self.n_holdout),
            ("kl_cells", self.kl_cells),
            ("log_every", self.log_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if matches!(self.batch_interior, Some(0)) || matches!(self.batch_boundary, Some(0)) {
            return Err(Error::InvalidArgument("batch sizes must be positive".into()));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidArgument("beta must be positive".into()));
            }
        }
        if !(self.lr0 >= 0.0 && self.lr_decay > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be non-negative with positive decay".into()));
        }
        if !(self.eta_min > 0.0 && self.eta_min <= self.eta_max) || self.eta0 < 0.0 {
            return Err(Error::InvalidArgument("damping bounds must satisfy 0 < eta_min ≤ eta_max".into()));
        }
        Ok(())
    }
}

/// Reference values on a fixed point set.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub points: PointSet,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Unregularized physics loss on the held-out uniform set.
    pub loss: f64,
    pub rel_l2: Option<f64>,
    /// Damping after the LM step.
    pub eta: f64,
    pub nnz_frac: f64,
    pub kl_uniform: f64,
    pub wall_ms: f64,
    /// Loss on the training sample before and after the LM step.
    pub train_loss_before: f64,
    pub train_loss_after: f64,
    pub lm_accepted: bool,
    pub lm_solves: usize,
    pub ascent_accepted: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BallSnapshot {
    pub center: Vec<f64>,
    pub radius: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensitySnapshot {
    pub iter: usize,
    pub kl_uniform: f64,
    pub balls: Vec<BallSnapshot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    pub density: Vec<DensitySnapshot>,
    /// Regularization weight actually used.
    pub beta: f64,
}

/// K-means placement of `n_balls` over uniform points, grown to cover the
/// closed domain, with seeded experts.
pub fn build_model(
    problem: &ProblemSpec,
    n_balls: usize,
    mlp: MlpSpec,
    coverage_factor: f64,
    seed: u64,
) -> Result<EnsembleModel> {
    let domain = &problem.domain;
    let n_pts = (200 * n_balls).max(2000);
    let pts = uniform_points(problem, n_pts, derive_seed(seed, TAG_INIT));
    let bounds = RadiusBounds::for_domain(domain);
    let (mut partition, _) = kmeans_init(&pts, n_balls, coverage_factor, bounds, seed)?;
    cover_domain(&mut partition, problem, coverage_factor);
    EnsembleModel::new(partition, mlp, derive_seed(seed, TAG_EXPERTS), true)
}

/// Uniform interior points, one random stream per point.
pub fn uniform_points(problem: &ProblemSpec, n: usize, seed: u64) -> PointSet {
    let d = problem.dim();
    let coords: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut x = vec![0.0; d];
            problem.domain.sample_uniform(&mut stream_rng(seed, i as u64), &mut x);
            x
        })
        .collect();
    PointSet::from_flat(d, coords).expect("whole points")
}

/// Grows balls until every cell of a 64-per-axis grid lies inside one ball,
/// which covers the closed domain.
fn cover_domain(partition: &mut Partition, problem: &ProblemSpec, factor: f64) {
    let n = 64;
    let domain = &problem.domain;
    let half_diag = (0..domain.dim()).map(|k| (domain.extent(k) / n as f64).powi(2)).sum::<f64>().sqrt() / 2.0;
    let centers = TensorGrid::midpoints(domain, n).points();
    for p in centers.iter() {
        let dist = |b: &crate::partition::Ball| b.scaled_dist2(p).sqrt() * b.radius;
        if partition.balls.iter().any(|b| dist(b) + half_diag < b.radius) {
            continue;
        }
        let (j, d) = partition
            .balls
            .iter()
            .enumerate()
            .map(|(j, b)| (j, dist(b)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let b = &mut partition.balls[j];
        b.radius = b.radius.max((d + half_diag) * factor);
    }
}

/// Closed grid whose coverage stands in for coverage of the whole domain.
fn coverage_probe(problem: &ProblemSpec) -> PointSet {
    TensorGrid::closed(&problem.domain, &[33, 33]).points()
}

/// Builds the density for `model` as configured, with a provisional β.
pub fn build_density(problem: &ProblemSpec, model: &EnsembleModel, config: &TrainConfig) -> Result<AdaptiveDensity> {
    AdaptiveDensity::new(
        &model.partition,
        problem.domain.clone(),
        config.beta.unwrap_or(1.0),
        config.regularizer,
        config.n_mc,
        derive_seed(config.seed, TAG_DENSITY),
    )
}

/// Squared interior residuals of `model` at `points`.
pub fn squared_residuals(model: &EnsembleModel, problem: &ProblemSpec, points: &PointSet) -> Result<Vec<f64>> {
    let order = if problem.kind.needs_derivatives() { JetOrder::Full } else { JetOrder::Value };
    let pts: Vec<&[f64]> = points.iter().collect();
    pts.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let lin = model.linearize(x, order).map_err(|e| with_index(e, i))?;
            Ok(problem.residual(lin.bundle(), x)?.value[0].powi(2))
        })
        .collect()
}

fn with_index(e: Error, i: usize) -> Error {
    match e {
        Error::UncoveredPoint { point, .. } => Error::UncoveredPoint { index: Some(i), point },
        other => other,
    }
}

/// Predictions of `model` at `points`.
pub fn predict_all(model: &EnsembleModel, points: &PointSet) -> Result<Vec<f64>> {
    let pts: Vec<&[f64]> = points.iter().collect();
    pts.par_iter()
        .enumerate()
        .map(|(i, x)| Ok(model.predict(x).map_err(|e| with_index(e, i))?[0]))
        .collect()
}

/// Relative L2 error against `reference` and the pointwise error field.
pub fn evaluate(model: &EnsembleModel, reference: &Reference) -> Result<(f64, Vec<f64>)> {
    let pred = predict_all(model, &reference.points)?;
    let rel = relative_l2(&pred, &reference.values)?;
    Ok((rel, pred))
}

fn subset(points: &PointSet, k: usize, seed: u64) -> PointSet {
    let n = points.len();
    if k >= n {
        return points.clone();
    }
    let mut rng = stream_rng(seed, 0);
    let idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    let mut out = PointSet::new(points.dim());
    for i in idx {
        out.push(points.get(i)).expect("same dimension");
    }
    out
}

fn subset_samples(s: &InteriorSamples, k: usize, seed: u64) -> InteriorSamples {
    let n = s.points.len();
    if k >= n {
        return s.clone();
    }
    let mut rng = stream_rng(seed, 0);
    let idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    let mut points = PointSet::new(s.points.dim());
    let mut pdf = Vec::with_capacity(k);
    for i in idx {
        points.push(s.points.get(i)).expect("same dimension");
        pdf.push(s.pdf[i]);
    }
    InteriorSamples { points, pdf }
}

fn snapshot(iter: usize, kl: f64, partition: &Partition, density: &AdaptiveDensity) -> DensitySnapshot {
    let balls = partition
        .balls
        .iter()
        .zip(density.masses())
        .map(|(b, &mass)| BallSnapshot { center: b.center.clone(), radius: b.radius, mass })
        .collect();
    DensitySnapshot { iter, kl_uniform: kl, balls }
}

/// Runs `config.outer_iterations` minimax iterations on `model`.
///
/// `density` must be normalized for `model.partition`; its β is overwritten
/// when `config.beta` is set or chosen automatically. `reference` enables
/// the relative L2 column.
pub fn train(
    problem: &ProblemSpec,
    model: &mut EnsembleModel,
    density: &mut AdaptiveDensity,
    config: &TrainConfig,
    reference: Option<&Reference>,
) -> Result<TrainReport> {
    config.validate()?;
    let seed = config.seed;
    let boundary = problem.sample_boundary(config.n_boundary, derive_seed(seed, TAG_BOUNDARY));
    let holdout = uniform_points(problem, config.n_holdout, derive_seed(seed, TAG_HOLDOUT));
    let holdout_boundary = problem.sample_boundary(config.n_boundary, derive_seed(seed, TAG_HOLDOUT_BOUNDARY));

    let mut tracked = boundary.clone();
    tracked.extend(&holdout)?;
    tracked.extend(&holdout_boundary)?;
    tracked.extend(&coverage_probe(problem))?;
    if let Some(r) = reference {
        tracked.extend(&r.points)?;
    }
    if let Some(&i) = model.partition.coverage_check(&tracked).first() {
        return Err(Error::UncoveredPoint { index: Some(i), point: tracked.get(i).to_vec() });
    }

    let mut lm = LmState { eta: config.eta0, eta_bounds: [config.eta_min, config.eta_max], ..Default::default() };
    let mut ascent = AscentOptimizer::new(model.partition.params().len(), config.lr0);
    ascent.decay = config.lr_decay;

    let mut records = Vec::with_capacity(config.outer_iterations);
    let mut snapshots = Vec::new();
    let mut consecutive_rejects = 0usize;
    let mut samples: Option<InteriorSamples> = None;
    let mut beta_set = config.beta.is_some();
    if let Some(b) = config.beta {
        density.beta = b;
    }
    let start = Instant::now();

    for iter in 0..config.outer_iterations {
        // (a) sample.
        if iter % config.resample_every == 0 || samples.is_none() {
            samples = Some(density.sample(&model.partition, config.n_interior, derive_seed(seed, TAG_INTERIOR + iter as u64))?);
        }
        let pool = samples.as_ref().expect("sampled above");
        let batch_seed = derive_seed(seed, TAG_BATCH + iter as u64);
        let train_samples = match config.batch_interior {
            Some(k) => subset_samples(pool, k, batch_seed),
            None => pool.clone(),
        };
        let train_boundary = match config.batch_boundary {
            Some(k) => subset(&boundary, k, derive_seed(batch_seed, 1)),
            None => boundary.clone(),
        };
        if !beta_set {
            let r2 = squared_residuals(model, problem, &train_samples.points)?;
            let mean = r2.iter().sum::<f64>() / r2.len() as f64;
            density.beta = if mean > 0.0 { 1e-2 * mean } else { 1e-2 };
            beta_set = true;
        }

        // (b) one LM step on the expert weights.
        let mut theta = model.theta().to_vec();
        let step = {
            let fit = CollocationFit {
                model,
                problem,
                interior: &train_samples.points,
                boundary: &train_boundary,
            };
            lm_step(&fit, &mut theta, &mut lm, &config.solver, config.max_lm_solves)
                .map_err(|e| abort(iter, e))?
        };
        if step.accepted {
            if !(step.loss_after < step.loss_before) {
                return Err(Error::TrainingAborted {
                    iteration: iter,
                    reason: format!("accepted step raised the loss {} -> {}", step.loss_before, step.loss_after),
                });
            }
            model.set_theta(&theta)?;
            consecutive_rejects = 0;
        } else if lm.at_max() {
            consecutive_rejects += 1;
            if consecutive_rejects >= ABORT_REJECTS && !step.loss_before.is_finite() {
                return Err(Error::TrainingAborted {
                    iteration: iter,
                    reason: format!("non-finite loss after {ABORT_REJECTS} rejected steps at maximal damping"),
                });
            }
        } else {
            consecutive_rejects = 0;
        }

        // (c) ascent on the partition against the frozen sampling density.
        let mut ascent_accepted = 0;
        if config.ascent_inner_steps > 0 {
            let r2 = squared_residuals(model, problem, &train_samples.points)?;
            let lr = ascent.learning_rate(iter);
            for _ in 0..config.ascent_inner_steps {
                let out = ascent.step(&mut model.partition, density, &train_samples, &r2, lr, &tracked)?;
                if !out.accepted {
                    // A rolled-back step leaves every input unchanged, so
                    // retrying would reject the identical step again.
                    break;
                }
                ascent_accepted += 1;
            }
            // (d) renormalize and verify.
            model.partition.project(&problem.domain);
            density.normalize(&model.partition)?;
            if let Some(&i) = model.partition.coverage_check(&tracked).first() {
                return Err(Error::UncoveredPoint { index: Some(i), point: tracked.get(i).to_vec() });
            }
        }

        // (e) log.
        let loss = {
            let fit = CollocationFit { model, problem, interior: &holdout, boundary: &holdout_boundary };
            sum_squares(&fit.residual_of(model)?)
        };
        let rel_l2 = match reference {
            Some(r) => Some(evaluate(model, r)?.0),
            None => None,
        };
        let kl = density.kl_to_uniform(&model.partition, config.kl_cells);
        if iter % config.log_every == 0 || iter + 1 == config.outer_iterations {
            snapshots.push(snapshot(iter, kl, &model.partition, density));
        }
        let wall_ms = if config.record_wall_time { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        records.push(IterationRecord {
            iter,
            loss,
            rel_l2,
            eta: step.eta,
            nnz_frac: step.jacobian_density,
            kl_uniform: kl,
            wall_ms,
            train_loss_before: step.loss_before,
            train_loss_after: step.loss_after,
            lm_accepted: step.accepted,
            lm_solves: step.solves,
            ascent_accepted,
        });
    }
    Ok(TrainReport { records, density: snapshots, beta: density.beta })
}

fn abort(iteration: usize, e: Error) -> Error {
    match e {
        e @ (Error::UncoveredPoint { .. } | Error::SolverStall { .. }) => Error::TrainingAborted {
            iteration,
            reason: e.to_string(),
        },
        other => other,
    }
}
