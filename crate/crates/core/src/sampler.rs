//! Adversarial sampling density `p(x) = (1/M) Σ_k w_k φ_k(x)` tied to the
//! partition, with `w_k = 1 / ∫_Ω φ_k`.
//!
//! Masses are Monte-Carlo integrals over points drawn once per
//! [`AdaptiveDensity::normalize`], uniformly on the part of Ω inside a cube
//! slightly larger than each support. The points stay fixed until the next normalization, so the mass
//! is a smooth function of the ball parameters and its analytic gradient
//! matches finite differences of the same estimator.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{DomainBox, PointSet, TensorGrid};
use crate::optim::Adam;
use crate::partition::{Ball, Partition};
use crate::rng::{derive_seed, stream_rng};

/// Half-width of the mass-estimation cube relative to the radius.
pub const PROPOSAL_INFLATION: f64 = 1.25;
pub const DEFAULT_MC_POINTS: usize = 100_000;
/// Proposals tried for one sample before giving up.
pub const MAX_ATTEMPTS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    /// `∫ p log p`.
    Entropy,
    /// `∫ |∇p|²`.
    Dirichlet,
}

impl Regularizer {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "entropy" => Some(Self::Entropy),
            "dirichlet" => Some(Self::Dirichlet),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Entropy => "entropy",
            Self::Dirichlet => "dirichlet",
        }
    }
}

#[derive(Clone, Debug)]
struct MassPoints {
    /// Proposal-box volume divided by the number of proposals.
    weight: f64,
    /// Proposals, flat.
    coords: Vec<f64>,
}

/// Mass of one ball and its gradient `[∂m/∂c…, ∂m/∂s]`.
///
/// Inlines [`Ball::phi_param_grad`] to keep this hot loop allocation-free.
fn mass_with_grad(ball: &Ball, q: &MassPoints) -> (f64, Vec<f64>) {
    let d = ball.dim();
    let s = ball.radius;
    let inv_s2 = 1.0 / (s * s);
    let mut m = 0.0;
    let mut g = vec![0.0; d + 1];
    let mut dq_sum = 0.0;
    for y in q.coords.chunks_exact(d) {
        let r2: f64 = y.iter().zip(&ball.center).map(|(a, b)| (a - b) * (a - b)).sum();
        let qv = r2 / (s * s);
        if qv >= 1.0 {
            continue;
        }
        let t = 1.0 - qv;
        m += t * t;
        for k in 0..d {
            g[k] += t * (y[k] - ball.center[k]);
        }
        dq_sum += t * qv;
    }
    for v in &mut g[..d] {
        *v *= 4.0 * inv_s2 * q.weight;
    }
    g[d] = 4.0 * dq_sum / s * q.weight;
    (m * q.weight, g)
}

fn mass_only(ball: &Ball, q: &MassPoints) -> f64 {
    let d = ball.dim();
    q.coords.chunks_exact(d).map(|y| ball.phi(y)).sum::<f64>() * q.weight
}

/// Intersection of the cube `c ± r` with `domain`, or `None` if empty.
fn clipped_cube(domain: &DomainBox, center: &[f64], r: f64) -> Option<DomainBox> {
    let lo: Vec<f64> = center.iter().zip(&domain.lo).map(|(c, l)| (c - r).max(*l)).collect();
    let hi: Vec<f64> = center.iter().zip(&domain.hi).map(|(c, h)| (c + r).min(*h)).collect();
    DomainBox::new(lo, hi).ok()
}

/// Interior collocation points with the density value at which each was drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct InteriorSamples {
    pub points: PointSet,
    pub pdf: Vec<f64>,
}

/// Ascent objective and its gradient in the partition parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AscentEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AdaptiveDensity {
    pub domain: DomainBox,
    pub beta: f64,
    pub regularizer: Regularizer,
    pub n_mc: usize,
    pub seed: u64,
    masses: Vec<f64>,
    quad: Vec<MassPoints>,
    epoch: u64,
}

impl AdaptiveDensity {
    /// Builds and normalizes the density for `partition`.
    pub fn new(
        partition: &Partition,
        domain: DomainBox,
        beta: f64,
        regularizer: Regularizer,
        n_mc: usize,
        seed: u64,
    ) -> Result<Self> {
        check_dim(domain.dim(), partition.dim())?;
        if !(beta >= 0.0) || n_mc == 0 {
            return Err(Error::InvalidArgument("density needs beta ≥ 0 and n_mc > 0".into()));
        }
        let mut d = Self {
            domain,
            beta,
            regularizer,
            n_mc,
            seed,
            masses: Vec::new(),
            quad: Vec::new(),
            epoch: 0,
        };
        d.normalize(partition)?;
        Ok(d)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Normalization weights `w_k = 1 / m_k`.
    pub fn weights(&self) -> Vec<f64> {
        self.masses.iter().map(|m| 1.0 / m).collect()
    }

    /// Redraws the quadrature points around the current balls and recomputes
    /// every mass.
    pub fn normalize(&mut self, partition: &Partition) -> Result<()> {
        let d = partition.dim();
        let epoch_seed = derive_seed(self.seed, self.epoch);
        self.epoch += 1;
        let n_mc = self.n_mc;
        let domain = &self.domain;
        let quad: Vec<MassPoints> = partition
            .balls
            .par_iter()
            .enumerate()
            .map(|(k, ball)| {
                let mut rng = stream_rng(epoch_seed, k as u64);
                let Some(cube) = clipped_cube(domain, &ball.center, PROPOSAL_INFLATION * ball.radius)
                else {
                    return MassPoints { weight: 0.0, coords: Vec::new() };
                };
                let mut coords = vec![0.0; n_mc * d];
                for y in coords.chunks_exact_mut(d) {
                    cube.sample_uniform(&mut rng, y);
                }
                MassPoints { weight: cube.volume() / n_mc as f64, coords }
            })
            .collect();
        let masses: Vec<f64> =
            partition.balls.iter().zip(&quad).map(|(b, q)| mass_only(b, q)).collect();
        if let Some(k) = masses.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::ZeroMassBall { ball: k });
        }
        self.quad = quad;
        self.masses = masses;
        Ok(())
    }

    fn check_partition(&self, partition: &Partition) -> Result<()> {
        check_dim(self.masses.len(), partition.len())
    }

    /// Density value with the stored masses.
    pub fn pdf(&self, partition: &Partition, x: &[f64]) -> f64 {
        pdf_with(partition, &self.masses, x)
    }

    /// Density gradient with the stored masses.
    pub fn pdf_grad(&self, partition: &Partition, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let inv_m = 1.0 / partition.len() as f64;
        for (b, m) in partition.balls.iter().zip(&self.masses) {
            if b.contains(x) {
                for (gk, v) in g.iter_mut().zip(b.phi_derivs(x).grad) {
                    *gk += inv_m * v / m;
                }
            }
        }
        g
    }

    /// Masses of the current balls over the stored quadrature points.
    pub fn live_masses(&self, partition: &Partition) -> Result<Vec<f64>> {
        self.check_partition(partition)?;
        Ok(partition.balls.par_iter().zip(&self.quad).map(|(b, q)| mass_only(b, q)).collect())
    }

    /// Draws `n` points: a ball uniformly at random, then a proposal uniform
    /// on that ball's bounding box within Ω, kept with probability φ_k.
    pub fn sample(&self, partition: &Partition, n: usize, seed: u64) -> Result<InteriorSamples> {
        self.check_partition(partition)?;
        let d = partition.dim();
        let m = partition.len();
        let draws: Vec<Result<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let k = rng.gen_range(0..m);
                let ball = &partition.balls[k];
                let stall = Error::RejectionStall { ball: k, accepted: 0, attempts: MAX_ATTEMPTS };
                let cube = clipped_cube(&self.domain, &ball.center, ball.radius).ok_or(stall)?;
                let mut y = vec![0.0; d];
                for _ in 0..MAX_ATTEMPTS {
                    cube.sample_uniform(&mut rng, &mut y);
                    if rng.gen::<f64>() < ball.phi(&y) {
                        return Ok(y);
                    }
                }
                Err(Error::RejectionStall { ball: k, accepted: 0, attempts: MAX_ATTEMPTS })
            })
            .collect();
        let mut coords = Vec::with_capacity(n * d);
        for r in draws {
            coords.extend(r?);
        }
        let points = PointSet::from_flat(d, coords)?;
        let pdf = points.iter().map(|x| self.pdf(partition, x)).collect();
        Ok(InteriorSamples { points, pdf })
    }

    /// Importance-sampled ascent objective at the current `partition` over
    /// samples drawn from a frozen density (their recorded `pdf`):
    ///
    /// ```text
    /// F = (1/N) Σ r_i² p(x_i)/p̄_i − β R
    /// R = (1/N) Σ p(x_i) log p(x_i) / p̄_i      (entropy)
    /// R = (1/N) Σ |∇p(x_i)|² / p̄_i             (Dirichlet)
    /// ```
    ///
    /// Masses are live functions of the ball parameters. Radius entries of the
    /// gradient are zero when radii are frozen.
    pub fn ascent_objective(
        &self,
        partition: &Partition,
        samples: &InteriorSamples,
        r2: &[f64],
    ) -> Result<AscentEval> {
        self.check_partition(partition)?;
        check_dim(samples.points.len(), r2.len())?;
        check_dim(samples.points.len(), samples.pdf.len())?;
        let d = partition.dim();
        let m = partition.len();
        let n = samples.points.len();
        let inv_m = 1.0 / m as f64;
        let inv_n = 1.0 / n as f64;
        let beta = self.beta;

        let mass_grads: Vec<(f64, Vec<f64>)> =
            partition.balls.par_iter().zip(&self.quad).map(|(b, q)| mass_with_grad(b, q)).collect();
        let masses: Vec<f64> = mass_grads.iter().map(|(mk, _)| *mk).collect();

        // Per-sample contributions, reduced sequentially afterwards.
        let per_sample: Vec<Result<(f64, Vec<(usize, Vec<f64>)>)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = samples.points.get(i);
                let p = pdf_with(partition, &masses, x);
                if !(p > 0.0) {
                    return Err(Error::NonPositivePdf { index: i, value: p });
                }
                let pbar = samples.pdf[i];
                let mut contrib = Vec::new();
                let value = match self.regularizer {
                    Regularizer::Entropy => {
                        let a = inv_n * (r2[i] - beta * (p.ln() + 1.0)) / pbar;
                        for (k, b) in partition.balls.iter().enumerate() {
                            let pg = b.phi_param_grad(x);
                            if pg.value == 0.0 {
                                continue;
                            }
                            let (mk, dm) = &mass_grads[k];
                            let g: Vec<f64> = (0..=d)
                                .map(|j| {
                                    let dphi = if j < d { pg.d_center[j] } else { pg.d_radius };
                                    a * inv_m * (dphi / mk - pg.value * dm[j] / (mk * mk))
                                })
                                .collect();
                            contrib.push((k, g));
                        }
                        inv_n * (r2[i] * p - beta * p * p.ln()) / pbar
                    }
                    Regularizer::Dirichlet => {
                        let a = inv_n * r2[i] / pbar;
                        let mut gp = vec![0.0; d];
                        let mut parts = Vec::new();
                        for (k, b) in partition.balls.iter().enumerate() {
                            let pg = b.phi_param_grad(x);
                            if pg.value == 0.0 {
                                continue;
                            }
                            let (grad_phi, dc, ds) = b.phi_grad_param_grad(x);
                            for (g, v) in gp.iter_mut().zip(&grad_phi) {
                                *g += inv_m * v / masses[k];
                            }
                            parts.push((k, pg, grad_phi, dc, ds));
                        }
                        let c = -beta * inv_n * 2.0 / pbar;
                        for (k, pg, grad_phi, dc, ds) in parts {
                            let (mk, dm) = &mass_grads[k];
                            let g: Vec<f64> = (0..=d)
                                .map(|j| {
                                    let dphi = if j < d { pg.d_center[j] } else { pg.d_radius };
                                    let dp = inv_m * (dphi / mk - pg.value * dm[j] / (mk * mk));
                                    // ∂(∇p)/∂θ_j dotted with ∇p.
                                    let dgrad: f64 = (0..d)
                                        .map(|a_| {
                                            let dg = if j < d { dc[a_ * d + j] } else { ds[a_] };
                                            gp[a_]
                                                * inv_m
                                                * (dg / mk - grad_phi[a_] * dm[j] / (mk * mk))
                                        })
                                        .sum();
                                    a * dp + c * dgrad
                                })
                                .collect();
                            contrib.push((k, g));
                        }
                        let g2: f64 = gp.iter().map(|v| v * v).sum();
                        inv_n * (r2[i] * p - beta * g2) / pbar
                    }
                };
                Ok((value, contrib))
            })
            .collect();

        let mut value = 0.0;
        let mut grad = vec![0.0; m * (d + 1)];
        for r in per_sample {
            let (v, contrib) = r?;
            value += v;
            for (k, g) in contrib {
                for (j, gj) in g.into_iter().enumerate() {
                    grad[k * (d + 1) + j] += gj;
                }
            }
        }
        if partition.frozen_radii {
            for k in 0..m {
                grad[k * (d + 1) + d] = 0.0;
            }
        }
        Ok(AscentEval { value, grad })
    }

    /// KL divergence of the grid-normalized density from uniform on a
    /// midpoint grid with `n` cells per axis.
    pub fn kl_to_uniform(&self, partition: &Partition, n: usize) -> f64 {
        let grid = TensorGrid::midpoints(&self.domain, n).points();
        let values: Vec<f64> = grid.iter().map(|x| self.pdf(partition, x)).collect();
        let cell = self.domain.volume() / grid.len() as f64;
        kl_to_uniform_grid(&values, cell, self.domain.volume())
    }
}

fn pdf_with(partition: &Partition, masses: &[f64], x: &[f64]) -> f64 {
    let inv_m = 1.0 / partition.len() as f64;
    partition.balls.iter().zip(masses).map(|(b, m)| b.phi(x) / m).sum::<f64>() * inv_m
}

/// `Σ h p log(p |Ω|)` after normalizing `values` to unit grid mass.
pub fn kl_to_uniform_grid(values: &[f64], cell_volume: f64, volume: f64) -> f64 {
    let total: f64 = values.iter().sum::<f64>() * cell_volume;
    values
        .iter()
        .map(|v| v / total)
        .filter(|&p| p > 0.0)
        .map(|p| cell_volume * p * (p * volume).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Entropy-regularized optimal density `C exp(r²/β)` on a grid of equal cells,
/// normalized to unit mass by midpoint quadrature.
pub fn closed_form_pstar(r2: &[f64], cell_volume: f64, beta: f64) -> Result<Vec<f64>> {
    if r2.iter().any(|v| !v.is_finite()) || !(beta > 0.0) {
        return Err(Error::InvalidArgument("closed-form density needs finite field and beta > 0".into()));
    }
    let max = r2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = r2.iter().map(|v| ((v - max) / beta).exp()).collect();
    let z: f64 = w.iter().sum::<f64>() * cell_volume;
    Ok(w.into_iter().map(|v| v / z).collect())
}

/// Adam ascent on the partition parameters with clamping and coverage rollback.
#[derive(Clone, Debug)]
pub struct AscentOptimizer {
    pub adam: Adam,
    pub lr0: f64,
    pub decay: f64,
}

/// Result of one ascent step.
#[derive(Clone, Debug, PartialEq)]
pub struct AscentOutcome {
    pub objective: f64,
    pub accepted: bool,
}

impl AscentOptimizer {
    /// Default decay halves the learning rate every 500 outer iterations.
    pub fn new(n_params: usize, lr0: f64) -> Self {
        Self { adam: Adam::new(n_params), lr0, decay: 0.5f64.powf(1.0 / 500.0) }
    }

    pub fn learning_rate(&self, outer_iteration: usize) -> f64 {
        self.lr0 * self.decay.powi(outer_iteration as i32)
    }

    /// One ascent step of `density.ascent_objective`. Rejected (and rolled
    /// back, Adam state included) if any of `tracked` becomes uncovered.
    pub fn step(
        &mut self,
        partition: &mut Partition,
        density: &AdaptiveDensity,
        samples: &InteriorSamples,
        r2: &[f64],
        lr: f64,
        tracked: &PointSet,
    ) -> Result<AscentOutcome> {
        let eval = density.ascent_objective(partition, samples, r2)?;
        let before = partition.params();
        let saved = self.adam.clone();
        let mut params = before.clone();
        let descent: Vec<f64> = eval.grad.iter().map(|g| -g).collect();
        self.adam.step(&mut params, &descent, lr)?;
        partition.set_params(&params)?;
        partition.project(&density.domain);
        if !partition.coverage_check(tracked).is_empty() || !partition.coverage_check(&samples.points).is_empty() {
            partition.set_params(&before)?;
            self.adam = saved;
            return Ok(AscentOutcome { objective: eval.value, accepted: false });
        }
        Ok(AscentOutcome { objective: eval.value, accepted: true })
    }
}
