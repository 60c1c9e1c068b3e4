//! Quartic radial-basis partition of unity.
//!
//! Each ball carries the compactly supported bump
//!
//! ```text
//! φ(x) = (1 - |x - c|² / s²)²   for |x - c| ≤ s,   0 otherwise,
//! ```
//!
//! and the gating weights are `λ_j = φ_j / Σ_l φ_l`. The bump is C¹ across the
//! support boundary; its second derivative jumps there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{DomainBox, PointSet};

/// Offset applied to points that sit exactly on a support boundary.
pub const BOUNDARY_NUDGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Spatial derivatives of one bump.
#[derive(Clone, Debug, PartialEq)]
pub struct BumpDerivs {
    pub value: f64,
    pub grad: Vec<f64>,
    /// `d × d`, row-major.
    pub hess: Vec<f64>,
}

/// Derivatives of one bump with respect to its own center and radius.
#[derive(Clone, Debug, PartialEq)]
pub struct BumpParamGrad {
    pub value: f64,
    pub d_center: Vec<f64>,
    pub d_radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `|x - c|² / s²`.
    #[inline]
    pub fn scaled_dist2(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        r2 / (self.radius * self.radius)
    }

    /// `φ(x) > 0`.
    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.phi(x) > 0.0
    }

    #[inline]
    pub fn phi(&self, x: &[f64]) -> f64 {
        let q = self.scaled_dist2(x);
        if q < 1.0 {
            (1.0 - q) * (1.0 - q)
        } else {
            0.0
        }
    }

    pub fn phi_derivs(&self, x: &[f64]) -> BumpDerivs {
        let d = self.dim();
        let mut out = BumpDerivs { value: 0.0, grad: vec![0.0; d], hess: vec![0.0; d * d] };
        let q = self.scaled_dist2(x);
        if q >= 1.0 {
            return out;
        }
        let s2 = self.radius * self.radius;
        let t = 1.0 - q;
        out.value = t * t;
        for k in 0..d {
            let dk = x[k] - self.center[k];
            out.grad[k] = -4.0 * t * dk / s2;
            for l in 0..d {
                let dl = x[l] - self.center[l];
                let mut v = 8.0 * dk * dl / (s2 * s2);
                if k == l {
                    v -= 4.0 * t / s2;
                }
                out.hess[k * d + l] = v;
            }
        }
        out
    }

    pub fn phi_param_grad(&self, x: &[f64]) -> BumpParamGrad {
        let d = self.dim();
        let mut out = BumpParamGrad { value: 0.0, d_center: vec![0.0; d], d_radius: 0.0 };
        let q = self.scaled_dist2(x);
        if q >= 1.0 {
            return out;
        }
        let s = self.radius;
        let t = 1.0 - q;
        out.value = t * t;
        for k in 0..d {
            out.d_center[k] = 4.0 * t * (x[k] - self.center[k]) / (s * s);
        }
        out.d_radius = 4.0 * t * q / s;
        out
    }

    /// Spatial gradient of φ and its derivatives with respect to the center
    /// (`d × d`, entry `[k][m] = ∂(∂_k φ)/∂c_m`) and radius.
    pub fn phi_grad_param_grad(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let q = self.scaled_dist2(x);
        if q >= 1.0 {
            return (vec![0.0; d], vec![0.0; d * d], vec![0.0; d]);
        }
        let derivs = self.phi_derivs(x);
        let s = self.radius;
        let d_center = derivs.hess.iter().map(|h| -h).collect();
        let d_radius = (0..d)
            .map(|k| -8.0 * (x[k] - self.center[k]) * (2.0 * q - 1.0) / (s * s * s))
            .collect();
        (derivs.grad, d_center, d_radius)
    }
}

/// Admissible radius interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusBounds {
    pub min: f64,
    pub max: f64,
}

impl RadiusBounds {
    /// `[0.05, 1.0] × diagonal`.
    pub fn for_domain(domain: &DomainBox) -> Self {
        let diag = domain.diagonal();
        Self { min: 0.05 * diag, max: diag }
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.min, self.max)
    }
}

/// Normalized gating weights at one point, restricted to the covering balls.
#[derive(Clone, Debug, PartialEq)]
pub struct GateEval {
    pub dim: usize,
    pub active: Vec<usize>,
    pub lambda: Vec<f64>,
    /// `active.len() × dim`.
    pub dlambda: Vec<f64>,
    /// `active.len() × dim × dim`.
    pub d2lambda: Vec<f64>,
}

impl GateEval {
    pub fn grad(&self, a: usize) -> &[f64] {
        &self.dlambda[a * self.dim..(a + 1) * self.dim]
    }

    pub fn hess(&self, a: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.d2lambda[a * dd..(a + 1) * dd]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub balls: Vec<Ball>,
    pub frozen_radii: bool,
    pub bounds: RadiusBounds,
}

impl Partition {
    pub fn new(balls: Vec<Ball>, bounds: RadiusBounds) -> Self {
        Self { balls, frozen_radii: false, bounds }
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.balls.first().map_or(0, Ball::dim)
    }

    pub fn phi_sum(&self, x: &[f64]) -> f64 {
        self.balls.iter().map(|b| b.phi(x)).sum()
    }

    fn uncovered(x: &[f64], index: Option<usize>) -> Error {
        Error::UncoveredPoint { index, point: x.to_vec() }
    }

    /// Covering balls and their weights, without derivatives.
    pub fn gate_values(&self, x: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
        check_dim(self.dim(), x.len())?;
        let mut active = Vec::new();
        let mut lambda = Vec::new();
        for (j, b) in self.balls.iter().enumerate() {
            let p = b.phi(x);
            if p > 0.0 {
                active.push(j);
                lambda.push(p);
            }
        }
        let total: f64 = lambda.iter().sum();
        if !(total > 0.0) {
            return Err(Self::uncovered(x, None));
        }
        for l in &mut lambda {
            *l /= total;
        }
        Ok((active, lambda))
    }

    /// Gating weights with spatial gradients and Hessians (quotient rule).
    pub fn gate(&self, x: &[f64]) -> Result<GateEval> {
        let d = self.dim();
        check_dim(d, x.len())?;
        let mut active = Vec::new();
        let mut bumps = Vec::new();
        for (j, b) in self.balls.iter().enumerate() {
            if b.contains(x) {
                active.push(j);
                bumps.push(b.phi_derivs(x));
            }
        }
        let total: f64 = bumps.iter().map(|b| b.value).sum();
        if !(total > 0.0) {
            return Err(Self::uncovered(x, None));
        }
        let mut gs = vec![0.0; d];
        let mut hs = vec![0.0; d * d];
        for b in &bumps {
            for k in 0..d {
                gs[k] += b.grad[k];
            }
            for kl in 0..d * d {
                hs[kl] += b.hess[kl];
            }
        }
        let n = active.len();
        let mut lambda = Vec::with_capacity(n);
        let mut dlambda = vec![0.0; n * d];
        let mut d2lambda = vec![0.0; n * d * d];
        for (a, b) in bumps.iter().enumerate() {
            let lam = b.value / total;
            lambda.push(lam);
            for k in 0..d {
                dlambda[a * d + k] = (b.grad[k] - lam * gs[k]) / total;
            }
            for k in 0..d {
                for l in 0..d {
                    let kl = k * d + l;
                    d2lambda[a * d * d + kl] = (b.hess[kl]
                        - (b.grad[k] * gs[l] + gs[k] * b.grad[l]) / total
                        - lam * hs[kl]
                        + 2.0 * lam * gs[k] * gs[l] / total)
                        / total;
                }
            }
        }
        Ok(GateEval { dim: d, active, lambda, dlambda, d2lambda })
    }

    /// Indices of points where no bump is positive.
    pub fn coverage_check(&self, points: &PointSet) -> Vec<usize> {
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| !self.balls.iter().any(|b| b.contains(p)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Moves `x` strictly inside any ball whose support boundary it sits on.
    pub fn nudge_off_boundaries(&self, x: &mut [f64]) {
        for b in &self.balls {
            let dist = b.scaled_dist2(x).sqrt() * b.radius;
            if (dist - b.radius).abs() <= BOUNDARY_NUDGE * b.radius.max(1.0) && dist > 0.0 {
                let step = 2.0 * BOUNDARY_NUDGE * b.radius.max(1.0) / dist;
                for (v, c) in x.iter_mut().zip(&b.center) {
                    *v += (c - *v) * step;
                }
            }
        }
    }

    /// Clamps radii to the configured bounds and centers into `domain`.
    pub fn project(&mut self, domain: &DomainBox) {
        for b in &mut self.balls {
            b.radius = self.bounds.clamp(b.radius);
            domain.clamp(&mut b.center);
        }
    }

    /// Trainable parameters `[c_0, s_0, c_1, s_1, …]`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * (self.dim() + 1));
        for b in &self.balls {
            out.extend_from_slice(&b.center);
            out.push(b.radius);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let d = self.dim();
        check_dim(self.len() * (d + 1), p.len())?;
        for (b, chunk) in self.balls.iter_mut().zip(p.chunks_exact(d + 1)) {
            b.center.copy_from_slice(&chunk[..d]);
            b.radius = chunk[d];
        }
        Ok(())
    }

    /// Grows the nearest ball over every uncovered point (relative margin
    /// `factor - 1`), ignoring the radius cap.
    pub fn cover(&mut self, points: &PointSet, factor: f64) {
        for i in self.coverage_check(points) {
            let p = points.get(i);
            let (j, dist) = self
                .balls
                .iter()
                .enumerate()
                .map(|(j, b)| (j, b.scaled_dist2(p).sqrt() * b.radius))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            self.balls[j].radius = self.balls[j].radius.max(dist * factor);
        }
    }
}

/// Per-cluster spread logged by [`kmeans_init`].
#[derive(Clone, Debug, PartialEq)]
pub struct KmeansReport {
    pub iterations: usize,
    pub std_dev: Vec<f64>,
    pub max_dist: Vec<f64>,
}

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-10;
const KMEANS_RETRIES: usize = 10;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dist2(c, p)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// Returns the centers and the assignment of every point.
pub fn kmeans(points: &PointSet, m: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>, usize)> {
    if m == 0 || points.len() < m {
        return Err(Error::InvalidArgument(format!(
            "k-means needs at least {m} points, got {}",
            points.len()
        )));
    }
    let n = points.len();
    'retry: for attempt in 0..=KMEANS_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let mut centers = vec![points.get(rng.gen_range(0..n)).to_vec()];
        let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
        while centers.len() < m {
            let total: f64 = d2.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.gen::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if u < w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            } else {
                rng.gen_range(0..n)
            };
            let c = points.get(next).to_vec();
            for (i, p) in points.iter().enumerate() {
                d2[i] = d2[i].min(dist2(p, &c));
            }
            centers.push(c);
        }

        let dim = points.dim();
        let mut assign = vec![0usize; n];
        for iter in 1..=KMEANS_MAX_ITERS {
            for (i, p) in points.iter().enumerate() {
                assign[i] = nearest(&centers, p).0;
            }
            let mut sums = vec![vec![0.0; dim]; m];
            let mut counts = vec![0usize; m];
            for (i, p) in points.iter().enumerate() {
                counts[assign[i]] += 1;
                for (s, v) in sums[assign[i]].iter_mut().zip(p) {
                    *s += v;
                }
            }
            if counts.contains(&0) {
                continue 'retry;
            }
            let mut moved = 0.0f64;
            for j in 0..m {
                let new: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                moved = moved.max(dist2(&new, &centers[j]).sqrt());
                centers[j] = new;
            }
            if moved < KMEANS_TOL {
                for (i, p) in points.iter().enumerate() {
                    assign[i] = nearest(&centers, p).0;
                }
                return Ok((centers, assign, iter));
            }
        }
        for (i, p) in points.iter().enumerate() {
            assign[i] = nearest(&centers, p).0;
        }
        let mut counts = vec![0usize; m];
        for &a in &assign {
            counts[a] += 1;
        }
        if counts.contains(&0) {
            continue;
        }
        return Ok((centers, assign, KMEANS_MAX_ITERS));
    }
    Err(Error::DegenerateClusters { retries: KMEANS_RETRIES })
}

/// Places one ball per k-means cluster, with radius `coverage_factor` times
/// the largest center-to-member distance.
pub fn kmeans_init(
    points: &PointSet,
    m: usize,
    coverage_factor: f64,
    bounds: RadiusBounds,
    seed: u64,
) -> Result<(Partition, KmeansReport)> {
    if !(coverage_factor >= 1.0) {
        return Err(Error::InvalidArgument("coverage factor must be at least 1".into()));
    }
    let (centers, assign, iterations) = kmeans(points, m, seed)?;
    let mut max_dist = vec![0.0f64; m];
    let mut sq = vec![0.0f64; m];
    let mut counts = vec![0usize; m];
    for (i, p) in points.iter().enumerate() {
        let j = assign[i];
        let d2 = dist2(p, &centers[j]);
        max_dist[j] = max_dist[j].max(d2.sqrt());
        sq[j] += d2;
        counts[j] += 1;
    }
    let std_dev = sq.iter().zip(&counts).map(|(s, &c)| (s / c as f64).sqrt()).collect();
    let balls = centers
        .into_iter()
        .zip(&max_dist)
        .map(|(c, &r)| Ball::new(c, bounds.clamp(coverage_factor * r)))
        .collect();
    Ok((Partition::new(balls, bounds), KmeansReport { iterations, std_dev, max_dist }))
}
