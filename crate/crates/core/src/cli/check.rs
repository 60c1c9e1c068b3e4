//! Runtime invariant suite behind the `check` command.

use rand::Rng;

use crate::ensemble::EnsembleModel;
use crate::geometry::{DomainBox, PointSet, TensorGrid};
use crate::mlp::{init_params, Activation, MlpSpec};
use crate::optim::{lm_solve, normal_matrix, CollocationFit, CsrMatrix, LeastSquares, SolverOptions};
use crate::partition::{Ball, Partition, RadiusBounds};
use crate::pde::ProblemSpec;
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::{closed_form_pstar, AdaptiveDensity, InteriorSamples, Regularizer};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckOptions {
    /// Negative control: rescale every λ by `1 + 1e-6` so the partition
    /// check must fail.
    pub corrupt_gate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, err: f64, tol: f64) -> CheckResult {
    CheckResult { name, passed: err < tol, detail: format!("max error {err:.3e} (tolerance {tol:.0e})") }
}

pub fn run_checks(seed: u64, opts: CheckOptions) -> Vec<CheckResult> {
    vec![
        partition_of_unity(seed, opts),
        mlp_derivatives(seed),
        jacobian_fd(seed),
        normal_matrix_dense(seed),
        lm_linear(seed),
        closed_form_density(seed),
        sampler_statistics(seed),
        ascent_gradient(seed),
    ]
}

pub fn format_table(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&format!("{:<22} {}  {}\n", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    s
}

fn random_partition(rng: &mut impl Rng, m: usize) -> Partition {
    let balls = (0..m)
        .map(|_| Ball::new(vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)], rng.gen_range(0.2..0.6)))
        .collect();
    Partition::new(balls, RadiusBounds { min: 0.01, max: 2.0 })
}

fn partition_of_unity(seed: u64, opts: CheckOptions) -> CheckResult {
    let scale = if opts.corrupt_gate { 1.0 + 1e-6 } else { 1.0 };
    let mut worst: f64 = 0.0;
    for s in 0..5 {
        let mut rng = stream_rng(derive_seed(seed, 100 + s), 0);
        let p = random_partition(&mut rng, 6);
        let mut n = 0;
        while n < 500 {
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let Ok(g) = p.gate(&x) else { continue };
            n += 1;
            let sum: f64 = g.lambda.iter().map(|l| l * scale).sum();
            worst = worst.max((sum - 1.0).abs());
            for k in 0..2 {
                let dsum: f64 = (0..g.active.len()).map(|a| g.grad(a)[k] * scale).sum();
                worst = worst.max(dsum.abs() * 1e-2);
            }
        }
    }
    result("partition_of_unity", worst, 1e-12)
}

fn mlp_derivatives(seed: u64) -> CheckResult {
    let spec = MlpSpec::new(2, vec![6, 5], 1, Activation::Tanh).expect("valid spec");
    let params = init_params(&spec, seed);
    let theta = params.as_slice();
    let x = [0.3, -0.7];
    let b = spec.bundle(theta, &x).expect("shapes");
    let h = 1e-5;
    let f = |y: [f64; 2]| spec.forward(theta, &y).expect("shapes")[0];
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        let mut xp = x;
        xp[k] += h;
        let mut xm = x;
        xm[k] -= h;
        let fd = (f(xp) - f(xm)) / (2.0 * h);
        worst = worst.max((fd - b.grad_at(0, k)).abs() / fd.abs().max(1.0));
        let fd2 = (f(xp) - 2.0 * f(x) + f(xm)) / (h * h);
        worst = worst.max(1e-2 * (fd2 - b.hess_at(0, k, k)).abs() / fd2.abs().max(1.0));
    }
    result("mlp_derivatives", worst, 1e-6)
}

fn jacobian_fd(seed: u64) -> CheckResult {
    let mlp = MlpSpec::new(2, vec![5, 5], 1, Activation::Tanh).expect("valid spec");
    let part = Partition::new(
        vec![Ball::new(vec![0.3, 0.4], 0.6), Ball::new(vec![0.7, 0.6], 0.6)],
        RadiusBounds { min: 0.01, max: 2.0 },
    );
    let model = EnsembleModel::new(part, mlp, seed, false).expect("valid model");
    let problem = ProblemSpec::helmholtz(4.0, 1.0).expect("valid problem");
    let grid = TensorGrid::midpoints(&problem.domain, 5).points();
    let interior =
        PointSet::from_points(2, &grid.iter().filter(|x| model.partition.phi_sum(x) > 0.0).collect::<Vec<_>>())
            .expect("2d points");
    let boundary = PointSet::new(2);
    let fit = CollocationFit { model: &model, problem: &problem, interior: &interior, boundary: &boundary };
    let Ok((_, j)) = fit.assemble(&model) else {
        return CheckResult { name: "jacobian_fd", passed: false, detail: "assembly failed".into() };
    };
    let theta = model.theta().to_vec();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in (0..theta.len()).step_by(7) {
        let mut tp = theta.clone();
        tp[k] += h;
        let mut tm = theta.clone();
        tm[k] -= h;
        let (Ok(rp), Ok(rm)) = (fit.residual(&tp), fit.residual(&tm)) else {
            return CheckResult { name: "jacobian_fd", passed: false, detail: "residual failed".into() };
        };
        for i in 0..j.n_rows {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            worst = worst.max((j.get(i, k) - fd).abs() / fd.abs().max(1.0));
        }
    }
    result("jacobian_fd", worst, 1e-6)
}

fn normal_matrix_dense(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 7);
    let (m, n) = (40, 25);
    let dense: Vec<f64> =
        (0..m * n).map(|_| if rng.gen::<f64>() < 0.3 { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
    let h = normal_matrix(&CsrMatrix::from_dense(m, n, &dense));
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let exact: f64 = (0..m).map(|i| dense[i * n + a] * dense[i * n + b]).sum();
            worst = worst.max((h.get(a, b) - exact).abs());
            worst = worst.max((h.get(a, b) - h.get(b, a)).abs());
        }
    }
    result("normal_matrix", worst, 1e-12)
}

fn lm_linear(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 8);
    let (m, n) = (30, 6);
    let a: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let j = CsrMatrix::from_dense(m, n, &a);
    let r: Vec<f64> = b.iter().map(|v| -v).collect();
    let g = j.transpose_matvec(&r).expect("shapes");
    let Ok((delta, _)) = lm_solve(&normal_matrix(&j), &g, 0.0, &SolverOptions::default()) else {
        return CheckResult { name: "lm_linear", passed: false, detail: "solve failed".into() };
    };
    let res: Vec<f64> = (0..m).map(|i| (0..n).map(|k| a[i * n + k] * delta[k]).sum::<f64>() - b[i]).collect();
    let grad = j.transpose_matvec(&res).expect("shapes");
    let err = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    result("lm_linear", err, 1e-10)
}

/// Exponentiated-gradient ascent of `Σ h (r² p − β p log p)` over grid
/// densities, compared with the closed form.
fn closed_form_density(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 9);
    let n = 100;
    let cell = 1.0 / n as f64;
    let beta = 0.5;
    let r2: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
    let mut p = vec![1.0f64; n];
    for _ in 0..2000 {
        let grad: Vec<f64> = p.iter().zip(&r2).map(|(pi, r)| r - beta * (pi.ln() + 1.0)).collect();
        let w: Vec<f64> = p.iter().zip(&grad).map(|(pi, g)| pi * (0.5 * g).exp()).collect();
        let z: f64 = w.iter().sum::<f64>() * cell;
        p = w.into_iter().map(|v| v / z).collect();
    }
    let Ok(closed) = closed_form_pstar(&r2, cell, beta) else {
        return CheckResult { name: "closed_form_pstar", passed: false, detail: "closed form failed".into() };
    };
    let err = p.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    result("closed_form_pstar", err, 1e-6)
}

/// `E[|x − c|² / s²] = 1/4` for a single untruncated bump.
fn sampler_statistics(seed: u64) -> CheckResult {
    let domain = DomainBox::unit(2);
    let part = Partition::new(vec![Ball::new(vec![0.5, 0.5], 0.3)], RadiusBounds { min: 0.01, max: 2.0 });
    let Ok(density) = AdaptiveDensity::new(&part, domain, 0.1, Regularizer::Entropy, 10_000, seed) else {
        return CheckResult { name: "sampler_statistics", passed: false, detail: "density failed".into() };
    };
    let n = 20_000;
    let Ok(samples) = density.sample(&part, n, seed) else {
        return CheckResult { name: "sampler_statistics", passed: false, detail: "sampling failed".into() };
    };
    let mean = samples.points.iter().map(|x| part.balls[0].scaled_dist2(x)).sum::<f64>() / n as f64;
    // Standard error of the mean is sqrt(0.0375 / n).
    let se = (0.0375 / n as f64).sqrt();
    let z = (mean - 0.25).abs() / se;
    CheckResult { name: "sampler_statistics", passed: z < 5.0, detail: format!("mean {mean:.5}, z-score {z:.2}") }
}

fn ascent_gradient(seed: u64) -> CheckResult {
    let domain = DomainBox::unit(2);
    let part = Partition::new(
        vec![Ball::new(vec![0.35, 0.4], 0.45), Ball::new(vec![0.65, 0.6], 0.45)],
        RadiusBounds { min: 0.01, max: 2.0 },
    );
    let Ok(density) = AdaptiveDensity::new(&part, domain, 0.3, Regularizer::Entropy, 20_000, seed) else {
        return CheckResult { name: "ascent_gradient", passed: false, detail: "density failed".into() };
    };
    let Ok(samples) = density.sample(&part, 200, seed) else {
        return CheckResult { name: "ascent_gradient", passed: false, detail: "sampling failed".into() };
    };
    let r2: Vec<f64> = samples.points.iter().map(|x| (3.0 * x[0]).sin().powi(2) + x[1]).collect();
    let samples = InteriorSamples { points: samples.points, pdf: samples.pdf };
    let Ok(eval) = density.ascent_objective(&part, &samples, &r2) else {
        return CheckResult { name: "ascent_gradient", passed: false, detail: "objective failed".into() };
    };
    let params = part.params();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let value = |delta: f64| {
            let mut q = part.clone();
            let mut p = params.clone();
            p[k] += delta;
            q.set_params(&p).expect("same layout");
            density.ascent_objective(&q, &samples, &r2).map(|e| e.value)
        };
        let (Ok(fp), Ok(fm)) = (value(h), value(-h)) else {
            return CheckResult { name: "ascent_gradient", passed: false, detail: "objective failed".into() };
        };
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - eval.grad[k]).abs() / fd.abs().max(1.0));
    }
    result("ascent_gradient", worst, 1e-5)
}
