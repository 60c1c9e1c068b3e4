//! Reference computations written independently of the library code paths.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Five-point finite differences for `Δu + k u = f` with zero Dirichlet data on
/// the unit square, solved by red-black successive over-relaxation. Returns
/// interior values `u[(i-1) * n + (j-1)]` at `(i h, j h)`, `n = cells − 1`.
pub fn sor_helmholtz(k: f64, f: impl Fn(f64, f64) -> f64, cells: usize, tol: f64) -> Vec<f64> {
    let n = cells - 1;
    let h = 1.0 / cells as f64;
    let idx = |i: usize, j: usize| i * (n + 2) + j;
    let mut u = vec![0.0; (n + 2) * (n + 2)];
    let rhs: Vec<f64> = (0..(n + 2) * (n + 2))
        .map(|p| f((p / (n + 2)) as f64 * h, (p % (n + 2)) as f64 * h))
        .collect();
    let diag = -4.0 / (h * h) + k;
    let omega = 2.0 / (1.0 + (PI * h).sin());
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        for colour in 0..2 {
            for i in 1..=n {
                for j in 1..=n {
                    if (i + j) % 2 != colour {
                        continue;
                    }
                    let nb = u[idx(i - 1, j)] + u[idx(i + 1, j)] + u[idx(i, j - 1)] + u[idx(i, j + 1)];
                    let gs = (rhs[idx(i, j)] - nb / (h * h)) / diag;
                    let new = u[idx(i, j)] + omega * (gs - u[idx(i, j)]);
                    change = change.max((new - u[idx(i, j)]).abs());
                    u[idx(i, j)] = new;
                }
            }
        }
        if change < tol {
            break;
        }
    }
    let mut out = Vec::with_capacity(n * n);
    for i in 1..=n {
        for j in 1..=n {
            out.push(u[idx(i, j)]);
        }
    }
    out
}

/// Cole–Hopf solution of `u_t + u u_x = ν u_xx`, `u(x, 0) = −sin(πx)`, by the
/// trapezoidal rule in the heat-kernel variable. The integrand is a smooth,
/// rapidly decaying function, for which the trapezoidal rule converges
/// geometrically.
pub fn cole_hopf_trapezoid(nu: f64, x: f64, t: f64, nodes: usize) -> f64 {
    if t == 0.0 {
        return -(PI * x).sin();
    }
    let sd = (2.0 * nu * t).sqrt();
    let half_width = 40.0 * sd;
    let step = 2.0 * half_width / nodes as f64;
    let kappa = 1.0 / (2.0 * PI * nu);
    // Log-weights are shifted by their maximum before exponentiation.
    let logw = |eta: f64| -(PI * (x - eta)).cos() * kappa - eta * eta / (4.0 * nu * t);
    let mut shift = f64::NEG_INFINITY;
    for i in 0..=nodes {
        shift = shift.max(logw(-half_width + i as f64 * step));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=nodes {
        let eta = -half_width + i as f64 * step;
        let w = (logw(eta) - shift).exp();
        num += (PI * (x - eta)).sin() * w;
        den += w;
    }
    -num / den
}

/// Maximizer of `Σ h (r² p − β p ln p)` over grid densities with `Σ h p = 1`,
/// by mirror ascent with step `1/(2β)` until the iterates stop moving.
pub fn brute_force_pstar(r2: &[f64], cell: f64, beta: f64) -> Vec<f64> {
    let mut log_p = vec![0.0; r2.len()];
    for _ in 0..10_000 {
        let next: Vec<f64> = log_p.iter().zip(r2).map(|(lp, r)| 0.5 * lp + 0.5 * (r / beta)).collect();
        let max = next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = next.iter().map(|v| (v - max).exp()).sum::<f64>() * cell;
        let next: Vec<f64> = next.iter().map(|v| v - max - z.ln()).collect();
        let moved = next.iter().zip(&log_p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        log_p = next;
        if moved < 1e-15 {
            break;
        }
    }
    log_p.into_iter().map(f64::exp).collect()
}

/// Loss-weighted stationarity residual of a candidate maximizer: the KKT
/// condition says `r² − β(ln p + 1)` is constant on the grid.
pub fn pstar_kkt_spread(r2: &[f64], p: &[f64], beta: f64) -> f64 {
    let g: Vec<f64> = r2.iter().zip(p).map(|(r, pi)| r - beta * (pi.ln() + 1.0)).collect();
    let max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}
