//! Cole–Hopf solution of viscous Burgers with `u(x, 0) = −sin(πx)`.
//!
//! With `η = 2√(νt) z`,
//! `u(x, t) = −∫ sin(π(x−η)) F(x−η) e^{−z²} dz / ∫ F(x−η) e^{−z²} dz`,
//! `F(y) = exp(−cos(πy) / (2πν))`.

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use rayon::prelude::*;

use super::{ProblemKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::geometry::PointSet;

const Z_MAX: f64 = 14.0;
const INITIAL_PIECES: usize = 56;
const MAX_PIECES: usize = 4000;
const REL_TOL: f64 = 1e-12;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss weights at `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Piece {
    a: f64,
    b: f64,
    num: f64,
    den: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Kronrod estimates of both integrals on `[a, b]` with a shared error bound.
fn gk15(f: &impl Fn(f64) -> (f64, f64), a: f64, b: f64) -> Piece {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let (mut kn, mut kd, mut gn, mut gd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..8 {
        let pts: &[f64] = if i == 7 { &[0.0] } else { &[-1.0, 1.0] };
        for s in pts {
            let (n, d) = f(c + s * h * XGK[i]);
            kn += WGK[i] * n;
            kd += WGK[i] * d;
            if i % 2 == 1 {
                gn += WG[i / 2] * n;
                gd += WG[i / 2] * d;
            }
        }
    }
    let (num, den) = (kn * h, kd * h);
    let err = ((kn - gn) * h).abs().max(((kd - gd) * h).abs());
    Piece { a, b, num, den, err }
}

/// Cole–Hopf value at one point.
pub fn burgers_reference_at(nu: f64, x: f64, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(-(PI * x).sin());
    }
    let scale = 2.0 * (nu * t).sqrt();
    let kappa = 1.0 / (2.0 * PI * nu);
    let integrand = |z: f64| {
        let y = x - scale * z;
        // Shift by the maximum of −cos/(2πν) so every weight is at most 1.
        let w = (-(PI * y).cos() * kappa - kappa - z * z).exp();
        ((PI * y).sin() * w, w)
    };
    let width = 2.0 * Z_MAX / INITIAL_PIECES as f64;
    let mut heap: BinaryHeap<Piece> = (0..INITIAL_PIECES)
        .map(|i| {
            let a = -Z_MAX + i as f64 * width;
            gk15(&integrand, a, a + width)
        })
        .collect();
    loop {
        // Sum in a fixed order so results do not depend on heap layout.
        let mut pieces: Vec<&Piece> = heap.iter().collect();
        pieces.sort_by(|p, q| p.a.total_cmp(&q.a));
        let den: f64 = pieces.iter().map(|p| p.den).sum();
        let num: f64 = pieces.iter().map(|p| p.num).sum();
        let err: f64 = pieces.iter().map(|p| p.err).sum();
        if err <= REL_TOL * den.abs() {
            return Ok(-num / den);
        }
        if heap.len() >= MAX_PIECES {
            return Err(Error::QuadratureFailure { x, t, error_estimate: err / den.abs() });
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(gk15(&integrand, worst.a, mid));
        heap.push(gk15(&integrand, mid, worst.b));
    }
}

/// Cole–Hopf values at `(x, t)` points.
pub fn burgers_reference(problem: &ProblemSpec, points: &PointSet) -> Result<Vec<f64>> {
    let ProblemKind::Burgers { nu } = problem.kind else {
        return Err(Error::KindMismatch(format!("{} has no Burgers oracle", problem.kind.name())));
    };
    crate::error::check_dim(2, points.dim())?;
    let pts: Vec<&[f64]> = points.iter().collect();
    pts.par_iter().map(|p| burgers_reference_at(nu, p[0], p[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const NU: f64 = 0.01 / PI;

    /// Conservative central differences in space, Crank–Nicolson diffusion,
    /// second-order Adams–Bashforth convection. Returns snapshots at `times`.
    fn finite_difference_burgers(dx: f64, dt: f64, times: &[f64]) -> Vec<Vec<f64>> {
        let cells = (2.0 / dx).round() as usize;
        let n = cells - 1;
        let mut u: Vec<f64> = (1..=n).map(|i| -(PI * (-1.0 + i as f64 * dx)).sin()).collect();
        let r = NU * dt / (2.0 * dx * dx);
        let convect = |u: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let l = if i == 0 { 0.0 } else { u[i - 1] };
                    let rr = if i + 1 == n { 0.0 } else { u[i + 1] };
                    -(rr * rr - l * l) / (4.0 * dx)
                })
                .collect()
        };
        let mut prev = convect(&u);
        let mut out = Vec::new();
        let mut t = 0.0;
        let mut next_target = 0;
        let steps = (times[times.len() - 1] / dt).round() as usize;
        let (mut cp, mut dp) = (vec![0.0; n], vec![0.0; n]);
        for step in 0..steps {
            let c = convect(&u);
            let rhs: Vec<f64> = (0..n)
                .map(|i| {
                    let l = if i == 0 { 0.0 } else { u[i - 1] };
                    let rr = if i + 1 == n { 0.0 } else { u[i + 1] };
                    let adv = if step == 0 { c[i] } else { 1.5 * c[i] - 0.5 * prev[i] };
                    u[i] + r * (l - 2.0 * u[i] + rr) + dt * adv
                })
                .collect();
            // Thomas algorithm for (1 + 2r) u_i − r u_{i±1} = rhs_i.
            let (a, b) = (-r, 1.0 + 2.0 * r);
            cp[0] = a / b;
            dp[0] = rhs[0] / b;
            for i in 1..n {
                let m = b - a * cp[i - 1];
                cp[i] = a / m;
                dp[i] = (rhs[i] - a * dp[i - 1]) / m;
            }
            u[n - 1] = dp[n - 1];
            for i in (0..n - 1).rev() {
                u[i] = dp[i] - cp[i] * u[i + 1];
            }
            prev = c;
            t += dt;
            if ((t - times[next_target]) / dt).abs() < 0.5 {
                let mut snap = vec![0.0];
                snap.extend_from_slice(&u);
                snap.push(0.0);
                out.push(snap);
                next_target += 1;
            }
        }
        out
    }

    #[test]
    fn initial_time_limit() {
        assert_eq!(burgers_reference_at(NU, 0.5, 0.0).unwrap(), -1.0);
        let u = burgers_reference_at(NU, 0.5, 1e-10).unwrap();
        assert!((u + 1.0).abs() < 1e-6, "{u}");
    }

    #[test]
    fn odd_symmetry() {
        for t in [0.05, 0.3, 0.6, 1.0] {
            assert!(burgers_reference_at(NU, 0.0, t).unwrap().abs() < 1e-10);
            let a = burgers_reference_at(NU, 0.3, t).unwrap();
            let b = burgers_reference_at(NU, -0.3, t).unwrap();
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn values_obey_maximum_principle() {
        for i in 0..=40 {
            for t in [0.1, 0.5, 1.0] {
                let x = -1.0 + i as f64 * 0.05;
                let u = burgers_reference_at(NU, x, t).unwrap();
                assert!(u.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn agrees_with_finite_difference_time_stepper() {
        let times = [0.1, 0.2, 0.3, 0.5, 0.75, 1.0];
        let dx = 5e-4;
        let snaps = finite_difference_burgers(dx, 1e-4, &times);
        assert_eq!(snaps.len(), times.len());
        let mut worst = 0.0f64;
        for (t, snap) in times.iter().zip(&snaps) {
            for i in (0..snap.len()).step_by(100) {
                let x = -1.0 + i as f64 * dx;
                // After the shock forms, compare away from it.
                if *t > 0.3 && x.abs() < 0.4 {
                    continue;
                }
                let u = burgers_reference_at(NU, x, *t).unwrap();
                worst = worst.max((u - snap[i]).abs());
            }
        }
        assert!(worst < 1e-4, "max deviation {worst}");
    }

    #[test]
    fn steep_front_is_resolved() {
        // Near the shock the solution passes from ≈ +0.8 to ≈ −0.8 within
        // a few viscous lengths; quadrature must still converge.
        let u = burgers_reference_at(NU, -0.01, 1.0).unwrap();
        assert!(u > 0.5, "{u}");
        let u = burgers_reference_at(NU, 0.01, 1.0).unwrap();
        assert!(u < -0.5, "{u}");
    }
}
