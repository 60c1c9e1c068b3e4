//! The gated mixture `u(x) = Σ_j λ_j(x) U_j(x)` of local expert networks.

use crate::error::{check_dim, Error, Result};
use crate::mlp::{init_params, DerivativeBundle, JetOrder, MlpSpec, Tape};
use crate::partition::{GateEval, Partition};
use crate::rng::derive_seed;

/// Partition of unity plus one expert network per ball.
///
/// Parameters live in one flat vector, ball-major: expert `j` owns
/// `theta[offsets[j]..offsets[j] + per_expert]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub partition: Partition,
    pub mlp: MlpSpec,
    theta: Vec<f64>,
    offsets: Vec<usize>,
}

impl EnsembleModel {
    /// Seeded Glorot initialization of every expert. With `zero_output_layer`
    /// the final affine layer of each expert starts at zero, so the untrained
    /// model predicts 0 everywhere.
    pub fn new(partition: Partition, mlp: MlpSpec, seed: u64, zero_output_layer: bool) -> Result<Self> {
        check_dim(mlp.input_dim, partition.dim())?;
        let mut theta = Vec::with_capacity(partition.len() * mlp.param_count());
        for j in 0..partition.len() {
            let mut block = init_params(&mlp, derive_seed(seed, j as u64));
            if zero_output_layer {
                block.zero_output_layer();
            }
            theta.extend_from_slice(block.as_slice());
        }
        Self::from_parts(partition, mlp, theta)
    }

    pub fn from_parts(partition: Partition, mlp: MlpSpec, theta: Vec<f64>) -> Result<Self> {
        if partition.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one ball".into()));
        }
        check_dim(mlp.input_dim, partition.dim())?;
        let per = mlp.param_count();
        check_dim(partition.len() * per, theta.len())?;
        let offsets = (0..partition.len()).map(|j| j * per).collect();
        Ok(Self { partition, mlp, theta, offsets })
    }

    pub fn n_balls(&self) -> usize {
        self.partition.len()
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn params_per_expert(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        check_dim(self.theta.len(), theta.len())?;
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub fn expert(&self, j: usize) -> &[f64] {
        let o = self.offsets[j];
        &self.theta[o..o + self.params_per_expert()]
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (active, lambda) = self.partition.gate_values(x)?;
        let mut out = vec![0.0; self.mlp.output_dim];
        for (&j, &lam) in active.iter().zip(&lambda) {
            let u = self.mlp.forward(self.expert(j), x)?;
            for (o, v) in out.iter_mut().zip(&u) {
                *o += lam * v;
            }
        }
        Ok(out)
    }

    pub fn predict_bundle(&self, x: &[f64]) -> Result<DerivativeBundle> {
        Ok(self.linearize(x, JetOrder::Full)?.bundle().clone())
    }

    /// Records expert tapes at `x` so that many parameter rows can be pulled
    /// back from one forward evaluation.
    pub fn linearize(&self, x: &[f64], order: JetOrder) -> Result<PointLinearization<'_>> {
        let d = self.mlp.input_dim;
        let out_dim = self.mlp.output_dim;
        let gate = match order {
            JetOrder::Full => self.partition.gate(x)?,
            JetOrder::Value => {
                let (active, lambda) = self.partition.gate_values(x)?;
                let n = active.len();
                GateEval {
                    dim: d,
                    active,
                    lambda,
                    dlambda: vec![0.0; n * d],
                    d2lambda: vec![0.0; n * d * d],
                }
            }
        };
        let tapes = gate
            .active
            .iter()
            .map(|&j| self.mlp.tape(self.expert(j), x, order))
            .collect::<Result<Vec<Tape>>>()?;

        let mut bundle = DerivativeBundle::zeros(d, out_dim);
        let width = order.width(d);
        for (a, tape) in tapes.iter().enumerate() {
            let lam = gate.lambda[a];
            let jets = tape.output_jets();
            for o in 0..out_dim {
                let u = &jets[o * width..(o + 1) * width];
                bundle.value[o] += lam * u[0];
                if order == JetOrder::Value {
                    continue;
                }
                let dl = gate.grad(a);
                let hl = gate.hess(a);
                let ug = &u[1..1 + d];
                let uh = &u[1 + d..];
                for k in 0..d {
                    *bundle.grad_mut(o, k) += lam * ug[k] + u[0] * dl[k];
                    for l in 0..d {
                        *bundle.hess_mut(o, k, l) += lam * uh[k * d + l]
                            + dl[k] * ug[l]
                            + ug[k] * dl[l]
                            + u[0] * hl[k * d + l];
                    }
                }
            }
        }
        Ok(PointLinearization { model: self, order, gate, tapes, bundle })
    }

    /// Nonzero entries of `∂<cotangent, bundle(x)>/∂θ`, sorted by column.
    pub fn sparse_param_row(&self, x: &[f64], cotangent: &DerivativeBundle) -> Result<Vec<(usize, f64)>> {
        check_dim(self.mlp.output_dim, cotangent.output_dim)?;
        check_dim(self.mlp.input_dim, cotangent.input_dim)?;
        let lin = self.linearize(x, JetOrder::Full)?;
        let mut row = Vec::new();
        lin.row_into(cotangent, &mut row);
        Ok(row)
    }
}

/// Expert tapes and gating at one point.
pub struct PointLinearization<'a> {
    model: &'a EnsembleModel,
    order: JetOrder,
    gate: GateEval,
    tapes: Vec<Tape>,
    bundle: DerivativeBundle,
}

impl PointLinearization<'_> {
    /// Ensemble value (and derivatives, for [`JetOrder::Full`]) at the point.
    pub fn bundle(&self) -> &DerivativeBundle {
        &self.bundle
    }

    pub fn gate(&self) -> &GateEval {
        &self.gate
    }

    /// Appends the sparse parameter row of `<cotangent, bundle>` to `row`.
    ///
    /// On a value-only linearization only `cotangent.value` is used.
    pub fn row_into(&self, cotangent: &DerivativeBundle, row: &mut Vec<(usize, f64)>) {
        let m = self.model;
        let d = m.mlp.input_dim;
        let out_dim = m.mlp.output_dim;
        let width = self.order.width(d);
        let per = m.params_per_expert();
        let mut expert_cot = vec![0.0; out_dim * width];
        let mut grad = vec![0.0; per];
        for (a, tape) in self.tapes.iter().enumerate() {
            let j = self.gate.active[a];
            let lam = self.gate.lambda[a];
            let dl = self.gate.grad(a);
            let hl = self.gate.hess(a);
            for o in 0..out_dim {
                let c = &mut expert_cot[o * width..(o + 1) * width];
                let cv = cotangent.value[o];
                if self.order == JetOrder::Value {
                    c[0] = lam * cv;
                    continue;
                }
                let mut v = lam * cv;
                for k in 0..d {
                    v += dl[k] * cotangent.grad_at(o, k);
                    for l in 0..d {
                        v += hl[k * d + l] * cotangent.hess_at(o, k, l);
                    }
                }
                c[0] = v;
                for mm in 0..d {
                    let mut g = lam * cotangent.grad_at(o, mm);
                    for k in 0..d {
                        g += (cotangent.hess_at(o, k, mm) + cotangent.hess_at(o, mm, k)) * dl[k];
                    }
                    c[1 + mm] = g;
                }
                for k in 0..d {
                    for l in 0..d {
                        c[1 + d + k * d + l] = lam * cotangent.hess_at(o, k, l);
                    }
                }
            }
            grad.fill(0.0);
            tape.vjp_into(&m.mlp, m.expert(j), &expert_cot, &mut grad);
            let off = m.offsets[j];
            row.extend(grad.iter().enumerate().map(|(i, &g)| (off + i, g)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Activation;
    use crate::partition::{Ball, RadiusBounds};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bounds() -> RadiusBounds {
        RadiusBounds { min: 1e-3, max: 10.0 }
    }

    fn model(balls: Vec<Ball>, widths: &[usize], seed: u64) -> EnsembleModel {
        let spec = MlpSpec::new(2, widths.to_vec(), 1, Activation::Tanh).unwrap();
        let mut m = EnsembleModel::new(Partition::new(balls, bounds()), spec, seed, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = m.theta().iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect();
        m.set_theta(&t).unwrap();
        m
    }

    fn three_balls() -> Vec<Ball> {
        vec![
            Ball::new(vec![0.2, 0.3], 0.6),
            Ball::new(vec![0.7, 0.6], 0.5),
            Ball::new(vec![0.5, 0.9], 0.45),
        ]
    }

    /// Dense Σ_j λ_j U_j over every ball, computed from raw bumps.
    fn naive_predict(m: &EnsembleModel, x: &[f64]) -> f64 {
        let phis: Vec<f64> = m.partition.balls.iter().map(|b| b.phi(x)).collect();
        let total: f64 = phis.iter().sum();
        (0..m.n_balls())
            .map(|j| phis[j] / total * m.mlp.forward(m.expert(j), x).unwrap()[0])
            .sum()
    }

    fn interior_points(m: &EnsembleModel, n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        while pts.len() < n {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let safe = m.partition.balls.iter().all(|b| (b.scaled_dist2(&x) - 1.0).abs() > 1e-2);
            if safe && m.partition.phi_sum(&x) > 0.0 {
                pts.push(x);
            }
        }
        pts
    }

    #[test]
    fn single_ball_reduces_to_plain_mlp() {
        let m = model(vec![Ball::new(vec![0.5, 0.5], 100.0)], &[6, 6], 1);
        let x = [0.3, 0.8];
        assert_eq!(m.predict(&x).unwrap(), m.mlp.forward(m.expert(0), &x).unwrap());
        let b = m.predict_bundle(&x).unwrap();
        let e = m.mlp.bundle(m.expert(0), &x).unwrap();
        for (u, v) in b.grad.iter().zip(&e.grad) {
            assert!((u - v).abs() < 1e-5);
        }
        let mut cot = DerivativeBundle::zeros(2, 1);
        cot.value[0] = 1.0;
        let row = m.sparse_param_row(&x, &cot).unwrap();
        let dense = m.mlp.bundle_vjp(m.expert(0), &x, &cot).unwrap();
        assert_eq!(row.len(), dense.len());
        for ((c, v), (i, w)) in row.iter().zip(dense.iter().enumerate()) {
            assert_eq!(*c, i);
            assert!((v - w).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_experts_ignore_gating() {
        let mut m = model(three_balls(), &[5], 2);
        let e0 = m.expert(0).to_vec();
        let t: Vec<f64> = (0..3).flat_map(|_| e0.clone()).collect();
        m.set_theta(&t).unwrap();
        let x = [0.6, 0.6];
        let f = m.mlp.forward(&e0, &x).unwrap()[0];
        assert!((m.predict(&x).unwrap()[0] - f).abs() < 1e-15);
    }

    #[test]
    fn predict_matches_dense_naive_evaluator() {
        let m = model(three_balls(), &[6, 4], 3);
        for x in interior_points(&m, 50, 4) {
            assert!((m.predict(&x).unwrap()[0] - naive_predict(&m, &x)).abs() < 1e-14);
        }
    }

    #[test]
    fn uncovered_point_is_error() {
        let m = model(vec![Ball::new(vec![0.0, 0.0], 0.2)], &[3], 0);
        assert!(matches!(m.predict(&[0.9, 0.9]), Err(Error::UncoveredPoint { .. })));
    }

    #[test]
    fn bundle_matches_finite_differences() {
        let m = model(three_balls(), &[6, 4], 5);
        let f = |x: &[f64]| m.predict(x).unwrap()[0];
        let h = 1e-5;
        for x in interior_points(&m, 40, 6) {
            let b = m.predict_bundle(&x).unwrap();
            assert_eq!(b.value[0], m.predict(&x).unwrap()[0]);
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!((b.grad_at(0, k) - fd).abs() <= 1e-6 * fd.abs().max(1.0));
                let gp = m.predict_bundle(&xp).unwrap();
                let gm = m.predict_bundle(&xm).unwrap();
                for l in 0..2 {
                    let fd2 = (gp.grad_at(0, l) - gm.grad_at(0, l)) / (2.0 * h);
                    assert!((b.hess_at(0, l, k) - fd2).abs() <= 1e-4 * fd2.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn sparse_row_matches_dense_finite_difference_jacobian() {
        let m = model(three_balls(), &[5, 4], 7);
        assert!(m.n_params() <= 200);
        let h = 1e-6;
        for x in interior_points(&m, 15, 8) {
            let mut cot = DerivativeBundle::zeros(2, 1);
            cot.value[0] = 0.7;
            *cot.grad_mut(0, 0) = -0.4;
            *cot.hess_mut(0, 0, 0) = 1.0;
            *cot.hess_mut(0, 1, 1) = 1.0;
            *cot.hess_mut(0, 0, 1) = 0.3;
            let functional = |mm: &EnsembleModel| {
                let b = mm.predict_bundle(&x).unwrap();
                b.value.iter().zip(&cot.value).map(|(a, c)| a * c).sum::<f64>()
                    + b.grad.iter().zip(&cot.grad).map(|(a, c)| a * c).sum::<f64>()
                    + b.hess.iter().zip(&cot.hess).map(|(a, c)| a * c).sum::<f64>()
            };
            let row = m.sparse_param_row(&x, &cot).unwrap();
            let mut dense = vec![0.0; m.n_params()];
            for &(c, v) in &row {
                dense[c] = v;
            }
            for w in row.windows(2) {
                assert!(w[0].0 < w[1].0);
            }
            let (active, _) = m.partition.gate_values(&x).unwrap();
            for i in 0..m.n_params() {
                let mut mp = m.clone();
                let mut mm = m.clone();
                let mut t = m.theta().to_vec();
                t[i] += h;
                mp.set_theta(&t).unwrap();
                t[i] -= 2.0 * h;
                mm.set_theta(&t).unwrap();
                let fd = (functional(&mp) - functional(&mm)) / (2.0 * h);
                assert!((dense[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "param {i}: {} vs {fd}", dense[i]);
                let ball = i / m.params_per_expert();
                if !active.contains(&ball) {
                    assert_eq!(fd, 0.0);
                    assert!(row.iter().all(|&(c, _)| c / m.params_per_expert() != ball));
                }
            }
        }
    }

    #[test]
    fn perturbing_an_expert_is_local() {
        let m = model(three_balls(), &[4], 9);
        let mut t = m.theta().to_vec();
        for v in &mut t[m.offsets()[2]..] {
            *v += 0.5;
        }
        let mut m2 = m.clone();
        m2.set_theta(&t).unwrap();
        for x in interior_points(&m, 200, 10) {
            let changed = m.predict(&x).unwrap() != m2.predict(&x).unwrap();
            if !m.partition.balls[2].contains(&x) {
                assert!(!changed);
            }
        }
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let spec = MlpSpec::new(2, vec![4], 1, Activation::Sin).unwrap();
        let m = EnsembleModel::new(Partition::new(three_balls(), bounds()), spec, 3, true).unwrap();
        assert_eq!(m.predict(&[0.5, 0.5]).unwrap(), vec![0.0]);
    }
}
