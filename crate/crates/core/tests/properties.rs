//! Randomized invariants of the public API.

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pinn_balls::ensemble::EnsembleModel;
use pinn_balls::geometry::PointSet;
use pinn_balls::mlp::{init_params, Activation, MlpSpec};
use pinn_balls::optim::{normal_matrix, CollocationFit, LmState, ETA_MAX, ETA_MIN};
use pinn_balls::partition::{Ball, Partition, RadiusBounds};
use pinn_balls::pde::ProblemSpec;
use pinn_balls::trainer::{read_checkpoint, write_checkpoint};

fn partition(seed: u64, m: usize) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let balls = (0..m)
        .map(|_| Ball::new(vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)], rng.gen_range(0.15..0.5)))
        .collect();
    Partition::new(balls, RadiusBounds { min: 1e-3, max: 2.0 })
}

fn covered_points(p: &Partition, n: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PointSet::new(2);
    while out.len() < n {
        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        if p.phi_sum(&x) > 0.0 {
            out.push(&x).unwrap();
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn damping_stays_within_bounds(seed in 0u64..1000, start in -12.0f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = LmState { eta: 10f64.powf(start), ..Default::default() };
        for _ in 0..200 {
            let before = 1.0;
            let after = if rng.gen_bool(0.5) { 0.5 } else { 2.0 };
            let old = s.eta;
            let accepted = s.damping_update(before, after);
            prop_assert_eq!(accepted, after < before);
            prop_assert!(s.eta >= ETA_MIN && s.eta <= ETA_MAX);
            if accepted {
                prop_assert!((s.eta - (old / 3.0).max(ETA_MIN)).abs() <= 1e-15 * s.eta);
            } else {
                prop_assert!((s.eta - (old * 2.0).min(ETA_MAX)).abs() <= 1e-15 * s.eta);
            }
        }
    }

    /// Two experts share a row of H only if some point activates both, so the
    /// block pattern of H is bounded by the pairwise overlap graph.
    #[test]
    fn normal_matrix_nonzeros_follow_ball_overlap(seed in 0u64..300, m in 2usize..7) {
        let p = partition(seed, m);
        let mlp = MlpSpec::new(2, vec![3], 1, Activation::Tanh).unwrap();
        let per = mlp.param_count();
        let model = EnsembleModel::new(p.clone(), mlp, seed, false).unwrap();
        let problem = ProblemSpec::supervised_fit();
        let pts = covered_points(&p, 60, seed + 1);
        let empty = PointSet::new(2);
        let fit = CollocationFit { model: &model, problem: &problem, interior: &pts, boundary: &empty };
        let (_, j) = fit.assemble(&model).unwrap();
        let h = normal_matrix(&j);
        let mut pairs = vec![false; m * m];
        let mut max_active = 0;
        for x in pts.iter() {
            let (active, _) = p.gate_values(x).unwrap();
            max_active = max_active.max(active.len());
            for &a in &active {
                for &b in &active {
                    pairs[a * m + b] = true;
                }
            }
        }
        let n = m * per;
        for r in 0..n {
            for c in 0..n {
                if h.get(r, c) != 0.0 {
                    prop_assert!(pairs[(r / per) * m + c / per]);
                }
            }
        }
        let bound = (max_active * max_active) as f64 / (m * m) as f64 * (n * n) as f64;
        let used = pairs.iter().filter(|&&b| b).count() * per * per;
        prop_assert!(h.nnz() <= used);
        prop_assert!((h.nnz() as f64) <= bound.max(used as f64));
    }

    #[test]
    fn changing_one_expert_is_invisible_outside_its_ball(seed in 0u64..500, j in 0usize..4) {
        let p = partition(seed, 4);
        let mlp = MlpSpec::new(2, vec![4, 3], 1, Activation::Sin).unwrap();
        let model = EnsembleModel::new(p.clone(), mlp, seed, false).unwrap();
        let mut theta = model.theta().to_vec();
        let o = model.offsets()[j];
        for v in &mut theta[o..o + model.params_per_expert()] {
            *v += 0.3;
        }
        let mut moved = model.clone();
        moved.set_theta(&theta).unwrap();
        for x in covered_points(&p, 100, seed + 7).iter() {
            let same = model.predict(x).unwrap() == moved.predict(x).unwrap();
            if !p.balls[j].contains(x) {
                prop_assert!(same);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise(seed in 0u64..500, m in 1usize..5, w in 1usize..6) {
        let act = if seed % 2 == 0 { Activation::Tanh } else { Activation::Sin };
        let model = EnsembleModel::new(partition(seed, m), MlpSpec::new(2, vec![w, w + 1], 1, act).unwrap(), seed, false)
            .unwrap();
        let text = write_checkpoint(&model);
        let back = read_checkpoint(&text).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(write_checkpoint(&back), text);
    }

    #[test]
    fn input_hessian_is_symmetric(seed in 0u64..1000, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let spec = MlpSpec::new(2, vec![5, 4], 1, if seed % 2 == 0 { Activation::Tanh } else { Activation::Sin }).unwrap();
        let params = init_params(&spec, seed);
        let b = spec.bundle(params.as_slice(), &[x, y]).unwrap();
        prop_assert!((b.hess_at(0, 0, 1) - b.hess_at(0, 1, 0)).abs() < 1e-12);
    }

    #[test]
    fn gate_weights_are_nonnegative_and_sparse(seed in 0u64..500, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let p = partition(seed, 6);
        if p.phi_sum(&[x, y]) > 0.0 {
            let g = p.gate(&[x, y]).unwrap();
            prop_assert!(g.lambda.iter().all(|&l| l >= 0.0));
            for (a, &k) in g.active.iter().enumerate() {
                prop_assert!(p.balls[k].contains(&[x, y]));
                prop_assert!(g.lambda[a] > 0.0);
            }
        }
    }
}
