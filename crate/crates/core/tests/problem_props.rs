mod common;

use adapd::problem::{make_localization_instance, ProblemInstance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn derivatives_match_finite_differences(seed in any::<u64>(), n in 1usize..6, p in 1usize..6) {
        let inst = make_localization_instance(n, 2, p, 0.1, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for a in inst.agents() {
            for _ in 0..20 {
                let x = point(&mut rng, n);
                let fd = fd_gradient(|q| a.objective.value(q), &x);
                prop_assert!(rel_err(&a.objective.gradient(&x), &fd) <= 1e-5);
                let jac = a.constraint.jacobian(&x);
                for r in 0..a.constraint.num_rows() {
                    let fd = fd_gradient(|q| a.constraint.value(q)[r], &x);
                    let row: Vec<f64> = (0..n).map(|c| jac[(r, c)]).collect();
                    prop_assert!(rel_err(&row, &fd) <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn library_oracles_match_plain_loops(seed in any::<u64>()) {
        let inst = make_localization_instance(4, 3, 3, 0.1, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, a) in inst.agents().iter().enumerate() {
            let x = point(&mut rng, 4);
            let e = &a.constraint.rows()[0];
            prop_assert!((a.constraint.value(&x)[0] - ellipsoid_value(e, &x)).abs() <= 1e-12 * (1.0 + ellipsoid_value(e, &x).abs()));
            prop_assert!((a.objective.value(&x) - objective_value(&inst, i, &x)).abs() <= 1e-14);
        }
    }
}

#[test]
fn sampled_lipschitz_ratios_stay_below_constants() {
    for seed in 0..4 {
        let inst = make_localization_instance(3, 2, 4, 0.1, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        for a in inst.agents() {
            let (c, lg) = (a.constraint.lipschitz_value(), a.constraint.lipschitz_jac());
            let m = a.constraint.num_rows() as f64;
            for _ in 0..10_000 {
                let (x, z) = (point(&mut rng, 3), point(&mut rng, 3));
                let dx = x.iter().zip(&z).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                let dg = a
                    .constraint
                    .value(&x)
                    .iter()
                    .zip(a.constraint.value(&z))
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(dg <= c * dx * (1.0 + 1e-12));
                let dj = (a.constraint.jacobian(&x) - a.constraint.jacobian(&z)).norm();
                assert!(dj <= lg * dx * m.sqrt() * (1.0 + 1e-12));
                let df = a
                    .objective
                    .gradient(&x)
                    .iter()
                    .zip(a.objective.gradient(&z))
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(df <= a.objective.lipschitz_grad() * dx * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn stacked_evaluation_matches_per_block_sum() {
    let inst = make_localization_instance(5, 4, 3, 0.1, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = point(&mut rng, 20);
    let eval = inst.eval_stacked(&x).unwrap();
    let mut phi = 0.0;
    let mut g = Vec::new();
    for i in 0..4 {
        let xi = &x[i * 5..(i + 1) * 5];
        phi += objective_value(&inst, i, xi);
        g.extend(inst.agent(i).constraint.rows().iter().map(|e| ellipsoid_value(e, xi)));
    }
    assert!(eval.in_domain);
    assert!((eval.phi - phi).abs() <= 1e-14 * phi.abs().max(1.0));
    for (a, b) in eval.g.iter().zip(&g) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn noiseless_ground_truth_is_strictly_feasible() {
    let inst = make_localization_instance(10, 6, 8, 0.0, 42).unwrap();
    let truth = inst.meta().ground_truth.clone().unwrap();
    assert!(truth.iter().all(|v| v.abs() <= 1.0));
    for a in inst.agents() {
        let eta = a.constraint.rows()[0].eta();
        assert!((a.constraint.value(&truth)[0] + eta * eta).abs() <= 1e-10);
    }
}

#[test]
fn container_round_trip_preserves_hash_and_values() {
    let inst = make_localization_instance(4, 3, 5, 0.1, 77).unwrap();
    let text = inst.to_container();
    assert!(text.starts_with("ADAPD-INST v1"));
    let back = ProblemInstance::from_container(&text).unwrap();
    assert_eq!(back.content_hash(), inst.content_hash());
    assert_eq!(back.to_container(), text);
    let x = vec![0.25; 12];
    assert_eq!(back.eval_stacked(&x).unwrap().g, inst.eval_stacked(&x).unwrap().g);
    assert!(ProblemInstance::from_container("ADAPD-INST v0\n{}").is_err());
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let a = make_localization_instance(6, 3, 4, 0.1, 5).unwrap();
    let b = make_localization_instance(6, 3, 4, 0.1, 5).unwrap();
    let c = make_localization_instance(6, 3, 4, 0.1, 6).unwrap();
    assert_eq!(a.to_container(), b.to_container());
    assert_ne!(a.content_hash(), c.content_hash());
    assert!(make_localization_instance(0, 3, 4, 0.1, 5).is_err());
    assert!(make_localization_instance(3, 3, 4, -0.1, 5).is_err());
}
