mod common;

use common::{central_difference, gradient_check, gradient_specs, random_point, rel_err};
use kgembed::kg::Triple;
use kgembed::models::{gradient_step, score, Workspace};
use kgembed::store::{ModelKind, ModelSpec, Norm, ParamStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_finite_differences() {
    for (i, spec) in gradient_specs().iter().enumerate() {
        let worst = gradient_check(spec, 100, 1000 + i as u64);
        assert!(worst < 1e-4, "{spec:?}: max relative error {worst:e}");
    }
}

/// The pair step must move every parameter by `-lr * d[s(g) - s(c)]`,
/// including entities shared by both triples.
#[test]
fn pair_step_matches_finite_difference_of_pair_objective() {
    let pairs = [
        (Triple::new(0, 0, 1), Triple::new(0, 0, 2)),
        (Triple::new(0, 0, 1), Triple::new(2, 0, 1)),
        (Triple::new(0, 0, 0), Triple::new(0, 0, 2)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for spec in gradient_specs() {
        for (golden, corrupted) in pairs {
            let store = random_point(&spec, &mut rng);
            let objective =
                || score(&spec, &store, &golden).value - score(&spec, &store, &corrupted).value;
            let expected: Vec<Vec<f64>> = store
                .tables()
                .map(|(_, t)| {
                    let mut out = Vec::new();
                    for r in 0..t.rows() {
                        for c in 0..t.cols() {
                            out.push(central_difference(t, r, c, &objective));
                        }
                    }
                    out
                })
                .collect();

            let stepped = store.clone();
            gradient_step(&spec, &stepped, &golden, &corrupted, 1.0);
            for (((id, before), (_, after)), fd) in
                store.tables().zip(stepped.tables()).zip(&expected)
            {
                let moved: Vec<f64> = before
                    .to_vec()
                    .iter()
                    .zip(after.to_vec())
                    .map(|(b, a)| b - a)
                    .collect();
                for (m, f) in moved.iter().zip(fd) {
                    // kinks of L1 / SphereE make a few points non-differentiable
                    if spec.norm == Norm::L1 || spec.kind == ModelKind::SphereE {
                        continue;
                    }
                    assert!(
                        rel_err(*m, *f) < 1e-4,
                        "{spec:?} {id:?}: step {m} vs fd {f}"
                    );
                }
            }
        }
    }
}

#[test]
fn pair_step_on_l1_models_at_differentiable_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for spec in gradient_specs()
        .into_iter()
        .filter(|s| s.norm == Norm::L1 || s.kind == ModelKind::SphereE)
    {
        let golden = Triple::new(0, 0, 1);
        let corrupted = Triple::new(0, 0, 2);
        let mut checked = 0;
        while checked < 20 {
            let store = random_point(&spec, &mut rng);
            if !(common::away_from_kinks(&spec, &store, &golden, 1e-3)
                && common::away_from_kinks(&spec, &store, &corrupted, 1e-3))
            {
                continue;
            }
            checked += 1;
            let objective =
                || score(&spec, &store, &golden).value - score(&spec, &store, &corrupted).value;
            let stepped = store.clone();
            gradient_step(&spec, &stepped, &golden, &corrupted, 1.0);
            for ((_, before), (_, after)) in store.tables().zip(stepped.tables()) {
                for r in 0..before.rows() {
                    for c in 0..before.cols() {
                        let moved = before.get(r, c) - after.get(r, c);
                        let fd = central_difference(before, r, c, &objective);
                        assert!(rel_err(moved, fd) < 1e-4, "{spec:?}: {moved} vs {fd}");
                    }
                }
            }
        }
    }
}

#[test]
fn transe_residual_is_translation_invariant() {
    let spec = ModelSpec::square(ModelKind::TransE, 8, Norm::L2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let store = random_point(&spec, &mut rng);
        let t = Triple::new(0, 0, 1);
        let before = score(&spec, &store, &t).value;
        let shift: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        for e in [0, 1] {
            let row: Vec<f64> = store
                .entity
                .row(e)
                .iter()
                .zip(&shift)
                .map(|(x, c)| x + c)
                .collect();
            store.entity.write_row(e, &row);
        }
        assert!((score(&spec, &store, &t).value - before).abs() <= 1e-12);
    }
}

fn hinge(spec: &ModelSpec, store: &ParamStore, g: &Triple, c: &Triple, margin: f64) -> f64 {
    score(spec, store, g).value + margin - score(spec, store, c).value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A small step on an active pair lowers its hinge term.
    #[test]
    fn small_step_decreases_active_hinge(seed in any::<u64>(), model in 0usize..5, l2 in any::<bool>()) {
        let kind = ModelKind::ALL[model];
        let norm = if l2 { Norm::L2 } else { Norm::L1 };
        let spec = ModelSpec::new(kind, 6, 5, norm, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = random_point(&spec, &mut rng);
        let (g, c) = (Triple::new(0, 0, 1), Triple::new(0, 0, 2));
        prop_assume!(common::away_from_kinks(&spec, &store, &g, 1e-3));
        prop_assume!(common::away_from_kinks(&spec, &store, &c, 1e-3));
        let margin = 10.0;
        let before = hinge(&spec, &store, &g, &c, margin);
        prop_assert!(before > 0.0);
        Workspace::new(&spec).gradient_step(&store, &g, &c, 1e-4);
        let after = hinge(&spec, &store, &g, &c, margin);
        prop_assert!(after < before, "{before} -> {after}");
    }
}
