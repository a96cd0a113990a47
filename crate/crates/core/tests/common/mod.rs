//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the analytic gradient or the evaluator's ranking path:
//! gradients are checked against central finite differences of `score`, and
//! ranks against a full sort of every candidate score.

#![allow(dead_code)]

use kgembed::kg::{KnowledgeGraph, Triple};
use kgembed::models::{score, score_gradient};
use kgembed::store::{ModelKind, ModelSpec, ParamStore, Table};
use kgembed::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator so that components that
/// are zero up to rounding do not dominate.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Central difference of `f` with respect to cell `(row, col)` of `table`.
pub fn central_difference(table: &Table, row: usize, col: usize, f: &dyn Fn() -> f64) -> f64 {
    let x = table.get(row, col);
    table.set(row, col, x + FD_STEP);
    let up = f();
    table.set(row, col, x - FD_STEP);
    let down = f();
    table.set(row, col, x);
    (up - down) / (2.0 * FD_STEP)
}

/// A store with every parameter drawn at random (off the constraint surface,
/// which the gradient does not care about) and two entities plus one relation
/// to score.
pub fn random_point(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> ParamStore {
    let store = ParamStore::init(spec, 3, 1, rng.gen()).unwrap();
    for (_, table) in store.tables() {
        for r in 0..table.rows() {
            for c in 0..table.cols() {
                table.set(r, c, rng.gen_range(-1.0..1.0));
            }
        }
    }
    if let Some(radius) = &store.radius {
        radius.set(0, 0, rng.gen_range(0.3..1.5));
    }
    store
}

/// Whether `triple` sits at least `margin` away from every kink of its score
/// (L1 coordinates at zero, SphereE's absolute value at zero), where central
/// differences are not meaningful.
pub fn away_from_kinks(spec: &ModelSpec, store: &ParamStore, triple: &Triple, margin: f64) -> bool {
    let b = score(spec, store, triple);
    let l1_ok = spec.norm == kgembed::Norm::L2 || b.residual.iter().all(|x| x.abs() > margin);
    let l2_ok = spec.norm == kgembed::Norm::L1 || kgembed::linalg::l2_norm(&b.residual) > margin;
    let sphere_ok = match (b.manifold, &store.radius) {
        (Some(m), Some(r)) => (m - r.get(triple.relation as usize, 0).powi(2)).abs() > margin,
        _ => true,
    };
    l1_ok && l2_ok && sphere_ok
}

/// Max relative error between the analytic gradient of `s(0, 0, 1)` and
/// central differences, over every parameter the score reads.
pub fn gradient_error(spec: &ModelSpec, store: &ParamStore) -> f64 {
    let triple = Triple::new(0, 0, 1);
    let g = score_gradient(spec, store, &triple);
    let f = || score(spec, store, &triple).value;
    let mut worst: f64 = 0.0;
    let mut check = |table: &Table, row: usize, analytic: &[f64]| {
        assert_eq!(analytic.len(), table.cols());
        for (col, a) in analytic.iter().enumerate() {
            worst = worst.max(rel_err(*a, central_difference(table, row, col, &f)));
        }
    };

    check(&store.entity, 0, &g.head.vec);
    check(&store.entity, 1, &g.tail.vec);
    check(&store.relation, 0, &g.relation.translation);
    if let Some(t) = &store.normal {
        check(t, 0, &g.relation.normal);
    }
    if let Some(t) = &store.proj_matrix {
        check(t, 0, &g.relation.matrix);
    }
    if let Some(t) = &store.entity_proj {
        check(t, 0, &g.head.proj);
        check(t, 1, &g.tail.proj);
    }
    if let Some(t) = &store.relation_proj {
        check(t, 0, &g.relation.proj);
    }
    if let Some(t) = &store.radius {
        check(t, 0, &[g.relation.radius]);
    }
    worst
}

/// Runs [`gradient_error`] at `points` random differentiable points and
/// returns the worst error seen.
pub fn gradient_check(spec: &ModelSpec, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < points {
        let store = random_point(spec, &mut rng);
        if !away_from_kinks(spec, &store, &Triple::new(0, 0, 1), 1e-3) {
            continue;
        }
        worst = worst.max(gradient_error(spec, &store));
        done += 1;
    }
    worst
}

/// Specs covering all five models, both norms, and TransR/TransD with the
/// relation space both smaller and larger than the entity space.
pub fn gradient_specs() -> Vec<ModelSpec> {
    let mut specs = Vec::new();
    for kind in ModelKind::ALL {
        for norm in [kgembed::Norm::L1, kgembed::Norm::L2] {
            specs.push(ModelSpec::new(kind, 6, 4, norm, 0.1).unwrap());
            if kind.has_relation_space() {
                specs.push(ModelSpec::new(kind, 4, 6, norm, 0.1).unwrap());
            }
        }
    }
    specs
}

/// Rank by materializing every candidate's score, dropping filtered ones, and
/// sorting with the true entity placed first among equal scores.
pub fn brute_force_rank(
    spec: &ModelSpec,
    store: &ParamStore,
    kg: &KnowledgeGraph,
    triple: &Triple,
    side: Side,
    filtered: bool,
) -> usize {
    let truth = match side {
        Side::Head => triple.head,
        Side::Tail => triple.tail,
    };
    let mut scored: Vec<(f64, bool, u32)> = (0..kg.entity_count() as u32)
        .filter_map(|e| {
            let candidate = match side {
                Side::Head => Triple::new(e, triple.relation, triple.tail),
                Side::Tail => Triple::new(triple.head, triple.relation, e),
            };
            let known = kg
                .train()
                .iter()
                .chain(kg.valid())
                .chain(kg.test())
                .any(|g| *g == candidate);
            if filtered && e != truth && known {
                return None;
            }
            Some((score(spec, store, &candidate).value, e != truth, e))
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    scored.iter().position(|(_, other, _)| !other).unwrap() + 1
}

/// Largest violation of the equality constraints (unit L2 norm for entity
/// and relation vectors and TransH normals) and of TransH's `|w . d| <= eps`,
/// recomputed from the raw tables.
pub fn constraint_violation(spec: &ModelSpec, store: &ParamStore) -> f64 {
    let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    let mut unit_rows = |t: &Table| {
        for r in 0..t.rows() {
            worst = worst.max((l2(&t.row(r)) - 1.0).abs());
        }
    };
    unit_rows(&store.entity);
    unit_rows(&store.relation);
    if let Some(w) = &store.normal {
        unit_rows(w);
        for r in 0..w.rows() {
            let dot: f64 = w
                .row(r)
                .iter()
                .zip(&store.relation.row(r))
                .map(|(a, b)| a * b)
                .sum();
            worst = worst.max(dot.abs() - spec.epsilon);
        }
    }
    worst
}
