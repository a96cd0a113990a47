//! Synthetic graphs with planted translational structure.
//!
//! Entities and relations get hidden random vectors; each triple takes a
//! random head and relation and picks as tail the entity nearest to
//! `head + relation`. A translational model can recover this structure, which
//! makes these graphs useful for tests, benchmarks and smoke runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;

use crate::kg::{DataError, KnowledgeGraph, Triple};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub entities: usize,
    pub relations: usize,
    /// Distinct triples generated before splitting.
    pub triples: usize,
    pub dim: usize,
    /// Fractions of the triples held out for validation and test.
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entities: 200,
            relations: 4,
            triples: 2000,
            dim: 8,
            valid_fraction: 0.05,
            test_fraction: 0.05,
            seed: 7,
        }
    }
}

pub fn planted_graph(cfg: &SynthConfig) -> Result<KnowledgeGraph, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gauss = |n: usize, scale: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                // Box-Muller
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                let v: f64 = rng.gen();
                scale * (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
            })
            .collect()
    };
    let k = cfg.dim.max(1);
    let ent = gauss(cfg.entities * k, 1.0);
    let rel = gauss(cfg.relations * k, 0.7);

    let max_triples = cfg.entities * cfg.relations;
    let wanted = cfg.triples.min(max_triples);
    let mut seen = FxHashSet::default();
    let mut triples = Vec::with_capacity(wanted);
    let mut attempts = 0;
    while triples.len() < wanted && attempts < wanted * 20 {
        attempts += 1;
        let h = rng.gen_range(0..cfg.entities);
        let r = rng.gen_range(0..cfg.relations);
        let target: Vec<f64> = (0..k).map(|i| ent[h * k + i] + rel[r * k + i]).collect();
        let t = (0..cfg.entities)
            .filter(|&e| e != h || cfg.entities == 1)
            .min_by(|&a, &b| {
                let da: f64 = (0..k).map(|i| (ent[a * k + i] - target[i]).powi(2)).sum();
                let db: f64 = (0..k).map(|i| (ent[b * k + i] - target[i]).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap_or(h);
        let triple = Triple::new(h as u32, r as u32, t as u32);
        if seen.insert(triple) {
            triples.push(triple);
        }
    }
    triples.shuffle(&mut rng);

    let n = triples.len();
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    let n_valid = (n as f64 * cfg.valid_fraction).round() as usize;
    let test = triples.split_off(n - n_test);
    let valid = triples.split_off(triples.len() - n_valid);
    KnowledgeGraph::new(cfg.entities, cfg.relations, triples, valid, test)
}

/// Uniformly random triples with no structure.
pub fn random_graph(
    entities: usize,
    relations: usize,
    per_split: [usize; 3],
    seed: u64,
) -> Result<KnowledgeGraph, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<Triple> {
        (0..n)
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..entities as u32),
                    rng.gen_range(0..relations as u32),
                    rng.gen_range(0..entities as u32),
                )
            })
            .collect()
    };
    let train = draw(per_split[0]);
    let valid = draw(per_split[1]);
    let test = draw(per_split[2]);
    KnowledgeGraph::new(entities, relations, train, valid, test)
}
