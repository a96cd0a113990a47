//! Lock-free multi-worker SGD on the margin ranking loss.
//!
//! Each epoch, `p` workers each run `ceil(samples_per_epoch / p)` iterations:
//! draw a golden triple uniformly from the training split, corrupt its head or
//! tail, and when `s(golden) + margin - s(corrupted) > 0` take one SGD step on
//! that hinge and restore the constraints of every touched row. Workers share
//! the parameter store without locks. The only synchronization is the barrier
//! at the end of each epoch, where the per-worker loss accumulators are summed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::exec::{Execution, WorkerPool};
use crate::kg::{KnowledgeGraph, Triple};
use crate::models::Workspace;
use crate::store::{
    MatrixInit, ModelKind, ModelSpec, Norm, ParamStore, StoreError, DEFAULT_EPSILON,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Corruption {
    /// Replace head or tail with probability 1/2 each.
    #[default]
    Uniform,
    /// Replace the head with probability `tph / (tph + hpt)` of the relation,
    /// so one-to-many relations mostly corrupt their head.
    Bernoulli,
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Corruption::Uniform => "uniform",
            Corruption::Bernoulli => "bern",
        })
    }
}

impl FromStr for Corruption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" | "unif" => Ok(Corruption::Uniform),
            "bern" | "bernoulli" => Ok(Corruption::Bernoulli),
            other => Err(format!("unknown corruption mode {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("training split is empty")]
    EmptyTrain,
    #[error(
        "no corrupted triple exists for {0}: every head and tail replacement is a known triple"
    )]
    NoCorruption(Triple),
    #[error("epoch {epoch}: non-finite score on pair {golden} / {corrupted}")]
    NonFinite {
        epoch: usize,
        golden: Triple,
        corrupted: Triple,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub spec: ModelSpec,
    pub num_epochs: usize,
    pub num_threads: usize,
    pub learning_rate: f64,
    pub margin: f64,
    /// Iterations per epoch summed over workers; `None` means `|train|`.
    pub samples_per_epoch: Option<usize>,
    pub corruption: Corruption,
    pub seed: u64,
    /// Keep SphereE radii at their initial value.
    pub freeze_radius: bool,
    pub matrix_init: MatrixInit,
    pub execution: Execution,
}

impl TrainConfig {
    pub fn new(spec: ModelSpec) -> Self {
        TrainConfig {
            spec,
            num_epochs: 500,
            num_threads: 1,
            learning_rate: 0.01,
            margin: 1.0,
            samples_per_epoch: None,
            corruption: Corruption::Uniform,
            seed: 1,
            freeze_radius: false,
            matrix_init: MatrixInit::Identity,
            execution: Execution::Parallel,
        }
    }

    /// Built-in defaults for a dataset: `dim = rel_dim = 50`, margin 1,
    /// learning rate 0.01, 500 epochs, and the L1 norm for TransE and TransH on
    /// WN18 (L2 elsewhere). `dataset` is matched case-insensitively against
    /// the dataset directory name.
    pub fn for_dataset(kind: ModelKind, dataset: &str) -> Self {
        let wn18 = dataset.to_ascii_lowercase().contains("wn18");
        let norm = if wn18 && matches!(kind, ModelKind::TransE | ModelKind::TransH) {
            Norm::L1
        } else {
            Norm::L2
        };
        let spec =
            ModelSpec::new(kind, 50, 50, norm, DEFAULT_EPSILON).expect("default spec is valid");
        TrainConfig::new(spec)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.num_threads == 0 {
            return bad("num_threads must be at least 1");
        }
        if self.num_epochs == 0 {
            return bad("num_epochs must be at least 1");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.samples_per_epoch == Some(0) {
            return bad("samples_per_epoch must be at least 1");
        }
        ModelSpec::new(
            self.spec.kind,
            self.spec.dim,
            self.spec.rel_dim,
            self.spec.norm,
            self.spec.epsilon,
        )?;
        Ok(())
    }

    /// Iterations each worker runs per epoch.
    pub fn iterations_per_worker(&self, train_len: usize) -> usize {
        self.samples_per_epoch
            .unwrap_or(train_len)
            .div_ceil(self.num_threads)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Sum of the positive hinge terms over every sampled pair.
    pub loss: f64,
    pub seconds: f64,
    pub active_pairs: usize,
    pub iterations: usize,
}

/// Draws corrupted triples, with per-relation head probabilities precomputed
/// for [`Corruption::Bernoulli`].
#[derive(Clone, Debug)]
pub struct CorruptionSampler {
    mode: Corruption,
    head_prob: Vec<f64>,
}

impl CorruptionSampler {
    pub fn new(kg: &KnowledgeGraph, mode: Corruption) -> Self {
        let head_prob = match mode {
            Corruption::Uniform => vec![0.5; kg.relation_count()],
            Corruption::Bernoulli => bernoulli_head_probabilities(kg),
        };
        CorruptionSampler { mode, head_prob }
    }

    pub fn mode(&self) -> Corruption {
        self.mode
    }

    pub fn head_probability(&self, relation: u32) -> f64 {
        self.head_prob[relation as usize]
    }

    /// Replaces the head or tail of `golden` with a random entity so that the
    /// result is not a known triple.
    ///
    /// Up to `|E|` random draws are made on the chosen side; if all of them
    /// hit known triples the side is scanned exhaustively, then the other
    /// side, and only if every replacement is known does this fail.
    pub fn sample<R: Rng>(
        &self,
        kg: &KnowledgeGraph,
        golden: &Triple,
        rng: &mut R,
    ) -> Result<Triple, TrainError> {
        let n = kg.entity_count() as u32;
        let head_side = rng.gen::<f64>() < self.head_prob[golden.relation as usize];
        let replace = |e: u32, head: bool| {
            if head {
                Triple::new(e, golden.relation, golden.tail)
            } else {
                Triple::new(golden.head, golden.relation, e)
            }
        };
        for _ in 0..n {
            let candidate = replace(rng.gen_range(0..n), head_side);
            if !kg.contains(&candidate) {
                return Ok(candidate);
            }
        }
        let start = rng.gen_range(0..n);
        for head in [head_side, !head_side] {
            for i in 0..n {
                let candidate = replace((start + i) % n, head);
                if !kg.contains(&candidate) {
                    return Ok(candidate);
                }
            }
        }
        Err(TrainError::NoCorruption(*golden))
    }
}

/// One-shot corruption; builds the sampler on every call, so loops should hold
/// a [`CorruptionSampler`] instead.
pub fn corrupt<R: Rng>(
    kg: &KnowledgeGraph,
    golden: &Triple,
    mode: Corruption,
    rng: &mut R,
) -> Result<Triple, TrainError> {
    CorruptionSampler::new(kg, mode).sample(kg, golden, rng)
}

/// Per relation: average tails per head (`tph`) and heads per tail (`hpt`)
/// over the training split, turned into `tph / (tph + hpt)`.
fn bernoulli_head_probabilities(kg: &KnowledgeGraph) -> Vec<f64> {
    let mut tails_of: FxHashMap<(u32, u32), usize> = FxHashMap::default();
    let mut heads_of: FxHashMap<(u32, u32), usize> = FxHashMap::default();
    let mut seen = rustc_hash::FxHashSet::default();
    for t in kg.train() {
        if seen.insert(*t) {
            *tails_of.entry((t.relation, t.head)).or_default() += 1;
            *heads_of.entry((t.relation, t.tail)).or_default() += 1;
        }
    }
    let mut sums = vec![(0usize, 0usize, 0usize, 0usize); kg.relation_count()];
    for (&(r, _), &c) in &tails_of {
        sums[r as usize].0 += c;
        sums[r as usize].1 += 1;
    }
    for (&(r, _), &c) in &heads_of {
        sums[r as usize].2 += c;
        sums[r as usize].3 += 1;
    }
    sums.into_iter()
        .map(|(tails, heads_n, heads, tails_n)| {
            if heads_n == 0 || tails_n == 0 {
                return 0.5;
            }
            let tph = tails as f64 / heads_n as f64;
            let hpt = heads as f64 / tails_n as f64;
            tph / (tph + hpt)
        })
        .collect()
}

struct WorkerState {
    rng: ChaCha8Rng,
    workspace: Workspace,
}

struct WorkerEpoch {
    loss: f64,
    active: usize,
    iterations: usize,
    error: Option<TrainError>,
}

/// Stateful trainer: owns the store and per-worker RNG streams, so epochs can
/// be driven one at a time.
pub struct Trainer<'a> {
    kg: &'a KnowledgeGraph,
    config: TrainConfig,
    store: ParamStore,
    sampler: CorruptionSampler,
    pool: WorkerPool,
    workers: Vec<WorkerState>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    /// Validates the configuration and initializes the store from
    /// `config.seed`.
    pub fn new(kg: &'a KnowledgeGraph, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let store = ParamStore::init_with(
            &config.spec,
            kg.entity_count(),
            kg.relation_count(),
            config.seed,
            config.matrix_init,
        )?;
        Self::with_store(kg, config, store)
    }

    /// Continues from an existing store.
    pub fn with_store(
        kg: &'a KnowledgeGraph,
        config: TrainConfig,
        store: ParamStore,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if kg.train().is_empty() {
            return Err(TrainError::EmptyTrain);
        }
        if store.entity_count() != kg.entity_count()
            || store.relation_count() != kg.relation_count()
        {
            return Err(TrainError::Config(format!(
                "store has {} entities / {} relations but the graph has {} / {}",
                store.entity_count(),
                store.relation_count(),
                kg.entity_count(),
                kg.relation_count()
            )));
        }
        let workers = (0..config.num_threads)
            .map(|i| WorkerState {
                rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64)),
                workspace: Workspace::new(&config.spec).freeze_radius(config.freeze_radius),
            })
            .collect();
        Ok(Trainer {
            kg,
            sampler: CorruptionSampler::new(kg, config.corruption),
            pool: WorkerPool::new(config.num_threads, config.execution),
            workers,
            store,
            config,
            epoch: 0,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog, TrainError> {
        self.epoch += 1;
        let epoch = self.epoch;
        let iterations = self.config.iterations_per_worker(self.kg.train().len());
        let (kg, store, sampler) = (self.kg, &self.store, &self.sampler);
        let (margin, lr) = (self.config.margin, self.config.learning_rate);
        let train = kg.train();

        let started = Instant::now();
        let results = self.pool.map_states(&mut self.workers, |_, w| {
            let mut out = WorkerEpoch {
                loss: 0.0,
                active: 0,
                iterations: 0,
                error: None,
            };
            for _ in 0..iterations {
                let golden = train[w.rng.gen_range(0..train.len())];
                let corrupted = match sampler.sample(kg, &golden, &mut w.rng) {
                    Ok(c) => c,
                    Err(e) => {
                        out.error = Some(e);
                        break;
                    }
                };
                let pair = w
                    .workspace
                    .train_pair(store, &golden, &corrupted, margin, lr);
                out.iterations += 1;
                if !(pair.golden_score.is_finite() && pair.corrupted_score.is_finite()) {
                    out.error = Some(TrainError::NonFinite {
                        epoch,
                        golden,
                        corrupted,
                    });
                    break;
                }
                if pair.active() {
                    out.loss += pair.hinge;
                    out.active += 1;
                }
            }
            out
        });
        let seconds = started.elapsed().as_secs_f64();

        let mut log = EpochLog {
            epoch,
            loss: 0.0,
            seconds,
            active_pairs: 0,
            iterations: 0,
        };
        for r in results {
            if let Some(e) = r.error {
                return Err(e);
            }
            log.loss += r.loss;
            log.active_pairs += r.active;
            log.iterations += r.iterations;
        }
        Ok(log)
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }
}

/// Runs `config.num_epochs` epochs from a fresh store.
pub fn train(
    kg: &KnowledgeGraph,
    config: &TrainConfig,
) -> Result<(ParamStore, Vec<EpochLog>), TrainError> {
    train_with(kg, config, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    kg: &KnowledgeGraph,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ParamStore, Vec<EpochLog>), TrainError> {
    let mut trainer = Trainer::new(kg, config.clone())?;
    let mut logs = Vec::with_capacity(config.num_epochs);
    for _ in 0..config.num_epochs {
        let log = trainer.run_epoch()?;
        on_epoch(&log);
        logs.push(log);
    }
    Ok((trainer.into_store(), logs))
}
