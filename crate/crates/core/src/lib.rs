//! Parallel training and evaluation of translational knowledge graph
//! embeddings (TransE, TransH, TransR, TransD, SphereE).
//!
//! ```no_run
//! use kgembed::{kg, store::{ModelKind, ModelSpec, Norm}, trainer, eval};
//!
//! let graph = kg::load_dataset("data/WN18").unwrap();
//! let spec = ModelSpec::square(ModelKind::TransE, 50, Norm::L1).unwrap();
//! let config = trainer::TrainConfig { num_threads: 8, ..trainer::TrainConfig::new(spec) };
//! let (store, _epochs) = trainer::train(&graph, &config).unwrap();
//! let report = eval::evaluate(&spec, &store, &graph, kg::Split::Test, 8).unwrap();
//! println!("{report}");
//! ```

pub mod eval;
pub mod exec;
pub mod kg;
pub mod linalg;
pub mod models;
pub mod store;
pub mod synth;
pub mod trainer;

pub use eval::{evaluate, rank, MetricSet, RankReport, Side};
pub use exec::Execution;
pub use kg::{load_dataset, KnowledgeGraph, Split, Triple};
pub use models::{score, ScoreBreakdown};
pub use store::{ModelKind, ModelSpec, Norm, ParamStore};
pub use trainer::{train, Corruption, EpochLog, TrainConfig};
