//! Hyperparameter resolution: command-line flags override a `key=value`
//! config file, which overrides the built-in defaults for the dataset.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use kgembed::store::MatrixInit;
use kgembed::{Corruption, Execution, ModelKind, ModelSpec, Norm, TrainConfig};
use serde::Serialize;

/// Training flags shared by `train` and `bench`. Every field is optional so
/// that unset flags fall through to the config file and then the defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct HyperArgs {
    /// transe, transh, transr, transd or spheree
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Entity embedding dimension
    #[arg(long)]
    pub dim: Option<usize>,
    /// Relation space dimension (TransR and TransD only)
    #[arg(long)]
    pub rel_dim: Option<usize>,
    /// l1 or l2
    #[arg(long)]
    pub norm: Option<Norm>,
    /// uniform or bern
    #[arg(long)]
    pub corruption: Option<Corruption>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TransH bound on |w . d|
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Iterations per epoch summed over workers (default: training set size)
    #[arg(long)]
    pub samples: Option<usize>,
    /// Keep SphereE radii fixed
    #[arg(long)]
    pub freeze_radius: bool,
    /// Starting TransR matrices: identity or random
    #[arg(long)]
    pub matrix_init: Option<MatrixInit>,
    /// Run workers one after another instead of concurrently
    #[arg(long)]
    pub sequential: bool,
    /// key=value file with any of the options above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// A flag combination or config file that makes no sense. Reported with
/// exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const KEYS: [&str; 16] = [
    "model",
    "epochs",
    "threads",
    "lr",
    "margin",
    "dim",
    "rel_dim",
    "norm",
    "corruption",
    "seed",
    "epsilon",
    "samples",
    "freeze_radius",
    "matrix_init",
    "execution",
    "samples_per_epoch",
];

/// Parses `key=value` lines. Blank lines and `#` comments are skipped; keys
/// may use `-` or `_`.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(usage(format!(
                "{}:{}: unknown key {key:?}",
                path.display(),
                i + 1
            )));
        }
        pairs.push((key, value.trim().to_owned()));
    }
    Ok(pairs)
}

/// Fully resolved run settings, as recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub dim: usize,
    pub rel_dim: usize,
    pub norm: String,
    pub epsilon: f64,
    pub epochs: usize,
    pub threads: usize,
    pub lr: f64,
    pub margin: f64,
    pub samples_per_epoch: Option<usize>,
    pub corruption: String,
    pub seed: u64,
    pub freeze_radius: bool,
    pub matrix_init: String,
    pub execution: String,
}

impl RunConfig {
    pub fn from_train_config(c: &TrainConfig) -> Self {
        RunConfig {
            model: c.spec.kind.to_string(),
            dim: c.spec.dim,
            rel_dim: c.spec.rel_dim,
            norm: c.spec.norm.to_string(),
            epsilon: c.spec.epsilon,
            epochs: c.num_epochs,
            threads: c.num_threads,
            lr: c.learning_rate,
            margin: c.margin,
            samples_per_epoch: c.samples_per_epoch,
            corruption: c.corruption.to_string(),
            seed: c.seed,
            freeze_radius: c.freeze_radius,
            matrix_init: c.matrix_init.to_string(),
            execution: c.execution.to_string(),
        }
    }

    /// The settings in the format read by `--config`.
    pub fn to_config_file(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: &dyn std::fmt::Display| writeln!(out, "{k}={v}").unwrap();
        line("model", &self.model);
        line("dim", &self.dim);
        if ModelKind::from_str(&self.model).is_ok_and(ModelKind::has_relation_space) {
            line("rel_dim", &self.rel_dim);
        }
        line("norm", &self.norm);
        line("epsilon", &self.epsilon);
        line("epochs", &self.epochs);
        line("threads", &self.threads);
        line("lr", &self.lr);
        line("margin", &self.margin);
        if let Some(s) = self.samples_per_epoch {
            line("samples", &s);
        }
        line("corruption", &self.corruption);
        line("seed", &self.seed);
        line("freeze_radius", &self.freeze_radius);
        line("matrix_init", &self.matrix_init);
        line("execution", &self.execution);
        out
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| usage(format!("invalid value {value:?} for {key}: {e}")))
}

/// Merges defaults, the config file and flags into a validated
/// [`TrainConfig`]. `threads` is the flag value, if any.
pub fn resolve(args: &HyperArgs, threads: Option<usize>, dataset: &Path) -> Result<TrainConfig> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => Vec::new(),
    };
    let lookup = |key: &str| {
        file.iter()
            .rev()
            .find(|(k, _)| k == key || (key == "samples" && k == "samples_per_epoch"))
            .map(|(_, v)| v.as_str())
    };

    let kind = match (&args.model, lookup("model")) {
        (Some(k), _) => *k,
        (None, Some(v)) => parse("model", v)?,
        (None, None) => ModelKind::TransE,
    };
    let name = dataset
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut c = TrainConfig::for_dataset(kind, &name);

    macro_rules! pick {
        ($flag:expr, $key:literal) => {
            match (&$flag, lookup($key)) {
                (Some(v), _) => Some(v.clone()),
                (None, Some(v)) => Some(parse($key, v)?),
                (None, None) => None,
            }
        };
    }

    let dim: Option<usize> = pick!(args.dim, "dim");
    let rel_dim: Option<usize> = pick!(args.rel_dim, "rel_dim");
    let norm: Option<Norm> = pick!(args.norm, "norm");
    let epsilon: Option<f64> = pick!(args.epsilon, "epsilon");

    if rel_dim.is_some() && !kind.has_relation_space() {
        return Err(usage(format!(
            "--rel-dim only applies to transr and transd, not {kind}"
        )));
    }
    let dim = dim.unwrap_or(c.spec.dim);
    c.spec = ModelSpec::new(
        kind,
        dim,
        rel_dim.unwrap_or(dim),
        norm.unwrap_or(c.spec.norm),
        epsilon.unwrap_or(c.spec.epsilon),
    )
    .map_err(|e| usage(e.to_string()))?;

    if let Some(v) = pick!(args.epochs, "epochs") {
        c.num_epochs = v;
    }
    if let Some(v) = pick!(threads, "threads") {
        c.num_threads = v;
    }
    if let Some(v) = pick!(args.lr, "lr") {
        c.learning_rate = v;
    }
    if let Some(v) = pick!(args.margin, "margin") {
        c.margin = v;
    }
    if let Some(v) = pick!(args.seed, "seed") {
        c.seed = v;
    }
    let samples: Option<usize> = pick!(args.samples, "samples");
    if samples.is_some() {
        c.samples_per_epoch = samples;
    }
    if let Some(v) = pick!(args.corruption, "corruption") {
        c.corruption = v;
    }
    c.freeze_radius = args.freeze_radius
        || lookup("freeze_radius")
            .map(|v| parse("freeze_radius", v))
            .transpose()?
            .unwrap_or(false);
    if let Some(v) = pick!(args.matrix_init, "matrix_init") {
        c.matrix_init = v;
    }
    c.execution = if args.sequential {
        Execution::Sequential
    } else {
        lookup("execution")
            .map(|v| parse::<Execution>("execution", v))
            .transpose()?
            .unwrap_or_default()
    };

    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

/// Comma separated thread counts such as `1,2,5,8,10`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreadList(pub Vec<usize>);

impl FromStr for ThreadList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let list: Vec<usize> = s
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<_, _>>()?;
        if list.contains(&0) {
            return Err("thread counts must be at least 1".into());
        }
        Ok(ThreadList(list))
    }
}

pub fn is_usage(err: &anyhow::Error) -> bool {
    err.downcast_ref::<UsageError>().is_some()
}

pub fn ensure_dataset(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("dataset directory {} does not exist", path.display());
    }
    Ok(())
}
