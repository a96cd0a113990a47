mod config;
mod manifest;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use kgembed::eval::evaluate_triples;
use kgembed::kg::load_dataset;
use kgembed::store::{load, save};
use kgembed::trainer::train_with;
use kgembed::{EpochLog, Execution, MetricSet, Split, TrainConfig};
use serde_json::json;

use config::{ensure_dataset, is_usage, resolve, HyperArgs, RunConfig, ThreadList};
use manifest::{run_id, RunManifest, Timings};

#[derive(Parser, Debug)]
#[command(
    name = "kgembed",
    version,
    about = "Train and evaluate translational knowledge graph embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and save its embeddings
    Train(TrainArgs),
    /// Link prediction metrics for saved embeddings
    Eval(EvalArgs),
    /// Time training at several thread counts
    Bench(BenchArgs),
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// Dataset directory (entity2id.txt, relation2id.txt, train2id.txt, ...)
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for embeddings and the run manifest
    /// [default: <dataset>-<model>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Epoch log CSV [default: <out>/epochs.csv]
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory written by `train`
    #[arg(long)]
    embeddings: PathBuf,
    /// Evaluation workers [default: available cores]
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "test", value_parser = ["test", "valid"])]
    split: String,
    /// Also write the metrics as JSON
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(clap::Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma separated thread counts; speedups are relative to the first
    #[arg(long, default_value = "1,2,5,8,10")]
    threads: ThreadList,
    /// Runs per thread count; the median wall time is reported
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Per-epoch loss of the median run, one column per thread count
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
    #[command(flatten)]
    hyper: HyperArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_usage(&e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn dataset_name(path: &Path) -> String {
    path.canonicalize()
        .ok()
        .as_deref()
        .unwrap_or(path)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn progress(log: &EpochLog, total: usize) {
    let every = (total / 20).max(1);
    if log.epoch == 1 || log.epoch == total || log.epoch.is_multiple_of(every) {
        eprintln!(
            "epoch {:>5}/{total}  loss {:>14.4}  active {:>9}  {:.2}s",
            log.epoch, log.loss, log.active_pairs, log.seconds
        );
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = resolve(
        &args.hyper,
        args.threads,
        Path::new(&dataset_name(&args.data)),
    )?;
    ensure_dataset(&args.data)?;
    let started_at = unix_seconds();
    let started = Instant::now();

    let kg = load_dataset(&args.data)
        .with_context(|| format!("cannot load dataset {}", args.data.display()))?;
    let load_seconds = started.elapsed().as_secs_f64();

    let out = args.out.clone().unwrap_or_else(|| {
        PathBuf::from(format!("{}-{}", dataset_name(&args.data), config.spec.kind))
    });
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let log_path = args.log.clone().unwrap_or_else(|| out.join("epochs.csv"));
    let mut log = BufWriter::new(
        fs::File::create(&log_path)
            .with_context(|| format!("cannot create {}", log_path.display()))?,
    );
    writeln!(log, "epoch,loss,seconds,active_pairs")?;

    if !args.quiet {
        eprintln!(
            "training {} (dim {}, rel_dim {}, {}) on {}: {} entities, {} relations, {} triples, {} threads",
            config.spec.kind,
            config.spec.dim,
            config.spec.rel_dim,
            config.spec.norm,
            args.data.display(),
            kg.entity_count(),
            kg.relation_count(),
            kg.train().len(),
            config.num_threads
        );
    }
    let train_started = Instant::now();
    let mut write_error = None;
    let (store, logs) = train_with(&kg, &config, |e| {
        if let Err(err) = writeln!(
            log,
            "{},{},{},{}",
            e.epoch, e.loss, e.seconds, e.active_pairs
        ) {
            write_error.get_or_insert(err);
        }
        if !args.quiet {
            progress(e, config.num_epochs);
        }
    })?;
    let train_seconds = train_started.elapsed().as_secs_f64();
    if let Some(err) = write_error {
        return Err(err).with_context(|| format!("cannot write {}", log_path.display()));
    }
    log.flush()?;

    let save_started = Instant::now();
    save(&store, &config.spec, &out)?;
    let save_seconds = save_started.elapsed().as_secs_f64();

    let run_config = RunConfig::from_train_config(&config);
    let manifest = RunManifest {
        run_id: run_id(&run_config, &args.data, started_at),
        version: env!("CARGO_PKG_VERSION"),
        started_at,
        dataset: args.data.clone(),
        embeddings: out.clone(),
        epoch_log: log_path,
        config: run_config,
        entities: kg.entity_count(),
        relations: kg.relation_count(),
        train_triples: kg.train().len(),
        final_loss: logs.last().map_or(0.0, |l| l.loss),
        timings: Timings {
            load_seconds,
            train_seconds,
            save_seconds,
            total_seconds: started.elapsed().as_secs_f64(),
        },
    };
    manifest.write(&out)?;
    if !args.quiet {
        eprintln!(
            "run {} done in {:.1}s, embeddings in {}",
            manifest.run_id,
            manifest.timings.total_seconds,
            out.display()
        );
    }
    Ok(())
}

fn metrics_json(m: &MetricSet) -> serde_json::Value {
    json!({ "mr": m.mr, "mrr": m.mrr, "hits1": m.hits1, "hits10": m.hits10 })
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    ensure_dataset(&args.data)?;
    let (store, spec) = load(&args.embeddings)
        .with_context(|| format!("cannot load embeddings from {}", args.embeddings.display()))?;
    let kg = load_dataset(&args.data)
        .with_context(|| format!("cannot load dataset {}", args.data.display()))?;
    let split = if args.split == "valid" {
        Split::Valid
    } else {
        Split::Test
    };
    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let execution = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let report = evaluate_triples(&spec, &store, &kg, kg.split(split), threads, execution)
        .with_context(|| {
            format!(
                "cannot evaluate {} on {}",
                args.embeddings.display(),
                args.data.display()
            )
        })?;

    println!("{spec_kind} on {split} split", spec_kind = spec.kind);
    println!("{report}");
    if let Some(path) = &args.json {
        let value = json!({
            "model": spec.kind.to_string(),
            "split": split.to_string(),
            "triples": report.per_triple.len(),
            "raw": metrics_json(&report.raw),
            "filter": metrics_json(&report.filter),
            "seconds": report.seconds,
        });
        fs::write(path, serde_json::to_string_pretty(&value)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

struct BenchRow {
    threads: usize,
    seconds: f64,
    final_loss: f64,
    losses: Vec<f64>,
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.repeats == 0 {
        return Err(config::UsageError("--repeats must be at least 1".into()).into());
    }
    let base = resolve(
        &args.hyper,
        Some(args.threads.0[0]),
        Path::new(&dataset_name(&args.data)),
    )?;
    ensure_dataset(&args.data)?;
    let kg = load_dataset(&args.data)
        .with_context(|| format!("cannot load dataset {}", args.data.display()))?;

    let mut rows = Vec::new();
    for &threads in &args.threads.0 {
        let config = TrainConfig {
            num_threads: threads,
            ..base.clone()
        };
        let mut runs = Vec::with_capacity(args.repeats);
        for repeat in 0..args.repeats {
            let started = Instant::now();
            let (_, logs) = kgembed::train(&kg, &config)?;
            let seconds = started.elapsed().as_secs_f64();
            if !args.quiet {
                eprintln!(
                    "threads {threads:>3} run {}/{}: {seconds:.2}s, final loss {:.4}",
                    repeat + 1,
                    args.repeats,
                    logs.last().map_or(0.0, |l| l.loss)
                );
            }
            runs.push((seconds, logs));
        }
        runs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (seconds, logs) = runs.swap_remove(runs.len() / 2);
        rows.push(BenchRow {
            threads,
            seconds,
            final_loss: logs.last().map_or(0.0, |l| l.loss),
            losses: logs.iter().map(|l| l.loss).collect(),
        });
    }

    let mut out: Box<dyn Write> = match &args.csv {
        Some(path) => Box::new(BufWriter::new(
            fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(out, "threads,seconds,speedup,final_loss")?;
    let reference = rows[0].seconds;
    for row in &rows {
        writeln!(
            out,
            "{},{},{},{}",
            row.threads,
            row.seconds,
            reference / row.seconds,
            row.final_loss
        )?;
    }
    out.flush()?;

    if let Some(path) = &args.curves {
        let mut w = BufWriter::new(
            fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        );
        let header: Vec<String> = rows
            .iter()
            .map(|r| format!("loss_p{}", r.threads))
            .collect();
        writeln!(w, "epoch,{}", header.join(","))?;
        for epoch in 0..base.num_epochs {
            let cells: Vec<String> = rows.iter().map(|r| r.losses[epoch].to_string()).collect();
            writeln!(w, "{},{}", epoch + 1, cells.join(","))?;
        }
        w.flush()?;
    }
    Ok(())
}
