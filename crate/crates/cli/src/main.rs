use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use neurottt_core::adapt::{run_adaptation, AdaptStrategy};
use neurottt_core::harness::{
    adapt_config, build_splits, emit_report, finetune_config, initial_model, run_ablation, run_experiment_with_logs, with_workers,
    ExperimentConfig, RunReport, Strategy,
};
use neurottt_core::metrics::EvalResult;
use neurottt_core::nn::{gradient_suite, load_checkpoint, narrow, save_checkpoint, ModelState};
use neurottt_core::pipeline::finetune_stage1;
use neurottt_core::rng::{derive_seed, stream};
use neurottt_core::signals::{read_split, write_split, Epoch};
use neurottt_core::{Error, Result, TaskKind};

/// Test-time adaptation experiments on synthetic EEG-style tasks.
#[derive(Parser)]
#[command(name = "neurottt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; omitted fields take task defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// syn_speech, syn_stress or syn_mi.
    #[arg(long)]
    task: Option<TaskKind>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write train/val/test splits.
    Generate(Common),
    /// Masked-reconstruction pretraining on the training split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Stage-I fine-tuning with the auxiliary heads.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Starting weights (e.g. from `pretrain`); fresh init when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// stage1_ssl or supervised_only.
        #[arg(long, default_value = "stage1_ssl")]
        strategy: Strategy,
    },
    /// Stage-II adaptation of a fine-tuned checkpoint on the test split.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// none, ttt_ssl or tent.
        #[arg(long, default_value = "ttt_ssl")]
        strategy: AdaptStrategy,
    },
    /// Full multi-seed comparison of strategies.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Repeatable; all four when absent.
        #[arg(long)]
        strategy: Vec<Strategy>,
    },
    /// Auxiliary-task subsets crossed with adaptation strategies.
    Ablate(Common),
    /// Finite-difference check of every layer and the full model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        batch: usize,
        /// Check the configured widths instead of the narrow variant.
        #[arg(long)]
        full_width: bool,
    },
    /// Summarize a saved report.json and optionally re-emit its CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, c.task) {
        (Some(path), task) => {
            let cfg = ExperimentConfig::load(path)?;
            if task.is_some_and(|t| t != cfg.task) {
                return Err(Error::config(format!("--task disagrees with config task {}", cfg.task)));
            }
            cfg
        }
        (None, task) => ExperimentConfig::for_task(task.unwrap_or(TaskKind::SynMi)),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn load_splits(dir: &Path, names: &[&str]) -> Result<Vec<Vec<Epoch>>> {
    names.iter().map(|n| read_split(dir, n).map(|(e, _)| e)).collect()
}

fn summary(report: &RunReport) -> Value {
    let rows: Vec<Value> = report
        .strategies
        .iter()
        .map(|s| {
            let metrics: serde_json::Map<String, Value> = s
                .aggregates
                .iter()
                .map(|a| (a.metric.clone(), json!({ "mean": a.mean, "std": a.std })))
                .collect();
            json!({ "strategy": s.strategy, "metrics": metrics })
        })
        .collect();
    json!({ "task": report.task, "config_hash": report.config_hash, "strategies": rows })
}

fn run(cmd: Command) -> Result<Value> {
    match cmd {
        Command::Generate(c) => {
            let cfg = resolve(&c)?;
            let splits = build_splits(&cfg, cfg.seed)?;
            let spec = cfg.task_spec()?;
            for (name, epochs) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
                write_split(&c.out, name, epochs, &spec.montage, &cfg.generator, cfg.seed)?;
            }
            std::fs::write(c.out.join("config.toml"), cfg.to_toml_string()?)?;
            Ok(json!({
                "task": cfg.task.name(),
                "seed": cfg.seed,
                "train": splits.train.len(),
                "val": splits.val.len(),
                "test": splits.test.len(),
            }))
        }
        Command::Pretrain { common, data } => {
            let mut cfg = resolve(&common)?;
            cfg.pretrain.enabled = true;
            let train = &load_splits(&data, &["train"])?[0];
            let (model, log) = initial_model(&cfg, cfg.seed, train)?;
            std::fs::create_dir_all(&common.out)?;
            save_checkpoint(&model, &common.out.join("pretrained.ckpt"))?;
            write_json(&common.out.join("pretrain_log.json"), &log)?;
            Ok(json!({ "pretrain": log }))
        }
        Command::Finetune {
            common,
            data,
            checkpoint,
            strategy,
        } => {
            let cfg = resolve(&common)?;
            let spec = cfg.task_spec()?;
            let w = match strategy {
                Strategy::SupervisedOnly => [0.0, 0.0],
                Strategy::Stage1Ssl => spec.weights,
                other => {
                    return Err(Error::config(format!(
                        "{} is a test-time strategy; use `adapt`",
                        other.name()
                    )))
                }
            };
            let splits = load_splits(&data, &["train", "val"])?;
            let mut model = match checkpoint {
                Some(p) => load_checkpoint(&p)?,
                None => ModelState::new(cfg.model.clone(), derive_seed(cfg.seed, stream::INIT))?,
            };
            let log = finetune_stage1(&mut model, &splits[0], &splits[1], &spec, &finetune_config(&cfg, cfg.seed, w))?;
            std::fs::create_dir_all(&common.out)?;
            save_checkpoint(&model, &common.out.join("finetuned.ckpt"))?;
            write_json(&common.out.join("finetune_log.json"), &log)?;
            Ok(json!({
                "strategy": strategy.name(),
                "monitor": log.monitor,
                "best_epoch": log.best_epoch,
                "best_metric": log.best_metric,
            }))
        }
        Command::Adapt {
            common,
            data,
            checkpoint,
            strategy,
        } => {
            let cfg = resolve(&common)?;
            let spec = cfg.task_spec()?;
            let test = &load_splits(&data, &["test"])?[0];
            let model = load_checkpoint(&checkpoint)?;
            let out = run_adaptation(strategy, &model, test, &spec, &adapt_config(&cfg, cfg.seed))?;
            let labels: Vec<usize> = test.iter().map(|e| e.label).collect();
            let result = EvalResult::from_probs(&labels, &out.probs, spec.n_main)?;
            std::fs::create_dir_all(&common.out)?;
            write_json(
                &common.out.join("predictions.json"),
                &json!({ "strategy": strategy.name(), "labels": labels, "probs": out.probs, "result": result }),
            )?;
            write_json(&common.out.join("adapt_log.json"), &out.log)?;
            let headline: serde_json::Map<String, Value> = result
                .headline(cfg.task.is_binary())
                .into_iter()
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect();
            Ok(json!({ "strategy": strategy.name(), "metrics": headline }))
        }
        Command::Evaluate { common, strategy } => {
            let mut cfg = resolve(&common)?;
            if !strategy.is_empty() {
                cfg.strategies = strategy;
                cfg.validate()?;
            }
            let (report, logs) = run_experiment_with_logs(&cfg)?;
            emit_report(&report, &common.out)?;
            write_json(&common.out.join("logs.json"), &logs)?;
            std::fs::write(common.out.join("config.toml"), cfg.to_toml_string()?)?;
            Ok(summary(&report))
        }
        Command::Ablate(c) => {
            let cfg = resolve(&c)?;
            let report = run_ablation(&cfg)?;
            emit_report(&report, &c.out)?;
            std::fs::write(c.out.join("config.toml"), cfg.to_toml_string()?)?;
            Ok(summary(&report))
        }
        Command::Gradcheck {
            common,
            batch,
            full_width,
        } => {
            let cfg = resolve(&common)?;
            let model = if full_width { cfg.model.clone() } else { narrow(&cfg.model) };
            let start = Instant::now();
            let entries = gradient_suite(&model, batch, cfg.seed)?;
            let worst = entries.iter().map(|e| e.max_relative_error).fold(0.0, f64::max);
            let value = json!({
                "model": model,
                "entries": entries,
                "max_relative_error": worst,
                "elapsed_s": start.elapsed().as_secs_f64(),
            });
            if !(worst < 1e-5) {
                let failing: Vec<String> = entries
                    .iter()
                    .filter(|e| !(e.max_relative_error < 1e-5))
                    .map(|e| format!("{} ({:e} at {:?}, values {:?})", e.name, e.max_relative_error, e.worst, e.worst_values))
                    .collect();
                return Err(Error::contract(format!("gradient check above 1e-5: {}", failing.join(", "))));
            }
            Ok(value)
        }
        Command::Report { input, out } => {
            let report: RunReport = serde_json::from_str(&std::fs::read_to_string(&input)?)?;
            if let Some(dir) = out {
                emit_report(&report, &dir)?;
            }
            Ok(summary(&report))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return fail("usage", e.to_string().trim().to_string(), 2),
    };
    match with_workers(|| run(cli.command)).and_then(|r| r) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), exit_code(&e)),
    }
}
