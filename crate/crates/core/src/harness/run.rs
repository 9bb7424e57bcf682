use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SplitProtocol, Strategy};
use crate::adapt::{run_adaptation, ttt_seed, AdaptConfig, AdaptRecord, AdaptStrategy};
use crate::error::{Error, Result};
use crate::metrics::EvalResult;
use crate::nn::ModelState;
use crate::pipeline::{finetune_stage1, masked_pretrain, FinetuneConfig, FinetuneLog, PretrainLog};
use crate::pretext::TaskSpec;
use crate::rng::{derive_seed, stream};
use crate::signals::{generate_dataset, preprocess, quantize, Epoch, Recording};

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<Epoch>,
    pub val: Vec<Epoch>,
    pub test: Vec<Epoch>,
}

fn epochs_of(recs: &[&Recording], cfg: &ExperimentConfig) -> Result<Vec<Epoch>> {
    let mut out = Vec::new();
    for r in recs {
        out.extend(preprocess(r, &cfg.preprocess)?);
    }
    quantize(&mut out);
    Ok(out)
}

/// Generates the dataset for `seed` and cuts it into splits. All samples
/// are rounded to `f32`, the precision of split files on disk.
pub fn build_splits(cfg: &ExperimentConfig, seed: u64) -> Result<Splits> {
    cfg.validate()?;
    let recs = generate_dataset(&cfg.generator, derive_seed(seed, stream::DATA))?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    match &cfg.split {
        SplitProtocol::CrossSubject {
            train: tr,
            val: va,
            test: te,
        } => {
            for r in &recs {
                if tr.contains(&r.subject_id) {
                    train.push(r);
                } else if va.contains(&r.subject_id) {
                    val.push(r);
                } else if te.contains(&r.subject_id) {
                    test.push(r);
                }
            }
        }
        SplitProtocol::WithinSubject { val_fraction, test_fraction } => {
            let classes = cfg.task.n_classes();
            let mut per_subject: BTreeMap<u32, Vec<&Recording>> = BTreeMap::new();
            for r in &recs {
                per_subject.entry(r.subject_id).or_default().push(r);
            }
            for rs in per_subject.values() {
                let blocks = rs.len().div_ceil(classes);
                let n_test = ((blocks as f64 * test_fraction).round() as usize).max(1);
                let n_val = ((blocks as f64 * val_fraction).round() as usize).max(1);
                if n_test + n_val >= blocks {
                    return Err(Error::config("too few trials per subject for a within-subject split"));
                }
                for (i, r) in rs.iter().enumerate() {
                    let b = i / classes;
                    if b >= blocks - n_test {
                        test.push(*r);
                    } else if b >= blocks - n_test - n_val {
                        val.push(*r);
                    } else {
                        train.push(*r);
                    }
                }
            }
        }
    }
    let mut splits = Splits {
        train: epochs_of(&train, cfg)?,
        val: epochs_of(&val, cfg)?,
        test: epochs_of(&test, cfg)?,
    };
    if cfg.test_gain != 1.0 {
        splits.test = splits.test.iter().map(|e| e.scaled(cfg.test_gain)).collect();
    }
    if splits.train.len() < 2 || splits.val.is_empty() || splits.test.is_empty() {
        return Err(Error::config("a split came out empty; check subjects and trial counts"));
    }
    Ok(splits)
}

/// Fresh model for `seed`, pretrained on the unlabeled training split when
/// the config asks for it.
pub fn initial_model(cfg: &ExperimentConfig, seed: u64, train: &[Epoch]) -> Result<(ModelState, Option<PretrainLog>)> {
    let mut model = ModelState::new(cfg.model.clone(), derive_seed(seed, stream::INIT))?;
    let log = if cfg.pretrain.enabled {
        Some(masked_pretrain(&mut model, train, &cfg.pretrain.config, seed)?)
    } else {
        None
    };
    Ok((model, log))
}

pub fn finetune_config(cfg: &ExperimentConfig, seed: u64, weights: [f64; 2]) -> FinetuneConfig {
    FinetuneConfig {
        weights: Some(weights),
        supervised_only: false,
        seed,
        ..cfg.finetune.clone()
    }
}

pub fn adapt_config(cfg: &ExperimentConfig, seed: u64) -> AdaptConfig {
    AdaptConfig {
        ttt: crate::adapt::TttConfig {
            seed: ttt_seed(seed),
            ..cfg.ttt.clone()
        },
        tent: cfg.tent.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub result: EvalResult,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single seed.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub seeds: Vec<SeedEval>,
    pub aggregates: Vec<Aggregate>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl StrategyReport {
    pub fn new(strategy: &str, seeds: Vec<SeedEval>, binary: bool) -> Self {
        let mut aggregates = Vec::new();
        if let Some(first) = seeds.first() {
            for (i, (name, _)) in first.result.headline(binary).into_iter().enumerate() {
                let vals: Vec<f64> = seeds.iter().map(|s| s.result.headline(binary)[i].1).collect();
                let (mean, std) = mean_std(&vals);
                aggregates.push(Aggregate {
                    metric: name.to_string(),
                    mean,
                    std,
                });
            }
        }
        StrategyReport {
            strategy: strategy.to_string(),
            seeds,
            aggregates,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregates.iter().find(|a| a.metric == metric).map(|a| a.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub binary: bool,
    pub config_hash: String,
    pub strategies: Vec<StrategyReport>,
    pub wall_ms: u64,
}

impl RunReport {
    pub fn strategy(&self, s: Strategy) -> Option<&StrategyReport> {
        self.strategies.iter().find(|r| r.strategy == s.name())
    }

    /// Copy with every timing field zeroed.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        r.wall_ms = 0;
        for s in &mut r.strategies {
            s.seeds.iter_mut().for_each(|e| e.wall_ms = 0);
        }
        r
    }
}

/// Logs produced by one seed of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedLogs {
    pub seed: u64,
    pub pretrain: Option<PretrainLog>,
    pub finetune: BTreeMap<String, FinetuneLog>,
    pub adaptation: BTreeMap<String, Vec<AdaptRecord>>,
}

/// Fine-tunes one model per distinct weight vector and evaluates every
/// requested (weights, adaptation) pair.
fn run_cells(
    cfg: &ExperimentConfig,
    seed: u64,
    cells: &[(String, [f64; 2], AdaptStrategy)],
) -> Result<(Vec<(String, SeedEval)>, SeedLogs)> {
    let splits = build_splits(cfg, seed)?;
    let spec = cfg.task_spec()?;
    let (base, pretrain) = initial_model(cfg, seed, &splits.train)?;
    let labels: Vec<usize> = splits.test.iter().map(|e| e.label).collect();
    let adapt_cfg = adapt_config(cfg, seed);
    let mut logs = SeedLogs {
        seed,
        pretrain,
        finetune: BTreeMap::new(),
        adaptation: BTreeMap::new(),
    };
    let mut tuned: Vec<([f64; 2], ModelState)> = Vec::new();
    let mut out = Vec::with_capacity(cells.len());
    for (name, w, strategy) in cells {
        let start = Instant::now();
        let model = match tuned.iter().find(|(tw, _)| tw == w) {
            Some((_, m)) => m,
            None => {
                let mut m = base.clone();
                let log = finetune_stage1(&mut m, &splits.train, &splits.val, &spec, &finetune_config(cfg, seed, *w))?;
                logs.finetune.insert(format!("{:?}", w), log);
                tuned.push((*w, m));
                &tuned.last().unwrap().1
            }
        };
        let adapted = run_adaptation(*strategy, model, &splits.test, &spec, &adapt_cfg)?;
        let result = EvalResult::from_probs(&labels, &adapted.probs, spec.n_main)?;
        logs.adaptation.insert(name.clone(), adapted.log);
        out.push((
            name.clone(),
            SeedEval {
                seed,
                result,
                wall_ms: start.elapsed().as_millis() as u64,
            },
        ));
    }
    Ok((out, logs))
}

fn strategy_cell(s: Strategy, spec: &TaskSpec) -> (String, [f64; 2], AdaptStrategy) {
    let (w, a) = match s {
        Strategy::SupervisedOnly => ([0.0, 0.0], AdaptStrategy::None),
        Strategy::Stage1Ssl => (spec.weights, AdaptStrategy::None),
        Strategy::TttSsl => (spec.weights, AdaptStrategy::TttSsl),
        Strategy::Tent => (spec.weights, AdaptStrategy::Tent),
    };
    (s.name().to_string(), w, a)
}

fn collect(
    cfg: &ExperimentConfig,
    names: &[String],
    per_seed: Vec<(Vec<(String, SeedEval)>, SeedLogs)>,
) -> (Vec<StrategyReport>, Vec<SeedLogs>) {
    let binary = cfg.task.is_binary();
    let mut logs = Vec::new();
    let mut by_name: BTreeMap<String, Vec<SeedEval>> = BTreeMap::new();
    for (evals, l) in per_seed {
        logs.push(l);
        for (n, e) in evals {
            by_name.entry(n).or_default().push(e);
        }
    }
    let reports = names
        .iter()
        .map(|n| StrategyReport::new(n, by_name.remove(n).unwrap_or_default(), binary))
        .collect();
    (reports, logs)
}

/// Every strategy on every seed. Seeds run in parallel on the current
/// worker pool.
pub fn run_experiment_with_logs(cfg: &ExperimentConfig) -> Result<(RunReport, Vec<SeedLogs>)> {
    cfg.validate()?;
    let start = Instant::now();
    let spec = cfg.task_spec()?;
    let cells: Vec<_> = cfg.strategies.iter().map(|&s| strategy_cell(s, &spec)).collect();
    let names: Vec<String> = cells.iter().map(|c| c.0.clone()).collect();
    let per_seed: Vec<_> = if cells.is_empty() {
        Vec::new()
    } else {
        cfg.seeds().into_par_iter().map(|s| run_cells(cfg, s, &cells)).collect::<Result<_>>()?
    };
    let (strategies, logs) = collect(cfg, &names, per_seed);
    Ok((
        RunReport {
            task: cfg.task.name().to_string(),
            binary: cfg.task.is_binary(),
            config_hash: cfg.hash(),
            strategies,
            wall_ms: start.elapsed().as_millis() as u64,
        },
        logs,
    ))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with_logs(cfg).map(|r| r.0)
}

pub const ABLATION_SSL: [&str; 4] = ["no_ssl", "ssl1_only", "ssl2_only", "both"];
pub const ABLATION_ADAPT: [AdaptStrategy; 3] = [AdaptStrategy::None, AdaptStrategy::TttSsl, AdaptStrategy::Tent];

/// The 4 × 3 grid of auxiliary-task subsets and adaptation strategies.
/// Cells are named `<ssl>/<adapt>`, e.g. `both/tent`.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let spec = cfg.task_spec()?;
    let [w1, w2] = spec.weights;
    let subsets = [[0.0, 0.0], [w1, 0.0], [0.0, w2], [w1, w2]];
    let mut cells = Vec::new();
    for (name, w) in ABLATION_SSL.iter().zip(subsets) {
        for a in ABLATION_ADAPT {
            cells.push((format!("{name}/{}", a.name()), w, a));
        }
    }
    let names: Vec<String> = cells.iter().map(|c| c.0.clone()).collect();
    let per_seed: Vec<_> = cfg.seeds().into_par_iter().map(|s| run_cells(cfg, s, &cells)).collect::<Result<_>>()?;
    let (strategies, _) = collect(cfg, &names, per_seed);
    Ok(RunReport {
        task: cfg.task.name().to_string(),
        binary: cfg.task.is_binary(),
        config_hash: cfg.hash(),
        strategies,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Runs `f` on a pool sized by `NEUROTTT_WORKERS` (all cores when unset).
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let n = match std::env::var("NEUROTTT_WORKERS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("NEUROTTT_WORKERS={v:?} is not a positive integer")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    Ok(pool.install(f))
}
