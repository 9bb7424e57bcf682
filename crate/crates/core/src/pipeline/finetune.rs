use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{combined_loss, cross_entropy, AdamParams, Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::metrics::{auroc, ConfusionMatrix, argmax};
use crate::nn::{Mode, ModelState, Trainable};
use crate::pretext::TaskSpec;
use crate::rng::{derive_seed, seeded, stream};
use crate::signals::{batch_tensor, Epoch};
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Overrides the task's default auxiliary weights.
    pub weights: Option<[f64; 2]>,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    /// Skips the auxiliary heads entirely.
    pub supervised_only: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 1e-4,
            epochs: 20,
            batch_size: 32,
            weights: None,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            supervised_only: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main_loss: f64,
    /// Unweighted auxiliary cross-entropies; absent for supervised-only runs.
    pub ssl_loss: Option<[f64; 2]>,
    pub val_metric: f64,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLog {
    /// `cohens_kappa` for multiclass tasks, `auroc` for binary ones.
    pub monitor: String,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

impl FinetuneLog {
    /// The log with timing fields zeroed, for replay comparisons.
    pub fn without_timing(&self) -> FinetuneLog {
        let mut out = self.clone();
        out.records.iter_mut().for_each(|r| r.elapsed_ms = 0);
        out
    }
}

/// Eval-mode class probabilities, in input order.
pub fn predict(model: &mut ModelState, epochs: &[Epoch]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(epochs.len());
    for chunk in epochs.chunks(256) {
        out.extend(model.predict_proba(batch_tensor(chunk)?)?);
    }
    Ok(out)
}

/// Model-selection score: AUROC on binary tasks, Cohen's kappa otherwise.
pub fn monitor_metric(binary: bool, labels: &[usize], probs: &[Vec<f64>]) -> Result<f64> {
    if binary {
        let truth: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        auroc(&truth, &scores)
    } else {
        let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        Ok(ConfusionMatrix::new(labels, &pred, probs[0].len())?.cohens_kappa())
    }
}

/// Stage-I training: main cross-entropy plus the weighted auxiliary losses
/// on fresh transformed views, one optimizer step per batch over every
/// parameter. The model is left at the epoch with the best validation score.
///
/// Auxiliary views run through the backbone with batch statistics but do
/// not touch the running buffers or the dropout stream, so zero weights
/// give exactly the supervised-only trajectory.
pub fn finetune_stage1(
    model: &mut ModelState,
    train: &[Epoch],
    val: &[Epoch],
    spec: &TaskSpec,
    cfg: &FinetuneConfig,
) -> Result<FinetuneLog> {
    if train.len() < 2 || val.is_empty() {
        return Err(Error::config("fine-tuning needs at least two training epochs and a non-empty validation split"));
    }
    if cfg.batch_size < 2 || cfg.epochs == 0 {
        return Err(Error::config("fine-tuning needs batch_size >= 2 and epochs >= 1"));
    }
    if model.config().main_classes != spec.n_main {
        return Err(Error::config("main head does not match the task's class count"));
    }
    let weights = match cfg.weights {
        Some(w) => spec.clone().with_weights(w)?.weights,
        None => spec.weights,
    };
    if !cfg.supervised_only && model.config().ssl_classes != spec.ssl_classes() {
        return Err(Error::config(format!(
            "model SSL heads {:?} do not match task {:?}",
            model.config().ssl_classes,
            spec.ssl_classes()
        )));
    }

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.adam)?;
    let mut shuffle = seeded(derive_seed(cfg.seed, stream::SHUFFLE));
    let mut dropout = seeded(derive_seed(cfg.seed, stream::DROPOUT));
    let pretext_seed = derive_seed(cfg.seed, stream::PRETEXT);
    let val_labels: Vec<usize> = val.iter().map(|e| e.label).collect();
    let binary = spec.task.is_binary();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = FinetuneLog {
        monitor: if binary { "auroc" } else { "cohens_kappa" }.into(),
        records: Vec::new(),
        best_epoch: 0,
        best_metric: f64::NEG_INFINITY,
    };
    let mut best = None;
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut main_sum = 0.0;
        let mut ssl_sum = [0.0; 2];
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate().filter(|(_, b)| b.len() >= 2) {
            let labels: Vec<usize> = idx.iter().map(|&i| train[i].label).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, Trainable::All);
            let x = model.input(&mut tape, batch_tensor(idx.iter().map(|&i| &train[i]))?)?;
            let feat = model.features(&mut tape, &vars, x, Mode::Train, Some(&mut dropout))?;
            let logits = model.main_logits(&mut tape, &vars, feat)?;

            let loss = if cfg.supervised_only {
                cross_entropy(&mut tape, logits, &labels)?
            } else {
                let views = make_views(spec, train, idx, derive_seed(pretext_seed, ((epoch as u64) << 32) | bi as u64))?;
                let mut ssl_logits = Vec::with_capacity(2);
                let mut ssl_labels = Vec::with_capacity(2);
                for (j, (view_batch, view_labels)) in views.into_iter().enumerate() {
                    let xv = model.input(&mut tape, view_batch)?;
                    let fv = model.features(&mut tape, &vars, xv, Mode::BatchStats { update_running: false }, None)?;
                    ssl_logits.push(model.ssl_logits(&mut tape, &vars, j, fv)?);
                    ssl_labels.push(view_labels);
                }
                for j in 0..2 {
                    let ce = cross_entropy(&mut tape, ssl_logits[j], &ssl_labels[j])?;
                    ssl_sum[j] += tape.value(ce)[0];
                }
                combined_loss(&mut tape, logits, &labels, &ssl_logits, &ssl_labels, &weights)?
            };
            let main_ce = cross_entropy(&mut tape, logits, &labels)?;
            main_sum += tape.value(main_ce)[0];
            batches += 1;

            tape.backward(loss)?;
            model.zero_grad();
            model.accumulate_grads(&tape, &vars)?;
            opt.step(model.params_mut())?;
        }
        model.zero_grad();

        let probs = predict(model, val)?;
        let val_metric = monitor_metric(binary, &val_labels, &probs)?;
        let n = batches.max(1) as f64;
        log.records.push(EpochRecord {
            epoch,
            main_loss: main_sum / n,
            ssl_loss: (!cfg.supervised_only).then(|| [ssl_sum[0] / n, ssl_sum[1] / n]),
            val_metric,
            elapsed_ms: start.elapsed().as_millis() as u64,
        });
        if val_metric > log.best_metric {
            log.best_metric = val_metric;
            log.best_epoch = epoch;
            best = Some(model.snapshot(None));
        }
    }
    if let Some(s) = best {
        model.restore(&s)?;
    }
    Ok(log)
}

/// One fresh view per auxiliary task for every sample of the batch. Each
/// sample draws from its own stream so the result is independent of
/// thread scheduling.
fn make_views(
    spec: &TaskSpec,
    data: &[Epoch],
    idx: &[usize],
    batch_seed: u64,
) -> Result<Vec<(crate::tensor::Tensor, Vec<usize>)>> {
    let samples: Vec<[crate::pretext::PretextSample; 2]> = idx
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut rng = seeded(derive_seed(batch_seed, k as u64));
            Ok([spec.view(0, &data[i], &mut rng)?, spec.view(1, &data[i], &mut rng)?])
        })
        .collect::<Result<_>>()?;
    (0..2)
        .map(|j| {
            let t = batch_tensor(samples.iter().map(|s| &s[j].view))?;
            Ok((t, samples.iter().map(|s| s[j].label).collect()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::signals::{generate_dataset, preprocess, GeneratorConfig, PreprocessConfig};
    use crate::task::TaskKind;

    fn data(task: TaskKind, subjects: usize, trials: usize, seed: u64) -> Vec<Epoch> {
        let cfg = GeneratorConfig {
            n_subjects: subjects,
            trials_per_subject: trials,
            ..GeneratorConfig::for_task(task)
        };
        generate_dataset(&cfg, seed)
            .unwrap()
            .iter()
            .flat_map(|r| preprocess(r, &PreprocessConfig::default()).unwrap())
            .collect()
    }

    fn model_for(spec: &TaskSpec, seed: u64) -> ModelState {
        let cfg = ModelConfig {
            main_classes: spec.n_main,
            ssl_classes: spec.ssl_classes(),
            ..Default::default()
        };
        ModelState::new(cfg, seed).unwrap()
    }

    #[test]
    fn zero_weights_match_supervised_only_bitwise() {
        let spec = TaskSpec::for_task(TaskKind::SynMi);
        let train = data(TaskKind::SynMi, 2, 24, 1);
        let val = data(TaskKind::SynMi, 2, 8, 2);
        let cfg = FinetuneConfig {
            epochs: 2,
            batch_size: 16,
            seed: 4,
            ..Default::default()
        };
        let mut a = model_for(&spec, 3);
        let mut b = a.clone();
        let la = finetune_stage1(&mut a, &train, &val, &spec, &FinetuneConfig { weights: Some([0.0, 0.0]), ..cfg.clone() }).unwrap();
        let lb = finetune_stage1(&mut b, &train, &val, &spec, &FinetuneConfig { supervised_only: true, ..cfg }).unwrap();
        assert_eq!(a, b);
        let main = |l: &FinetuneLog| l.records.iter().map(|r| (r.main_loss.to_bits(), r.val_metric.to_bits())).collect::<Vec<_>>();
        assert_eq!(main(&la), main(&lb));
    }

    #[test]
    fn replay_reproduces_log_and_parameters() {
        let spec = TaskSpec::for_task(TaskKind::SynStress);
        let train = data(TaskKind::SynStress, 2, 20, 1);
        let val = data(TaskKind::SynStress, 2, 10, 2);
        let cfg = FinetuneConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut a = model_for(&spec, 3);
        let mut b = a.clone();
        let la = finetune_stage1(&mut a, &train, &val, &spec, &cfg).unwrap();
        let lb = finetune_stage1(&mut b, &train, &val, &spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.without_timing(), lb.without_timing());
        assert_eq!(la.monitor, "auroc");
    }

    #[test]
    fn selected_checkpoint_scores_the_logged_maximum() {
        let spec = TaskSpec::for_task(TaskKind::SynMi);
        let train = data(TaskKind::SynMi, 2, 40, 5);
        let val = data(TaskKind::SynMi, 2, 12, 6);
        let cfg = FinetuneConfig {
            epochs: 4,
            batch_size: 16,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut m = model_for(&spec, 1);
        let log = finetune_stage1(&mut m, &train, &val, &spec, &cfg).unwrap();
        let max = log.records.iter().map(|r| r.val_metric).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(log.best_metric, max);
        let labels: Vec<usize> = val.iter().map(|e| e.label).collect();
        let probs = predict(&mut m, &val).unwrap();
        assert_eq!(monitor_metric(false, &labels, &probs).unwrap(), max);
    }

    #[test]
    fn empty_split_rejected() {
        let spec = TaskSpec::for_task(TaskKind::SynMi);
        let train = data(TaskKind::SynMi, 2, 4, 1);
        let mut m = model_for(&spec, 1);
        let r = finetune_stage1(&mut m, &train, &[], &spec, &FinetuneConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn ssl_head_gradient_scales_with_its_weight() {
        let spec = TaskSpec::for_task(TaskKind::SynSpeech);
        let epochs = data(TaskKind::SynSpeech, 2, 3, 8);
        let mut model = model_for(&spec, 2);
        let views = make_views(&spec, &epochs, &(0..epochs.len()).collect::<Vec<_>>(), 17).unwrap();
        let labels: Vec<usize> = epochs.iter().map(|e| e.label).collect();
        let x = batch_tensor(&epochs).unwrap();
        let mut grads = |w: [f64; 2], only: Option<usize>| {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, Trainable::All);
            let xi = model.input(&mut tape, x.clone()).unwrap();
            let f = model.features(&mut tape, &vars, xi, Mode::BatchStats { update_running: false }, None).unwrap();
            let logits = model.main_logits(&mut tape, &vars, f).unwrap();
            let mut sl = Vec::new();
            for (j, (vb, _)) in views.iter().enumerate() {
                let xv = model.input(&mut tape, vb.clone()).unwrap();
                let fv = model.features(&mut tape, &vars, xv, Mode::BatchStats { update_running: false }, None).unwrap();
                sl.push(model.ssl_logits(&mut tape, &vars, j, fv).unwrap());
            }
            let vl: Vec<Vec<usize>> = views.iter().map(|v| v.1.clone()).collect();
            let loss = match only {
                Some(j) => cross_entropy(&mut tape, sl[j], &vl[j]).unwrap(),
                None => combined_loss(&mut tape, logits, &labels, &sl, &vl, &w).unwrap(),
            };
            tape.backward(loss).unwrap();
            // First-layer weight of each SSL head.
            let d = model.config().head_depth;
            (0..2).map(|j| tape.grad(vars.all()[7 + (j + 1) * 2 * d]).map(<[f64]>::to_vec)).collect::<Vec<_>>()
        };
        let alone = [grads([0.0; 2], Some(0))[0].clone().unwrap(), grads([0.0; 2], Some(1))[1].clone().unwrap()];
        for w in [[0.6, 0.6], [0.2, 0.1], [0.1, 0.8], [1.7, 0.0]] {
            let g = grads(w, None);
            for j in 0..2 {
                for (a, b) in g[j].as_ref().unwrap().iter().zip(&alone[j]) {
                    assert!((a - w[j] * b).abs() <= 1e-12 * (1.0 + b.abs()), "w={w:?} head {j}");
                }
            }
        }
    }
}
