//! Test-time adaptation: per-sample self-supervised updates and BN-only
//! entropy minimization.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mode, ModelState, ModelVars, ParamGroup, Trainable};
use crate::pipeline::{cross_entropy, predict, AdamParams, Optimizer, OptimizerKind};
use crate::pretext::TaskSpec;
use crate::rng::{derive_seed, mix64, seeded, SeedRng};
use crate::signals::{batch_tensor, Epoch};
use crate::tensor::{Tape, Var};

/// `−Σ p log p` in nats, with `0·log 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::contract("entropy needs non-negative probabilities"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("probabilities sum to {total}")));
    }
    Ok(-probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SslSelection {
    BothWeighted,
    FirstOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TttConfig {
    pub alpha: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub online: bool,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    pub ssl_task_selection: SslSelection,
    pub seed: u64,
}

impl Default for TttConfig {
    fn default() -> Self {
        TttConfig {
            alpha: 1e-5,
            steps: 1,
            batch_size: 1,
            online: false,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            ssl_task_selection: SslSelection::BothWeighted,
            seed: 0,
        }
    }
}

impl TttConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || self.steps == 0 || self.batch_size == 0 {
            return Err(Error::config("ttt needs alpha > 0, steps >= 1 and batch_size >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TentConfig {
    pub lr: f64,
    pub steps_per_batch: usize,
    pub bn_momentum: f64,
    pub update_running_stats: bool,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
}

impl Default for TentConfig {
    fn default() -> Self {
        TentConfig {
            lr: 1e-4,
            steps_per_batch: 3,
            bn_momentum: 0.1,
            update_running_stats: true,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
        }
    }
}

impl TentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.steps_per_batch == 0 {
            return Err(Error::config("tent needs lr > 0 and steps_per_batch >= 1"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::config("tent bn_momentum must lie in (0, 1)"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("tent needs batch_size >= 2 for batch statistics"));
        }
        Ok(())
    }
}

/// Euclidean norm of the parameter change between two states.
pub fn param_delta_norm(before: &ModelState, after: &ModelState) -> f64 {
    before
        .params()
        .iter()
        .zip(after.params().iter())
        .flat_map(|(a, b)| a.tensor.data().iter().zip(b.tensor.data()).map(|(x, y)| (y - x) * (y - x)))
        .sum::<f64>()
        .sqrt()
}

/// Seed for a test chunk derived from its contents, so a sample's views do
/// not depend on where it sits in the stream.
pub fn content_seed(seed: u64, epochs: &[Epoch]) -> u64 {
    let mut h = seed;
    for e in epochs {
        for v in e.data() {
            h = mix64(h ^ v.to_bits());
        }
    }
    h
}

/// `L_SSL` on fresh views of `epochs`, recorded on `tape`.
pub fn ssl_loss(
    model: &mut ModelState,
    tape: &mut Tape,
    vars: &ModelVars,
    epochs: &[Epoch],
    spec: &TaskSpec,
    selection: SslSelection,
    rng: &mut SeedRng,
) -> Result<Var> {
    let heads: Vec<usize> = match selection {
        SslSelection::BothWeighted => vec![0, 1],
        SslSelection::FirstOnly => vec![0],
    };
    let mut total: Option<Var> = None;
    for j in heads {
        let mut views = Vec::with_capacity(epochs.len());
        let mut labels = Vec::with_capacity(epochs.len());
        for e in epochs {
            let s = spec.view(j, e, rng)?;
            labels.push(s.label);
            views.push(s.view);
        }
        let x = model.input(tape, batch_tensor(&views)?)?;
        let f = model.features(tape, vars, x, Mode::Eval, None)?;
        let logits = model.ssl_logits(tape, vars, j, f)?;
        let ce = cross_entropy(tape, logits, &labels)?;
        let w = match selection {
            SslSelection::BothWeighted => spec.weights[j],
            SslSelection::FirstOnly => 1.0,
        };
        let term = tape.scale(ce, w)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::contract("no SSL task selected"))
}

fn check_heads(model: &ModelState, spec: &TaskSpec) -> Result<()> {
    if model.n_ssl_heads() < 2 || model.config().ssl_classes != spec.ssl_classes() {
        return Err(Error::config("test-time training needs the task's two SSL heads"));
    }
    Ok(())
}

/// Takes `cfg.steps` optimizer steps on `L_SSL` over every parameter,
/// leaving the model adapted. Returns the loss before each step.
pub fn ttt_ssl_steps(
    model: &mut ModelState,
    epochs: &[Epoch],
    spec: &TaskSpec,
    cfg: &TttConfig,
    opt: &mut Optimizer,
    rng: &mut SeedRng,
) -> Result<Vec<f64>> {
    check_heads(model, spec)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, Trainable::All);
        let loss = ssl_loss(model, &mut tape, &vars, epochs, spec, cfg.ssl_task_selection, rng)?;
        losses.push(tape.value(loss)[0]);
        tape.backward(loss)?;
        model.zero_grad();
        model.accumulate_grads(&tape, &vars)?;
        opt.step(model.params_mut())?;
    }
    model.zero_grad();
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TttRecord {
    pub first_sample: usize,
    pub n_samples: usize,
    pub ssl_loss: Vec<f64>,
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub param_delta_norm: f64,
    pub elapsed_us: u64,
}

/// Adapts on `epochs` with `L_SSL`, then predicts them through the main
/// head with the adapted parameters. Unless `cfg.online`, the model is
/// restored to its pre-adaptation state afterwards.
pub fn ttt_ssl_adapt_predict(
    model: &mut ModelState,
    epochs: &[Epoch],
    spec: &TaskSpec,
    cfg: &TttConfig,
    opt: Option<&mut Optimizer>,
) -> Result<(Vec<Vec<f64>>, TttRecord)> {
    cfg.validate()?;
    check_heads(model, spec)?;
    let start = Instant::now();
    let snapshot = model.snapshot(None);
    let before = predict(model, epochs)?;
    let mut rng = seeded(content_seed(cfg.seed, epochs));
    let mut fresh = Optimizer::new(cfg.optimizer, cfg.alpha, cfg.adam)?;
    let opt = opt.unwrap_or(&mut fresh);
    let ssl = ttt_ssl_steps(model, epochs, spec, cfg, opt, &mut rng)?;
    let probs = predict(model, epochs)?;
    let record = TttRecord {
        first_sample: 0,
        n_samples: epochs.len(),
        ssl_loss: ssl,
        entropy_before: mean_entropy(&before)?,
        entropy_after: mean_entropy(&probs)?,
        param_delta_norm: param_delta_norm(snapshot.model(), model),
        elapsed_us: start.elapsed().as_micros() as u64,
    };
    if !cfg.online {
        model.restore(&snapshot)?;
    }
    Ok((probs, record))
}

pub fn mean_entropy(probs: &[Vec<f64>]) -> Result<f64> {
    let mut s = 0.0;
    for p in probs {
        s += entropy(p)?;
    }
    Ok(s / probs.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TentRecord {
    pub first_sample: usize,
    pub n_samples: usize,
    /// Mean entropy before each update, then after the last one.
    pub entropy: Vec<f64>,
    pub param_delta_norm: f64,
    pub elapsed_us: u64,
}

/// Forward in batch-statistics mode; returns the mean-entropy node, the
/// probabilities and the parameter bindings.
fn tent_forward(
    model: &mut ModelState,
    tape: &mut Tape,
    epochs: &[Epoch],
    update_running: bool,
) -> Result<(Var, Vec<Vec<f64>>, ModelVars)> {
    let vars = model.bind(tape, Trainable::BnOnly);
    let x = model.input(tape, batch_tensor(epochs)?)?;
    let f = model.features(tape, &vars, x, Mode::BatchStats { update_running }, None)?;
    let logits = model.main_logits(tape, &vars, f)?;
    let p = tape.softmax(logits)?;
    let lp = tape.log_softmax(logits)?;
    let plp = tape.mul(p, lp)?;
    let s = tape.sum(plp)?;
    let ent = tape.scale(s, -1.0 / epochs.len() as f64)?;
    let c = model.config().main_classes;
    let probs = tape.value(p).chunks(c).map(<[f64]>::to_vec).collect();
    Ok((ent, probs, vars))
}

/// Entropy minimization over the BN affine parameters of one test batch.
///
/// Each step runs a batch-statistics forward (refreshing the running
/// buffers when configured), then one optimizer step on the BN scale and
/// shift only. The returned predictions come from a final batch-statistics
/// forward that leaves the buffers alone.
pub fn tent_adapt_predict(model: &mut ModelState, epochs: &[Epoch], cfg: &TentConfig) -> Result<(Vec<Vec<f64>>, TentRecord)> {
    if epochs.len() < 2 {
        return Err(Error::contract("tent needs at least two samples per batch to form BN statistics"));
    }
    if !(cfg.lr > 0.0) || cfg.steps_per_batch == 0 {
        return Err(Error::config("tent needs lr > 0 and steps_per_batch >= 1"));
    }
    let start = Instant::now();
    let before = model.clone();
    let momenta = (model.backbone.bn1.momentum, model.backbone.bn2.momentum);
    model.backbone.bn1.momentum = cfg.bn_momentum;
    model.backbone.bn2.momentum = cfg.bn_momentum;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.adam)?;
    let mut trajectory = Vec::with_capacity(cfg.steps_per_batch + 1);

    let result = (|| -> Result<Vec<Vec<f64>>> {
        for _ in 0..cfg.steps_per_batch {
            let mut tape = Tape::new();
            let (ent, _, vars) = tent_forward(model, &mut tape, epochs, cfg.update_running_stats)?;
            trajectory.push(tape.value(ent)[0]);
            tape.backward(ent)?;
            model.zero_grad();
            model.accumulate_grads(&tape, &vars)?;
            opt.step(model.params_mut().into_iter().filter(|p| p.group == ParamGroup::BnAffine))?;
        }
        model.zero_grad();
        let mut tape = Tape::new();
        let (ent, probs, _) = tent_forward(model, &mut tape, epochs, false)?;
        trajectory.push(tape.value(ent)[0]);
        Ok(probs)
    })();
    model.backbone.bn1.momentum = momenta.0;
    model.backbone.bn2.momentum = momenta.1;
    let probs = result?;
    Ok((
        probs,
        TentRecord {
            first_sample: 0,
            n_samples: epochs.len(),
            entropy: trajectory,
            param_delta_norm: param_delta_norm(&before, model),
            elapsed_us: start.elapsed().as_micros() as u64,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptStrategy {
    None,
    TttSsl,
    Tent,
}

impl AdaptStrategy {
    pub fn name(self) -> &'static str {
        match self {
            AdaptStrategy::None => "none",
            AdaptStrategy::TttSsl => "ttt_ssl",
            AdaptStrategy::Tent => "tent",
        }
    }
}

impl std::str::FromStr for AdaptStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AdaptStrategy::None, AdaptStrategy::TttSsl, AdaptStrategy::Tent]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown adaptation strategy {s:?}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub ttt: TttConfig,
    pub tent: TentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdaptRecord {
    Ttt(TttRecord),
    Tent(TentRecord),
}

impl AdaptRecord {
    pub fn without_timing(&self) -> AdaptRecord {
        let mut r = self.clone();
        match &mut r {
            AdaptRecord::Ttt(t) => t.elapsed_us = 0,
            AdaptRecord::Tent(t) => t.elapsed_us = 0,
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptOutput {
    pub probs: Vec<Vec<f64>>,
    pub log: Vec<AdaptRecord>,
}

/// Contiguous batches of `size`; a trailing single sample joins the
/// previous batch so every batch can form BN statistics.
fn tent_batches(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Runs a strategy over a test stream on a private copy of `model`.
pub fn run_adaptation(
    strategy: AdaptStrategy,
    model: &ModelState,
    test: &[Epoch],
    spec: &TaskSpec,
    cfg: &AdaptConfig,
) -> Result<AdaptOutput> {
    if test.is_empty() {
        return Err(Error::config("empty test stream"));
    }
    let mut m = model.clone();
    match strategy {
        AdaptStrategy::None => Ok(AdaptOutput {
            probs: predict(&mut m, test)?,
            log: Vec::new(),
        }),
        AdaptStrategy::TttSsl => {
            cfg.ttt.validate()?;
            check_heads(model, spec)?;
            let chunks: Vec<(usize, &[Epoch])> = test
                .chunks(cfg.ttt.batch_size)
                .enumerate()
                .map(|(i, c)| (i * cfg.ttt.batch_size, c))
                .collect();
            let results: Vec<(Vec<Vec<f64>>, TttRecord)> = if cfg.ttt.online {
                let mut opt = Optimizer::new(cfg.ttt.optimizer, cfg.ttt.alpha, cfg.ttt.adam)?;
                let mut out = Vec::with_capacity(chunks.len());
                for (first, c) in chunks {
                    let (p, mut r) = ttt_ssl_adapt_predict(&mut m, c, spec, &cfg.ttt, Some(&mut opt))?;
                    r.first_sample = first;
                    out.push((p, r));
                }
                out
            } else {
                chunks
                    .into_par_iter()
                    .map(|(first, c)| {
                        let mut local = model.clone();
                        let (p, mut r) = ttt_ssl_adapt_predict(&mut local, c, spec, &cfg.ttt, None)?;
                        r.first_sample = first;
                        Ok((p, r))
                    })
                    .collect::<Result<_>>()?
            };
            let mut out = AdaptOutput {
                probs: Vec::with_capacity(test.len()),
                log: Vec::with_capacity(results.len()),
            };
            for (p, r) in results {
                out.probs.extend(p);
                out.log.push(AdaptRecord::Ttt(r));
            }
            Ok(out)
        }
        AdaptStrategy::Tent => {
            cfg.tent.validate()?;
            if test.len() < 2 {
                return Err(Error::config("tent needs at least two test samples"));
            }
            let mut out = AdaptOutput {
                probs: Vec::with_capacity(test.len()),
                log: Vec::new(),
            };
            for r in tent_batches(test.len(), cfg.tent.batch_size) {
                let first = r.start;
                let (p, mut rec) = tent_adapt_predict(&mut m, &test[r], &cfg.tent)?;
                rec.first_sample = first;
                out.probs.extend(p);
                out.log.push(AdaptRecord::Tent(rec));
            }
            Ok(out)
        }
    }
}

/// Derives the TTT view seed for an experiment seed.
pub fn ttt_seed(seed: u64) -> u64 {
    derive_seed(seed, crate::rng::stream::TTT)
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

    /// A model whose running statistics have seen some data.
    fn warmed(spec: &TaskSpec, seed: u64, epochs: &[Epoch]) -> ModelState {
        let cfg = ModelConfig {
            main_classes: spec.n_main,
            ssl_classes: spec.ssl_classes(),
            ..Default::default()
        };
        let mut m = ModelState::new(cfg, seed).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, Trainable::Nothing);
        let x = m.input(&mut tape, batch_tensor(epochs).unwrap()).unwrap();
        for _ in 0..30 {
            m.features(&mut tape, &vars, x, Mode::BatchStats { update_running: true }, None).unwrap();
        }
        m
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(entropy(&[0.5, 0.6]), Err(Error::Contract(_))));
        assert!(matches!(entropy(&[-0.5, 1.5]), Err(Error::Contract(_))));
    }

    #[test]
    fn sgd_step_is_minus_alpha_times_ssl_gradient() {
        let spec = TaskSpec::for_task(TaskKind::SynMi);
        let test = data(TaskKind::SynMi, 2, 2, 3);
        let model = warmed(&spec, 1, &test);
        let cfg = TttConfig {
            optimizer: OptimizerKind::Sgd,
            alpha: 1e-3,
            ..Default::default()
        };
        let sample = &test[..1];

        let mut reference = model.clone();
        let mut tape = Tape::new();
        let vars = reference.bind(&mut tape, Trainable::All);
        let mut rng = seeded(content_seed(cfg.seed, sample));
        let loss = ssl_loss(&mut reference, &mut tape, &vars, sample, &spec, cfg.ssl_task_selection, &mut rng).unwrap();
        tape.backward(loss).unwrap();

        let mut adapted = model.clone();
        let (_, _) = ttt_ssl_adapt_predict(&mut adapted, sample, &spec, &TttConfig { online: true, ..cfg.clone() }, None).unwrap();
        for ((p0, p1), v) in model.params().iter().zip(adapted.params().iter()).zip(vars.all()) {
            // Parameters the SSL loss never reaches (the main head) have no gradient.
            let g = tape.grad(*v).map_or_else(|| vec![0.0; p0.tensor.numel()], <[f64]>::to_vec);
            for ((a, b), gi) in p0.tensor.data().iter().zip(p1.tensor.data()).zip(&g) {
                assert!(((b - a) + cfg.alpha * gi).abs() <= 1e-12, "{}", p0.name);
            }
        }
    }

    #[test]
    fn vanishing_alpha_leaves_prediction_unchanged() {
        let spec = TaskSpec::for_task(TaskKind::SynStress);
        let test = data(TaskKind::SynStress, 2, 3, 4);
        let mut model = warmed(&spec, 2, &test);
        let plain = predict(&mut model, &test[..1]).unwrap();
        let cfg = TttConfig {
            alpha: 1e-30,
            ..Default::default()
        };
        let (p, _) = ttt_ssl_adapt_predict(&mut model, &test[..1], &spec, &cfg, None).unwrap();
        for (a, b) in plain[0].iter().zip(&p[0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn offline_ttt_is_order_invariant_and_restores() {
        let spec = TaskSpec::for_task(TaskKind::SynSpeech);
        let test = data(TaskKind::SynSpeech, 2, 4, 5);
        let model = warmed(&spec, 3, &test);
        let cfg = AdaptConfig {
            ttt: TttConfig {
                alpha: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let fwd = run_adaptation(AdaptStrategy::TttSsl, &model, &test, &spec, &cfg).unwrap();
        let rev: Vec<Epoch> = test.iter().rev().cloned().collect();
        let bwd = run_adaptation(AdaptStrategy::TttSsl, &model, &rev, &spec, &cfg).unwrap();
        let mut bwd_probs = bwd.probs.clone();
        bwd_probs.reverse();
        assert_eq!(fwd.probs, bwd_probs);
        assert_eq!(fwd.log.len(), test.len());

        let mut m = model.clone();
        let (_, r) = ttt_ssl_adapt_predict(&mut m, &test[..1], &spec, &cfg.ttt, None).unwrap();
        assert!(r.param_delta_norm > 0.0);
        assert_eq!(m, model);
    }

    #[test]
    fn ttt_without_heads_rejected() {
        let spec = TaskSpec::for_task(TaskKind::SynMi);
        let cfg = ModelConfig {
            ssl_classes: vec![],
            ..Default::default()
        };
        let mut m = ModelState::new(cfg, 0).unwrap();
        let test = data(TaskKind::SynMi, 2, 1, 1);
        let r = ttt_ssl_adapt_predict(&mut m, &test[..1], &spec, &TttConfig::default(), None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn tent_changes_only_bn_parameters() {
        let spec = TaskSpec::for_task(TaskKind::SynMi);
        let test = data(TaskKind::SynMi, 2, 8, 6);
        let model = warmed(&spec, 4, &test);
        let mut m = model.clone();
        tent_adapt_predict(&mut m, &test, &TentConfig { lr: 1e-2, ..Default::default() }).unwrap();
        let mut changed_bn = 0;
        for (a, b) in model.params().iter().zip(m.params().iter()) {
            let same = a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            if a.group == ParamGroup::BnAffine {
                changed_bn += !same as usize;
            } else {
                assert!(same, "{} changed", a.name);
            }
        }
        assert_eq!(changed_bn, 4);
        assert_ne!(model.buffers(), m.buffers());
        assert_eq!(m.backbone.bn1.momentum, model.backbone.bn1.momentum);
    }

    #[test]
    fn tent_rejects_single_sample() {
        let spec = TaskSpec::for_task(TaskKind::SynMi);
        let test = data(TaskKind::SynMi, 2, 1, 6);
        let mut m = warmed(&spec, 4, &test);
        let r = tent_adapt_predict(&mut m, &test[..1], &TentConfig::default());
        assert!(matches!(r, Err(Error::Contract(msg)) if msg.contains("BN")));
        let cfg = AdaptConfig {
            tent: TentConfig {
                batch_size: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(run_adaptation(AdaptStrategy::Tent, &m, &test, &spec, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn tent_vanishing_lr_matches_batch_stat_forward() {
        let spec = TaskSpec::for_task(TaskKind::SynStress);
        let test = data(TaskKind::SynStress, 2, 5, 7);
        let mut model = warmed(&spec, 5, &test);
        let mut tape = Tape::new();
        let (_, plain, _) = tent_forward(&mut model.clone(), &mut tape, &test, false).unwrap();
        let cfg = TentConfig {
            lr: 1e-30,
            update_running_stats: false,
            ..Default::default()
        };
        let (p, rec) = tent_adapt_predict(&mut model, &test, &cfg).unwrap();
        assert_eq!(rec.entropy.len(), 4);
        for (a, b) in plain.iter().flatten().zip(p.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn strategy_none_is_plain_inference_and_logs_count() {
        let spec = TaskSpec::for_task(TaskKind::SynMi);
        let test = data(TaskKind::SynMi, 2, 9, 8);
        let mut model = warmed(&spec, 6, &test);
        let cfg = AdaptConfig {
            tent: TentConfig {
                batch_size: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let none = run_adaptation(AdaptStrategy::None, &model, &test, &spec, &cfg).unwrap();
        assert_eq!(none.probs, predict(&mut model, &test).unwrap());
        let tent = run_adaptation(AdaptStrategy::Tent, &model, &test, &spec, &cfg).unwrap();
        // 18 samples in batches of 4 leave a pair at the end.
        assert_eq!(tent.log.len(), 5);
        assert_eq!(tent.probs.len(), test.len());
        assert_eq!(tent_batches(9, 4), vec![0..4, 4..9]);
    }
}
