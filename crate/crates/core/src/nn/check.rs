use rand::Rng;
use serde::Serialize;

use super::layers::{linear_forward, BatchNorm, Mode};
use super::model::{ModelConfig, ModelState, Trainable};
use crate::error::Result;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{grad_check, GradCheckReport, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_relative_error: f64,
    pub n_checked: usize,
    pub worst: Option<(usize, usize)>,
    pub worst_values: Option<(f64, f64)>,
}

impl GradCheckEntry {
    fn new(name: &str, r: GradCheckReport) -> Self {
        GradCheckEntry {
            name: name.to_string(),
            max_relative_error: r.max_relative_error,
            n_checked: r.n_checked,
            worst: r.worst,
            worst_values: r.worst_values,
        }
    }
}

fn uniform(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Entropy of the row-wise softmax, averaged over rows.
fn mean_entropy(tape: &mut Tape, logits: Var) -> Result<Var> {
    let p = tape.softmax(logits)?;
    let lp = tape.log_softmax(logits)?;
    let plp = tape.mul(p, lp)?;
    let rows = tape.shape(logits)[0] as f64;
    let s = tape.sum(plp)?;
    tape.scale(s, -1.0 / rows)
}

fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, labels)?;
    let m = tape.mean(picked)?;
    tape.scale(m, -1.0)
}

/// The same layer stack as `cfg` with narrow hidden and feature widths.
///
/// Every parameter of a wide model contributes, and many gradient entries
/// fall below 1e-5 in magnitude, where central differences at ε = 1e-5 are
/// dominated by rounding of the loss (about 1e-16·|L|/ε) rather than by
/// the gradient.
pub fn narrow(cfg: &ModelConfig) -> ModelConfig {
    ModelConfig {
        hidden: cfg.hidden.min(4),
        feature_dim: cfg.feature_dim.min(6),
        ..cfg.clone()
    }
}

/// Central-difference checks of every layer type on its own, then of the
/// whole backbone plus heads under `cfg` in both BN modes, with the
/// supervised, pretext and entropy objectives summed into one scalar.
pub fn gradient_suite(cfg: &ModelConfig, batch: usize, seed: u64) -> Result<Vec<GradCheckEntry>> {
    const EPS: f64 = 1e-5;
    let s = |k: u64| derive_seed(seed, k);
    let mut out = Vec::new();

    let (x, w, b) = (uniform(s(1), &[5, 7]), uniform(s(2), &[7, 3]), uniform(s(3), &[3]));
    let r = grad_check(&[x, w, b], EPS, |t, v| {
        let z = linear_forward(t, v[0], v[1], Some(v[2]))?;
        let z = t.mul(z, z)?;
        t.sum(z)
    })?;
    out.push(GradCheckEntry::new("linear", r));

    let (x, k) = (uniform(s(4), &[2, 3, 20]), uniform(s(5), &[5, 4]));
    let r = grad_check(&[x, k], EPS, |t, v| {
        let u = t.unfold(v[0], 5, 3)?;
        let n = t.value(u).len() / 5;
        let u = t.reshape(u, &[n, 5])?;
        let z = t.matmul(u, v[1])?;
        let z = t.mul(z, z)?;
        t.sum(z)
    })?;
    out.push(GradCheckEntry::new("unfold_conv", r));

    for (name, mode) in [("batch_norm_batch_stats", Mode::Train), ("batch_norm_running_stats", Mode::Eval)] {
        let mut bn = BatchNorm::new(4, 0.1, 1e-5)?;
        bn.running_mean = uniform(s(6), &[4]);
        bn.running_var = Tensor::new(vec![4], vec![0.5, 1.5, 2.0, 0.8])?;
        let (x, g, b2) = (uniform(s(7), &[6, 4]), uniform(s(8), &[4]), uniform(s(9), &[4]));
        let weights = uniform(s(10), &[6, 4]);
        let r = grad_check(&[x, g, b2], EPS, |t, v| {
            let mut bn = bn.clone();
            let z = bn.forward(t, v[0], v[1], v[2], mode)?;
            let wv = t.constant(weights.clone());
            let z = t.mul(z, wv)?;
            let z = t.mul(z, z)?;
            t.sum(z)
        })?;
        out.push(GradCheckEntry::new(name, r));
    }

    let (x, pos) = (uniform(s(11), &[4, 6]), uniform(s(12), &[6]));
    let r = grad_check(&[x, pos], EPS, |t, v| {
        let z = t.add_row(v[0], v[1])?;
        let z = t.relu(z)?;
        let z = t.reshape(z, &[2, 2, 6])?;
        let z = t.permute(z, &[1, 0, 2])?;
        let z = t.mean_axis(z, 1)?;
        let z = t.mul(z, z)?;
        t.sum(z)
    })?;
    out.push(GradCheckEntry::new("relu_pool", r));

    let logits = uniform(s(13), &[5, 4]);
    let r = grad_check(&[logits.clone()], EPS, |t, v| cross_entropy(t, v[0], &[0, 3, 1, 2, 3]))?;
    out.push(GradCheckEntry::new("cross_entropy", r));
    let r = grad_check(&[logits], EPS, |t, v| mean_entropy(t, v[0]))?;
    out.push(GradCheckEntry::new("entropy", r));

    let mut model = ModelState::new(cfg.clone(), s(14))?;
    let x = uniform(s(15), &[batch, cfg.channels, cfg.samples]);
    // Running statistics at their initial values leave most units of the
    // running-stats pass inactive; move them to this batch's statistics.
    for _ in 0..200 {
        let mut t = Tape::new();
        let mv = model.bind(&mut t, Trainable::Nothing);
        let xv = model.input(&mut t, x.clone())?;
        model.features(&mut t, &mv, xv, Mode::BatchStats { update_running: true }, None)?;
    }
    let main_labels: Vec<usize> = (0..batch).map(|i| i % cfg.main_classes).collect();
    let params: Vec<Tensor> = model.params().iter().map(|p| p.tensor.clone()).collect();
    for (name, mode) in [("full_stack_batch_stats", Mode::Train), ("full_stack_running_stats", Mode::Eval)] {
        let r = grad_check(&params, EPS, |t, v| {
            let mut m = model.clone();
            let mv = m.vars_from(v.to_vec())?;
            let xv = t.constant(x.clone());
            let f = m.features(t, &mv, xv, mode, None)?;
            let main = m.main_logits(t, &mv, f)?;
            let mut total = cross_entropy(t, main, &main_labels)?;
            let ent = mean_entropy(t, main)?;
            total = t.add(total, ent)?;
            for (j, &k) in cfg.ssl_classes.iter().enumerate() {
                let logits = m.ssl_logits(t, &mv, j, f)?;
                let labels: Vec<usize> = (0..batch).map(|i| (i + j + 1) % k).collect();
                let l = cross_entropy(t, logits, &labels)?;
                total = t.add(total, l)?;
            }
            Ok(total)
        })?;
        out.push(GradCheckEntry::new(name, r));
    }
    Ok(out)
}
