use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Optimizer;
use crate::error::{Error, Result};
use crate::nn::{linear_forward, Linear, Mode, ModelState, ParamGroup, ParamMut, Trainable};
use crate::rng::{derive_seed, seeded, stream, SeedRng};
use crate::signals::{batch_tensor, Epoch};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub mask_ratio: f64,
    pub patch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mask_ratio: 0.5,
            patch: 25,
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self, samples: usize) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::config(format!("mask_ratio {} must lie in (0, 1)", self.mask_ratio)));
        }
        if self.patch == 0 || samples % self.patch != 0 {
            return Err(Error::config(format!("patch {} must divide {samples}", self.patch)));
        }
        if self.batch_size < 2 || self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::config("pretraining needs batch_size >= 2, epochs >= 1 and a positive learning rate"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    /// Mean masked-position MSE over each epoch's training batches.
    pub epoch_loss: Vec<f64>,
    /// Eval-mode masked MSE on a fixed probe set and mask after each epoch.
    pub probe_loss: Vec<f64>,
}

/// Mean squared error over positions where `mask` is 1.
pub fn masked_mse(tape: &mut Tape, recon: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
    let n_masked = mask.data().iter().filter(|&&m| m != 0.0).count();
    if n_masked == 0 {
        return Err(Error::contract("mask selects no positions"));
    }
    let target = tape.constant(target.clone());
    let mask = tape.constant(mask.clone());
    let diff = tape.sub(recon, target)?;
    let kept = tape.mul(diff, mask)?;
    let sq = tape.mul(kept, kept)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / n_masked as f64)
}

/// Per-sample 0/1 mask over `[B, C·T]` zeroing whole patches on every channel.
fn draw_mask(rng: &mut SeedRng, b: usize, c: usize, t: usize, patch: usize, ratio: f64) -> Vec<f64> {
    let n_patches = t / patch;
    let k = ((ratio * n_patches as f64).round() as usize).clamp(1, n_patches);
    let mut mask = vec![0.0; b * c * t];
    let mut ids: Vec<usize> = (0..n_patches).collect();
    for s in 0..b {
        ids.shuffle(rng);
        for &p in &ids[..k] {
            for ch in 0..c {
                let base = s * c * t + ch * t + p * patch;
                mask[base..base + patch].iter_mut().for_each(|m| *m = 1.0);
            }
        }
    }
    mask
}

/// Masked-reconstruction pretraining of the backbone.
///
/// Whole patches are zeroed in the input, a linear decoder maps the pooled
/// feature back to `C·T` samples and the loss only sees masked positions.
/// The decoder is dropped afterwards; heads are untouched.
pub fn masked_pretrain(model: &mut ModelState, data: &[Epoch], cfg: &PretrainConfig, seed: u64) -> Result<PretrainLog> {
    let mc = model.config().clone();
    cfg.validate(mc.samples)?;
    if data.len() < 2 {
        return Err(Error::config("pretraining needs at least two unlabeled epochs"));
    }
    let (c, t) = (mc.channels, mc.samples);
    let mut init = seeded(derive_seed(seed, stream::INIT));
    let mut decoder = Linear::uniform(&mut init, mc.feature_dim, c * t);
    decoder.bias = Some(Tensor::zeros(&[c * t]).trainable());
    let mut shuffle = seeded(derive_seed(seed, stream::SHUFFLE));
    let mut mask_rng = seeded(derive_seed(seed, stream::MASK));
    let mut dropout = seeded(derive_seed(seed, stream::DROPOUT));
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = PretrainLog {
        epoch_loss: Vec::new(),
        probe_loss: Vec::new(),
    };
    let probe: Vec<&Epoch> = data.iter().take(PROBE_SIZE).collect();
    let mut probe_rng = seeded(derive_seed(derive_seed(seed, stream::MASK), 1));
    let probe_mask = Tensor::new(
        vec![probe.len(), c * t],
        draw_mask(&mut probe_rng, probe.len(), c, t, cfg.patch, cfg.mask_ratio),
    )?;
    let probe_batch = batch_tensor(probe.iter().copied())?;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let (mut sum, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            let b = idx.len();
            let batch = batch_tensor(idx.iter().map(|&i| &data[i]))?;
            let mask = Tensor::new(vec![b, c * t], draw_mask(&mut mask_rng, b, c, t, cfg.patch, cfg.mask_ratio))?;
            let masked = apply_mask(&batch, &mask);
            let target = batch.reshaped(vec![b, c * t])?;

            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, Trainable::All);
            let dw = tape.param(&decoder.weight);
            let db = tape.param(decoder.bias.as_ref().unwrap());
            let x = model.input(&mut tape, Tensor::new(vec![b, c, t], masked)?)?;
            let feat = model.features(&mut tape, &vars, x, Mode::Train, Some(&mut dropout))?;
            let recon = linear_forward(&mut tape, feat, dw, Some(db))?;
            let loss = masked_mse(&mut tape, recon, &target, &mask)?;
            sum += tape.value(loss)[0];
            batches += 1;
            tape.backward(loss)?;

            model.zero_grad();
            decoder.weight.clear_grad();
            decoder.bias.as_mut().unwrap().clear_grad();
            model.accumulate_grads(&tape, &vars)?;
            tape.accumulate_into(dw, &mut decoder.weight)?;
            tape.accumulate_into(db, decoder.bias.as_mut().unwrap())?;
            let mut params = model.params_mut();
            params.extend(decoder_params(&mut decoder));
            opt.step(params)?;
        }
        model.zero_grad();
        log.epoch_loss.push(sum / batches.max(1) as f64);
        log.probe_loss.push(probe_mse(model, &decoder, &probe_batch, &probe_mask)?);
    }
    Ok(log)
}

const PROBE_SIZE: usize = 256;

fn apply_mask(batch: &Tensor, mask: &Tensor) -> Vec<f64> {
    batch.data().iter().zip(mask.data()).map(|(x, m)| x * (1.0 - m)).collect()
}

fn probe_mse(model: &mut ModelState, decoder: &Linear, batch: &Tensor, mask: &Tensor) -> Result<f64> {
    let (b, c, t) = (batch.shape()[0], batch.shape()[1], batch.shape()[2]);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, Trainable::Nothing);
    let dw = tape.constant(decoder.weight.clone());
    let db = decoder.bias.clone().map(|bias| tape.constant(bias));
    let x = model.input(&mut tape, Tensor::new(vec![b, c, t], apply_mask(batch, mask))?)?;
    let feat = model.features(&mut tape, &vars, x, Mode::Eval, None)?;
    let recon = linear_forward(&mut tape, feat, dw, db)?;
    let loss = masked_mse(&mut tape, recon, &batch.clone().reshaped(vec![b, c * t])?, mask)?;
    Ok(tape.value(loss)[0])
}

fn decoder_params(decoder: &mut Linear) -> Vec<ParamMut<'_>> {
    let mut out = vec![ParamMut {
        name: "decoder.weight".into(),
        group: ParamGroup::Other,
        tensor: &mut decoder.weight,
    }];
    if let Some(b) = decoder.bias.as_mut() {
        out.push(ParamMut {
            name: "decoder.bias".into(),
            group: ParamGroup::Other,
            tensor: b,
        });
    }
    out
}
