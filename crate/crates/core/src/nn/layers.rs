use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// How a forward pass treats batch normalization and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat EMA update, dropout active.
    Train,
    /// Running statistics only; nothing mutates.
    Eval,
    /// Batch statistics without dropout; optionally refreshes running stats.
    BatchStats { update_running: bool },
}

impl Mode {
    fn uses_batch_stats(self) -> bool {
        !matches!(self, Mode::Eval)
    }

    fn updates_running(self) -> bool {
        matches!(self, Mode::Train | Mode::BatchStats { update_running: true })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn he<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let w = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], w).unwrap().trainable(),
            bias: bias.then(|| Tensor::zeros(&[fan_out]).trainable()),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero bias.
    pub fn uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], w).unwrap().trainable(),
            bias: Some(Tensor::zeros(&[fan_out]).trainable()),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Applies `x·W (+ b)` on the tape.
pub fn linear_forward(tape: &mut Tape, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let z = tape.matmul(x, weight)?;
    match bias {
        Some(b) => tape.add_row(z, b),
        None => Ok(z),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::config(format!("batch norm eps must be > 0, got {eps}")));
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::config(format!("batch norm momentum must lie in (0,1), got {momentum}")));
        }
        Ok(BatchNorm {
            gamma: Tensor::filled(&[features], 1.0).trainable(),
            beta: Tensor::zeros(&[features]).trainable(),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::filled(&[features], 1.0),
            momentum,
            eps,
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.numel()
    }

    /// Normalizes `x[N×F]` per feature.
    ///
    /// Batch modes normalize with the biased batch variance and, when the
    /// mode asks for it, fold the same statistics into the running buffers:
    /// `new = (1 − momentum)·old + momentum·batch`.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, gamma: Var, beta: Var, mode: Mode) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.features() || shape[0] == 0 {
            return Err(Error::Shape {
                op: "batch_norm",
                shapes: vec![shape, vec![self.features()]],
            });
        }
        let (xc, inv_std) = if mode.uses_batch_stats() {
            let mean = tape.mean_axis(x, 0)?;
            let xc = tape.sub_row(x, mean)?;
            let sq = tape.mul(xc, xc)?;
            let var = tape.mean_axis(sq, 0)?;
            if mode.updates_running() {
                let m = self.momentum;
                let (bm, bv) = (tape.value(mean).to_vec(), tape.value(var).to_vec());
                for (r, b) in self.running_mean.data_mut().iter_mut().zip(&bm) {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in self.running_var.data_mut().iter_mut().zip(&bv) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
            let shifted = tape.add_scalar(var, self.eps)?;
            (xc, tape.powf(shifted, -0.5)?)
        } else {
            let mean = tape.constant(self.running_mean.clone());
            let xc = tape.sub_row(x, mean)?;
            let inv: Vec<f64> = self.running_var.data().iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            let inv = tape.constant(Tensor::new(vec![inv.len()], inv)?);
            (xc, inv)
        };
        let normed = tape.mul_row(xc, inv_std)?;
        let scaled = tape.mul_row(normed, gamma)?;
        tape.add_row(scaled, beta)
    }
}
