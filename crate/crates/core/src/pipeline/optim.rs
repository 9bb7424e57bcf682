use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamMut;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam (with bias correction) or plain SGD.
///
/// Moment buffers are keyed by parameter name, so one optimizer may drive
/// any subset of a model's parameters. Parameters without a gradient buffer
/// are skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    adam: AdamParams,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, adam: AdamParams) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr,
            adam,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, AdamParams::default())
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr, AdamParams::default())
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that carries a gradient.
    ///
    /// All gradients are checked before anything is written, so a
    /// non-finite gradient leaves the parameters untouched.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = ParamMut<'a>>) -> Result<()> {
        let params: Vec<ParamMut<'a>> = params.into_iter().filter(|p| p.tensor.grad().is_some()).collect();
        for p in &params {
            let g = p.tensor.grad().unwrap();
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} at element {i}", p.name)));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params {
                    let g = p.tensor.grad().unwrap().to_vec();
                    for (x, gv) in p.tensor.data_mut().iter_mut().zip(&g) {
                        *x -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let AdamParams { beta1, beta2, eps } = self.adam;
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for p in params {
                    let g = p.tensor.grad().unwrap().to_vec();
                    let (m, v) = self
                        .moments
                        .entry(p.name.clone())
                        .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
                    if m.len() != g.len() {
                        return Err(Error::contract(format!("optimizer state shape changed for {}", p.name)));
                    }
                    for (((x, gv), mi), vi) in p.tensor.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gv;
                        *vi = beta2 * *vi + (1.0 - beta2) * gv * gv;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *x -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
