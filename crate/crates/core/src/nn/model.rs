use serde::{Deserialize, Serialize};

use super::layers::{linear_forward, BatchNorm, Linear, Mode};
use crate::error::{Error, Result};
use crate::pipeline::Optimizer;
use crate::rng::{seeded, SeedRng};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub channels: usize,
    pub samples: usize,
    pub window: usize,
    pub stride: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub main_classes: usize,
    pub ssl_classes: Vec<usize>,
    /// Linear layers per head (1 = plain linear probe).
    pub head_depth: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 8,
            samples: 200,
            window: 25,
            stride: 25,
            hidden: 32,
            feature_dim: 64,
            main_classes: 4,
            ssl_classes: vec![4, 6],
            head_depth: 1,
            dropout: 0.1,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn n_windows(&self) -> usize {
        (self.samples - self.window) / self.stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("window", self.window),
            ("stride", self.stride),
            ("hidden", self.hidden),
            ("feature_dim", self.feature_dim),
            ("head_depth", self.head_depth),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model {name} must be positive")));
        }
        if self.samples < self.window {
            return Err(Error::config("epoch shorter than the temporal window"));
        }
        if self.main_classes < 2 || self.ssl_classes.iter().any(|&c| c < 2) {
            return Err(Error::config("every head needs at least two classes"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::config("batch norm eps must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    BnAffine,
    Other,
}

/// Which parameters a binding tracks gradients for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    All,
    BnOnly,
    Nothing,
}

impl Trainable {
    fn admits(self, group: ParamGroup) -> bool {
        match self {
            Trainable::All => true,
            Trainable::BnOnly => group == ParamGroup::BnAffine,
            Trainable::Nothing => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    /// Temporal filter bank shared across channels, `[window, hidden]`.
    pub conv: Linear,
    pub bn1: BatchNorm,
    /// Channel mixing, `[channels·hidden, feature_dim]`.
    pub mix: Linear,
    /// Per-window offset added after mixing, `[n_windows, feature_dim]`.
    pub pos_bias: Tensor,
    pub bn2: BatchNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub layers: Vec<Linear>,
}

impl Head {
    fn new(rng: &mut SeedRng, width: usize, classes: usize, depth: usize) -> Self {
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let out = if i + 1 == depth { classes } else { width };
            layers.push(Linear::uniform(rng, width, out));
        }
        Head { layers }
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map(Linear::fan_out).unwrap_or(0)
    }
}

/// Backbone, main head and pretext heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    pub backbone: Backbone,
    pub main_head: Head,
    pub ssl_heads: Vec<Head>,
}

pub struct ParamRef<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: &'a Tensor,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: &'a mut Tensor,
}

/// Tape handles for every parameter, in declaration order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    all: Vec<Var>,
    head_depth: usize,
}

impl ModelVars {
    pub fn all(&self) -> &[Var] {
        &self.all
    }

    fn head(&self, idx: usize) -> &[Var] {
        let start = 7 + idx * 2 * self.head_depth;
        &self.all[start..start + 2 * self.head_depth]
    }
}

/// Deep copy of parameters, running statistics and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    model: ModelState,
    optimizer: Option<Optimizer>,
}

impl ModelState {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let win = config.n_windows();
        let backbone = Backbone {
            conv: Linear::he(&mut rng, config.window, config.hidden, false),
            bn1: BatchNorm::new(config.hidden, config.bn_momentum, config.bn_eps)?,
            mix: Linear::he(&mut rng, config.channels * config.hidden, config.feature_dim, false),
            pos_bias: Tensor::zeros(&[win, config.feature_dim]).trainable(),
            bn2: BatchNorm::new(config.feature_dim, config.bn_momentum, config.bn_eps)?,
        };
        let main_head = Head::new(&mut rng, config.feature_dim, config.main_classes, config.head_depth);
        let ssl_heads = config
            .ssl_classes
            .iter()
            .map(|&c| Head::new(&mut rng, config.feature_dim, c, config.head_depth))
            .collect();
        Ok(ModelState {
            config,
            backbone,
            main_head,
            ssl_heads,
        })
    }

    /// Reassembles a model from parts, checking them against `config`.
    pub fn from_parts(config: ModelConfig, backbone: Backbone, main_head: Head, ssl_heads: Vec<Head>) -> Result<Self> {
        config.validate()?;
        let model = ModelState {
            config,
            backbone,
            main_head,
            ssl_heads,
        };
        let reference = ModelState::new(model.config.clone(), 0)?;
        let same_shapes = reference
            .params()
            .iter()
            .zip(model.params().iter())
            .all(|(a, b)| a.tensor.shape() == b.tensor.shape())
            && reference.params().len() == model.params().len();
        if !same_shapes {
            return Err(Error::config("parameter shapes do not match the model config"));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_ssl_heads(&self) -> usize {
        self.ssl_heads.len()
    }

    fn head_params<'a>(prefix: &str, head: &'a Head, out: &mut Vec<ParamRef<'a>>) {
        for (i, l) in head.layers.iter().enumerate() {
            out.push(ParamRef {
                name: format!("{prefix}.{i}.weight"),
                group: ParamGroup::Other,
                tensor: &l.weight,
            });
            if let Some(b) = &l.bias {
                out.push(ParamRef {
                    name: format!("{prefix}.{i}.bias"),
                    group: ParamGroup::Other,
                    tensor: b,
                });
            }
        }
    }

    /// Every trainable tensor in declaration order, tagged by group.
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        use ParamGroup::*;
        let b = &self.backbone;
        let p = |name: &str, group, tensor| ParamRef {
            name: name.to_string(),
            group,
            tensor,
        };
        let mut out = vec![
            p("backbone.conv.weight", Other, &b.conv.weight),
            p("backbone.bn1.gamma", BnAffine, &b.bn1.gamma),
            p("backbone.bn1.beta", BnAffine, &b.bn1.beta),
            p("backbone.mix.weight", Other, &b.mix.weight),
            p("backbone.mix.pos_bias", Other, &b.pos_bias),
            p("backbone.bn2.gamma", BnAffine, &b.bn2.gamma),
            p("backbone.bn2.beta", BnAffine, &b.bn2.beta),
        ];
        Self::head_params("main_head", &self.main_head, &mut out);
        for (j, h) in self.ssl_heads.iter().enumerate() {
            Self::head_params(&format!("ssl_head{j}"), h, &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        use ParamGroup::*;
        fn head<'a>(prefix: &str, head: &'a mut Head, out: &mut Vec<ParamMut<'a>>) {
            for (i, l) in head.layers.iter_mut().enumerate() {
                out.push(ParamMut {
                    name: format!("{prefix}.{i}.weight"),
                    group: Other,
                    tensor: &mut l.weight,
                });
                if let Some(b) = l.bias.as_mut() {
                    out.push(ParamMut {
                        name: format!("{prefix}.{i}.bias"),
                        group: Other,
                        tensor: b,
                    });
                }
            }
        }
        let p = |name: &str, group, tensor| ParamMut {
            name: name.to_string(),
            group,
            tensor,
        };
        let b = &mut self.backbone;
        let mut out = vec![
            p("backbone.conv.weight", Other, &mut b.conv.weight),
            p("backbone.bn1.gamma", BnAffine, &mut b.bn1.gamma),
            p("backbone.bn1.beta", BnAffine, &mut b.bn1.beta),
            p("backbone.mix.weight", Other, &mut b.mix.weight),
            p("backbone.mix.pos_bias", Other, &mut b.pos_bias),
            p("backbone.bn2.gamma", BnAffine, &mut b.bn2.gamma),
            p("backbone.bn2.beta", BnAffine, &mut b.bn2.beta),
        ];
        head("main_head", &mut self.main_head, &mut out);
        for (j, h) in self.ssl_heads.iter_mut().enumerate() {
            head(&format!("ssl_head{j}"), h, &mut out);
        }
        out
    }

    /// Non-trainable buffers (BN running statistics), in declaration order.
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        let b = &self.backbone;
        vec![
            ("backbone.bn1.running_mean", &b.bn1.running_mean),
            ("backbone.bn1.running_var", &b.bn1.running_var),
            ("backbone.bn2.running_mean", &b.bn2.running_mean),
            ("backbone.bn2.running_var", &b.bn2.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let b = &mut self.backbone;
        vec![
            &mut b.bn1.running_mean,
            &mut b.bn1.running_var,
            &mut b.bn2.running_mean,
            &mut b.bn2.running_var,
        ]
    }

    /// The BN affine parameters (θ_BN), optionally with the running-stat buffers.
    pub fn collect_bn_params(&self, include_running: bool) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .params()
            .into_iter()
            .filter(|p| p.group == ParamGroup::BnAffine)
            .map(|p| (p.name, p.tensor))
            .collect();
        if include_running {
            out.extend(self.buffers().into_iter().map(|(n, t)| (n.to_string(), t)));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.tensor.clear_grad();
        }
    }

    /// Records parameters on the tape; only those admitted by `trainable`
    /// track gradients, the rest enter as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: Trainable) -> ModelVars {
        let all = self
            .params()
            .iter()
            .map(|p| {
                if trainable.admits(p.group) {
                    tape.param(p.tensor)
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect();
        ModelVars {
            all,
            head_depth: self.config.head_depth,
        }
    }

    /// Wraps externally recorded parameter handles (declaration order).
    pub fn vars_from(&self, all: Vec<Var>) -> Result<ModelVars> {
        let expected = self.params().len();
        if all.len() != expected {
            return Err(Error::contract(format!("expected {expected} parameter handles, got {}", all.len())));
        }
        Ok(ModelVars {
            all,
            head_depth: self.config.head_depth,
        })
    }

    /// Adds tape gradients into the parameters' grad buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &ModelVars) -> Result<()> {
        for (p, v) in self.params_mut().into_iter().zip(vars.all.iter()) {
            tape.accumulate_into(*v, p.tensor)?;
        }
        Ok(())
    }

    /// Wraps a `[B, channels, samples]` tensor as a tape constant, checking the layout.
    pub fn input(&self, tape: &mut Tape, batch: Tensor) -> Result<Var> {
        let s = batch.shape();
        if s.len() != 3 || s[1] != self.config.channels || s[2] != self.config.samples || s[0] == 0 {
            return Err(Error::config(format!(
                "input shape {:?} does not match model (B, {}, {})",
                s, self.config.channels, self.config.samples
            )));
        }
        Ok(tape.constant(batch))
    }

    /// Backbone forward: `[B, C, T]` → feature matrix `[B, D]`.
    ///
    /// Dropout on the features applies only in [`Mode::Train`] and only when
    /// an RNG is supplied.
    pub fn features(
        &mut self,
        tape: &mut Tape,
        vars: &ModelVars,
        x: Var,
        mode: Mode,
        dropout_rng: Option<&mut SeedRng>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != cfg.channels || shape[2] != cfg.samples {
            return Err(Error::config(format!(
                "input shape {:?} does not match model (B, {}, {})",
                shape, cfg.channels, cfg.samples
            )));
        }
        let (b, c, h, d, w) = (shape[0], cfg.channels, cfg.hidden, cfg.feature_dim, cfg.n_windows());
        let (window, stride, dropout) = (cfg.window, cfg.stride, cfg.dropout);
        let v = &vars.all;

        let u = tape.unfold(x, window, stride)?;
        let u = tape.reshape(u, &[b * c * w, window])?;
        let z = tape.matmul(u, v[0])?;
        let z = self.backbone.bn1.forward(tape, z, v[1], v[2], mode)?;
        let z = tape.relu(z)?;
        let z = tape.reshape(z, &[b, c, w, h])?;
        let z = tape.permute(z, &[0, 2, 1, 3])?;
        let z = tape.reshape(z, &[b * w, c * h])?;
        let z = tape.matmul(z, v[3])?;
        let z = tape.reshape(z, &[b, w * d])?;
        let z = tape.add_row(z, v[4])?;
        let z = tape.reshape(z, &[b * w, d])?;
        let z = self.backbone.bn2.forward(tape, z, v[5], v[6], mode)?;
        let z = tape.relu(z)?;
        let z = tape.reshape(z, &[b, w, d])?;
        let feat = tape.mean_axis(z, 1)?;

        match (mode, dropout_rng) {
            (Mode::Train, Some(rng)) if dropout > 0.0 => {
                use rand::Rng;
                let keep = 1.0 - dropout;
                let mask: Vec<f64> = (0..b * d)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = tape.constant(Tensor::new(vec![b, d], mask)?);
                tape.mul(feat, mask)
            }
            _ => Ok(feat),
        }
    }

    fn head_forward(tape: &mut Tape, vars: &[Var], feat: Var) -> Result<Var> {
        let depth = vars.len() / 2;
        let mut z = feat;
        for i in 0..depth {
            z = linear_forward(tape, z, vars[2 * i], Some(vars[2 * i + 1]))?;
            if i + 1 < depth {
                z = tape.relu(z)?;
            }
        }
        Ok(z)
    }

    pub fn main_logits(&self, tape: &mut Tape, vars: &ModelVars, feat: Var) -> Result<Var> {
        Self::head_forward(tape, vars.head(0), feat)
    }

    pub fn ssl_logits(&self, tape: &mut Tape, vars: &ModelVars, head: usize, feat: Var) -> Result<Var> {
        if head >= self.ssl_heads.len() {
            return Err(Error::config(format!(
                "model has {} SSL heads, asked for head {head}",
                self.ssl_heads.len()
            )));
        }
        Self::head_forward(tape, vars.head(head + 1), feat)
    }

    /// Eval-mode class probabilities for a `[B, C, T]` batch.
    pub fn predict_proba(&mut self, batch: Tensor) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, Trainable::Nothing);
        let x = self.input(&mut tape, batch)?;
        let feat = self.features(&mut tape, &vars, x, Mode::Eval, None)?;
        let logits = self.main_logits(&mut tape, &vars, feat)?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).chunks(self.config.main_classes).map(<[f64]>::to_vec).collect())
    }

    pub fn snapshot(&self, optimizer: Option<&Optimizer>) -> Snapshot {
        Snapshot {
            model: self.clone(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Restores parameters and buffers; returns the captured optimizer state.
    pub fn restore(&mut self, snapshot: &Snapshot) -> Result<Option<Optimizer>> {
        if snapshot.model.config != self.config {
            return Err(Error::config("snapshot was taken from a differently configured model"));
        }
        *self = snapshot.model.clone();
        Ok(snapshot.optimizer.clone())
    }
}

impl Snapshot {
    pub fn model(&self) -> &ModelState {
        &self.model
    }
}
