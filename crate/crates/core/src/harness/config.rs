use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{TentConfig, TttConfig};
use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::pipeline::{FinetuneConfig, PretrainConfig};
use crate::pretext::TaskSpec;
use crate::signals::{GeneratorConfig, PreprocessConfig};
use crate::task::TaskKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SupervisedOnly,
    Stage1Ssl,
    TttSsl,
    Tent,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::SupervisedOnly, Strategy::Stage1Ssl, Strategy::TttSsl, Strategy::Tent];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SupervisedOnly => "supervised_only",
            Strategy::Stage1Ssl => "stage1_ssl",
            Strategy::TttSsl => "ttt_ssl",
            Strategy::Tent => "tent",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy {s:?}")))
    }
}

/// How recordings are assigned to train, validation and test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum SplitProtocol {
    /// Whole subjects per split (1-based ids).
    CrossSubject { train: Vec<u32>, val: Vec<u32>, test: Vec<u32> },
    /// Every subject contributes to every split; trials are taken in
    /// class-balanced blocks, the last blocks going to test.
    WithinSubject { val_fraction: f64, test_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainStage {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: PretrainConfig,
}

impl Default for PretrainStage {
    fn default() -> Self {
        PretrainStage {
            enabled: false,
            config: PretrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub split: SplitProtocol,
    pub strategies: Vec<Strategy>,
    pub n_seeds: usize,
    /// Seed `i` of the run is `seed + i`.
    pub seed: u64,
    /// Multiplies every test sample, a covariate shift on top of subject shift.
    pub test_gain: f64,
    pub ssl_weights: Option<[f64; 2]>,
    pub jigsaw_k: usize,
    pub generator: GeneratorConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainStage,
    pub finetune: FinetuneConfig,
    pub ttt: TttConfig,
    pub tent: TentConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_task(TaskKind::SynMi)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: cross-subject 5/2/2 for syn_mi, 8/2/2 for
    /// syn_stress, within-subject for syn_speech.
    pub fn for_task(task: TaskKind) -> Self {
        let (split, n_subjects, trials) = match task {
            TaskKind::SynMi => (
                SplitProtocol::CrossSubject {
                    train: (1..=5).collect(),
                    val: vec![6, 7],
                    test: vec![8, 9],
                },
                9,
                80,
            ),
            TaskKind::SynStress => (
                SplitProtocol::CrossSubject {
                    train: (1..=8).collect(),
                    val: vec![9, 10],
                    test: vec![11, 12],
                },
                12,
                60,
            ),
            TaskKind::SynSpeech => (
                SplitProtocol::WithinSubject {
                    val_fraction: 0.2,
                    test_fraction: 0.2,
                },
                4,
                100,
            ),
        };
        let spec = TaskSpec::for_task(task);
        ExperimentConfig {
            task,
            split,
            strategies: Strategy::ALL.to_vec(),
            n_seeds: 5,
            seed: 0,
            test_gain: 1.0,
            ssl_weights: None,
            jigsaw_k: spec.jigsaw_k,
            generator: GeneratorConfig {
                n_subjects,
                trials_per_subject: trials,
                ..GeneratorConfig::for_task(task)
            },
            preprocess: PreprocessConfig::default(),
            model: ModelConfig {
                main_classes: spec.n_main,
                ssl_classes: spec.ssl_classes(),
                ..Default::default()
            },
            pretrain: PretrainStage::default(),
            // Random init rather than a pretrained foundation model: the
            // default 1e-4 leaves the main task underfit after 20 epochs.
            finetune: FinetuneConfig {
                learning_rate: 1e-3,
                ..FinetuneConfig::default()
            },
            ttt: TttConfig::default(),
            tent: TentConfig::default(),
            out_dir: None,
        }
    }

    /// Parses a TOML config. Omitted fields take the defaults of the
    /// config's `task` (syn_mi when absent).
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(s)?;
        let task = match user.get("task") {
            Some(toml::Value::String(t)) => t.parse::<TaskKind>()?,
            Some(other) => return Err(Error::config(format!("task must be a string, got {other}"))),
            None => TaskKind::SynMi,
        };
        let mut base: toml::Table = toml::from_str(&Self::for_task(task).to_toml_string()?)?;
        merge(&mut base, user);
        let cfg: ExperimentConfig = base.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        let spec = TaskSpec::for_task(self.task).with_jigsaw_k(self.jigsaw_k)?;
        match self.ssl_weights {
            Some(w) => spec.with_weights(w),
            None => Ok(spec),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds must be at least 1"));
        }
        if self.generator.task != self.task {
            return Err(Error::config(format!(
                "generator task {} differs from experiment task {}",
                self.generator.task, self.task
            )));
        }
        if !(self.test_gain > 0.0) {
            return Err(Error::config("test_gain must be positive"));
        }
        let spec = self.task_spec()?;
        if self.model.main_classes != spec.n_main || self.model.ssl_classes != spec.ssl_classes() {
            return Err(Error::config(format!(
                "model heads ({}, {:?}) do not match task {} ({}, {:?})",
                self.model.main_classes,
                self.model.ssl_classes,
                self.task,
                spec.n_main,
                spec.ssl_classes()
            )));
        }
        self.model.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.strategies {
            if !seen.insert(s) {
                return Err(Error::config(format!("strategy {} listed twice", s.name())));
            }
        }
        if self.finetune.weights.is_some() || self.finetune.supervised_only {
            return Err(Error::config(
                "finetune.weights and finetune.supervised_only are set per strategy; use ssl_weights",
            ));
        }
        self.ttt.validate()?;
        self.tent.validate()?;
        match &self.split {
            SplitProtocol::CrossSubject { train, val, test } => {
                let n = self.generator.n_subjects as u32;
                let mut all = std::collections::BTreeSet::new();
                for (name, ids) in [("train", train), ("val", val), ("test", test)] {
                    if ids.is_empty() {
                        return Err(Error::config(format!("{name} split has no subjects")));
                    }
                    for &id in ids {
                        if id == 0 || id > n {
                            return Err(Error::config(format!("subject {id} outside 1..={n}")));
                        }
                        if !all.insert(id) {
                            return Err(Error::config(format!("subject {id} appears in more than one split")));
                        }
                    }
                }
            }
            SplitProtocol::WithinSubject { val_fraction, test_fraction } => {
                let ok = |f: f64| f > 0.0 && f < 1.0;
                if !ok(*val_fraction) || !ok(*test_fraction) || val_fraction + test_fraction >= 1.0 {
                    return Err(Error::config("within-subject fractions must be positive and leave room for training"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Overlays `top` onto `base`, recursing into tables. A `split` table
/// replaces the default wholesale since its variants have different keys.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) if k != "split" => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
