use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The three synthetic downstream tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "syn_speech")]
    SynSpeech,
    #[serde(rename = "syn_stress")]
    SynStress,
    #[serde(rename = "syn_mi")]
    SynMi,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::SynSpeech, TaskKind::SynStress, TaskKind::SynMi];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SynSpeech => "syn_speech",
            TaskKind::SynStress => "syn_stress",
            TaskKind::SynMi => "syn_mi",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            TaskKind::SynSpeech => 5,
            TaskKind::SynStress => 2,
            TaskKind::SynMi => 4,
        }
    }

    pub fn is_binary(self) -> bool {
        self.n_classes() == 2
    }

    /// Acquisition rate of the generated recordings before resampling.
    pub fn native_rate_hz(self) -> f64 {
        match self {
            TaskKind::SynSpeech => 256.0,
            TaskKind::SynStress => 500.0,
            TaskKind::SynMi => 250.0,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task id {s:?}")))
    }
}
