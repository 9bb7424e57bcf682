use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Epoch, GeneratorConfig, Montage, EPOCH_RATE_HZ, EPOCH_SAMPLES};
use crate::error::{Error, Result};

/// Sidecar describing a split stored as a flat little-endian `f32` array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub name: String,
    /// `[epochs, channels, samples]`.
    pub shape: [usize; 3],
    pub sample_rate_hz: f64,
    pub montage: Montage,
    pub labels: Vec<usize>,
    pub subject_ids: Vec<u32>,
    pub generator: GeneratorConfig,
    pub seed: u64,
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.f32")), dir.join(format!("{name}.json")))
}

/// Writes `<name>.f32` and `<name>.json` into `dir`.
pub fn write_split(
    dir: &Path,
    name: &str,
    epochs: &[Epoch],
    montage: &Montage,
    generator: &GeneratorConfig,
    seed: u64,
) -> Result<SplitMeta> {
    if epochs.iter().any(|e| e.channels() != montage.len()) {
        return Err(Error::config("epoch channel count differs from montage"));
    }
    fs::create_dir_all(dir)?;
    let meta = SplitMeta {
        name: name.to_string(),
        shape: [epochs.len(), montage.len(), EPOCH_SAMPLES],
        sample_rate_hz: EPOCH_RATE_HZ,
        montage: montage.clone(),
        labels: epochs.iter().map(|e| e.label).collect(),
        subject_ids: epochs.iter().map(|e| e.subject_id).collect(),
        generator: generator.clone(),
        seed,
    };
    let mut bytes = Vec::with_capacity(epochs.len() * montage.len() * EPOCH_SAMPLES * 4);
    for e in epochs {
        for &v in e.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let (data_path, meta_path) = paths(dir, name);
    fs::write(data_path, bytes)?;
    fs::write(meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

pub fn read_split(dir: &Path, name: &str) -> Result<(Vec<Epoch>, SplitMeta)> {
    let (data_path, meta_path) = paths(dir, name);
    let meta: SplitMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
    let [n, c, s] = meta.shape;
    if s != EPOCH_SAMPLES || c != meta.montage.len() || meta.labels.len() != n || meta.subject_ids.len() != n {
        return Err(Error::Format(format!("inconsistent metadata for split {name}")));
    }
    let bytes = fs::read(data_path)?;
    if bytes.len() != n * c * s * 4 {
        return Err(Error::Format(format!(
            "split {name}: expected {} bytes, found {}",
            n * c * s * 4,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let epochs = values
        .chunks_exact(c * s)
        .zip(meta.labels.iter().zip(&meta.subject_ids))
        .map(|(d, (&label, &subject))| Epoch::new(d.to_vec(), c, label, subject))
        .collect::<Result<Vec<_>>>()?;
    Ok((epochs, meta))
}

/// Rounds every sample to `f32` so in-memory data matches what a split
/// file would hold.
pub fn quantize(epochs: &mut [Epoch]) {
    for e in epochs {
        e.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}
