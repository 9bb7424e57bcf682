//! Synthetic multichannel recordings, preprocessing into 1-s epochs, and
//! the spectral primitives the pretext tasks are built on.

mod generate;
mod io;
mod preprocess;
pub mod spectral;

pub use generate::{generate_dataset, GeneratorConfig, ShiftConfig, ShiftSpec, SignalParams};
pub use io::{quantize, read_split, write_split, SplitMeta};
pub use preprocess::{preprocess, PreprocessConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Model input rate.
pub const EPOCH_RATE_HZ: f64 = 200.0;
/// Samples per epoch (1 s at 200 Hz).
pub const EPOCH_SAMPLES: usize = 200;
/// Highest representable frequency at the epoch rate.
pub const NYQUIST_HZ: f64 = EPOCH_RATE_HZ / 2.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Montage {
    names: Vec<String>,
    ap_pairs: Vec<(usize, usize)>,
}

impl Montage {
    pub fn new(names: Vec<String>, ap_pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut used = vec![false; names.len()];
        for &(a, p) in &ap_pairs {
            if a >= names.len() || p >= names.len() || a == p {
                return Err(Error::config(format!("invalid anterior-posterior pair ({a}, {p})")));
            }
            for idx in [a, p] {
                if std::mem::replace(&mut used[idx], true) {
                    return Err(Error::config(format!("channel {} appears in two pairs", names[idx])));
                }
            }
        }
        Ok(Montage { names, ap_pairs })
    }

    /// Fp1 Fp2 F3 F4 P3 P4 O1 O2, paired front-to-back.
    pub fn standard() -> Self {
        let names = ["Fp1", "Fp2", "F3", "F4", "P3", "P4", "O1", "O2"].map(String::from).to_vec();
        Montage::new(names, vec![(0, 6), (1, 7), (2, 4), (3, 5)]).expect("standard montage is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ap_pairs(&self) -> &[(usize, usize)] {
        &self.ap_pairs
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn anterior(&self) -> Vec<usize> {
        self.ap_pairs.iter().map(|p| p.0).collect()
    }

    pub fn posterior(&self) -> Vec<usize> {
        self.ap_pairs.iter().map(|p| p.1).collect()
    }
}

/// A continuous multichannel trial at its acquisition rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    /// Channel-major, `channels × samples`.
    pub data: Vec<f64>,
    pub samples: usize,
    pub sample_rate_hz: f64,
    pub montage: Montage,
    pub subject_id: u32,
    pub label: usize,
}

impl Recording {
    pub fn channels(&self) -> usize {
        self.montage.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn duration_s(&self) -> f64 {
        self.samples as f64 / self.sample_rate_hz
    }
}

/// One second of `channels × 200` samples at 200 Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Epoch {
    data: Vec<f64>,
    channels: usize,
    pub label: usize,
    pub subject_id: u32,
}

impl Epoch {
    pub fn new(data: Vec<f64>, channels: usize, label: usize, subject_id: u32) -> Result<Self> {
        if channels == 0 || data.len() != channels * EPOCH_SAMPLES {
            return Err(Error::Shape {
                op: "epoch",
                shapes: vec![vec![data.len()], vec![channels, EPOCH_SAMPLES]],
            });
        }
        Ok(Epoch {
            data,
            channels,
            label,
            subject_id,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * EPOCH_SAMPLES..(c + 1) * EPOCH_SAMPLES]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * EPOCH_SAMPLES..(c + 1) * EPOCH_SAMPLES]
    }

    /// Same labels, new samples.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Epoch::new(data, self.channels, self.label, self.subject_id)
    }

    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> Epoch {
        Epoch {
            data: self.data.iter().map(|v| v * gain).collect(),
            ..self.clone()
        }
    }
}

/// Stacks epochs into a `[B, channels, 200]` tensor.
pub fn batch_tensor<'a>(epochs: impl IntoIterator<Item = &'a Epoch>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut channels = None;
    let mut b = 0;
    for e in epochs {
        match channels {
            None => channels = Some(e.channels),
            Some(c) if c != e.channels => {
                return Err(Error::Shape {
                    op: "batch_tensor",
                    shapes: vec![vec![c], vec![e.channels]],
                })
            }
            _ => {}
        }
        data.extend_from_slice(&e.data);
        b += 1;
    }
    let c = channels.ok_or_else(|| Error::contract("empty batch"))?;
    Tensor::new(vec![b, c, EPOCH_SAMPLES], data)
}

/// A named frequency band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

/// Ordered, non-overlapping frequency bands below Nyquist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandTable {
    bands: Vec<Band>,
}

impl BandTable {
    pub fn new(bands: Vec<(&str, f64, f64)>) -> Result<Self> {
        let bands: Vec<Band> = bands
            .into_iter()
            .map(|(name, low_hz, high_hz)| Band {
                name: name.to_string(),
                low_hz,
                high_hz,
            })
            .collect();
        for b in &bands {
            check_band(b.low_hz, b.high_hz)?;
        }
        for pair in bands.windows(2) {
            if pair[1].low_hz < pair[0].high_hz {
                return Err(Error::config(format!("bands {} and {} overlap", pair[0].name, pair[1].name)));
            }
        }
        Ok(BandTable { bands })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// `(low, high)` pairs in table order.
    pub fn edges(&self) -> Vec<(f64, f64)> {
        self.bands.iter().map(|b| (b.low_hz, b.high_hz)).collect()
    }
}

fn check_band(low: f64, high: f64) -> Result<()> {
    if !(low > 0.0 && low < high && high <= NYQUIST_HZ) {
        return Err(Error::config(format!(
            "band [{low}, {high}] Hz must satisfy 0 < low < high <= {NYQUIST_HZ}"
        )));
    }
    Ok(())
}

/// Removes `[low, high]` Hz from every channel with a raised-cosine edge of
/// `transition_hz` on each side (zero-phase FFT mask).
pub fn bandstop(epoch: &Epoch, low: f64, high: f64, transition_hz: f64) -> Result<Epoch> {
    check_band(low, high)?;
    if transition_hz < 0.0 {
        return Err(Error::config("transition width must be non-negative"));
    }
    let mut out = Vec::with_capacity(epoch.data.len());
    for c in 0..epoch.channels {
        out.extend(spectral::apply_mask(epoch.channel(c), EPOCH_RATE_HZ, |f| {
            spectral::stop_gain(f, low, high, transition_hz)
        }));
    }
    epoch.with_data(out)
}

/// Periodogram power in `[low, high]` Hz, averaged over channels (µV²).
pub fn bandpower(epoch: &Epoch, low: f64, high: f64) -> f64 {
    let per: f64 = (0..epoch.channels)
        .map(|c| spectral::band_power(epoch.channel(c), EPOCH_RATE_HZ, low, high))
        .sum();
    per / epoch.channels as f64
}

/// Periodogram power in `[low, high]` Hz for one channel.
pub fn channel_bandpower(epoch: &Epoch, channel: usize, low: f64, high: f64) -> f64 {
    spectral::band_power(epoch.channel(channel), EPOCH_RATE_HZ, low, high)
}
