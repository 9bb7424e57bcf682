use serde::{Deserialize, Serialize};

use super::{spectral, Epoch, Recording, EPOCH_RATE_HZ, EPOCH_SAMPLES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_rate_hz: f64,
    /// Band-pass edges in Hz; `None` disables filtering.
    pub bandpass_hz: Option<(f64, f64)>,
    pub transition_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_rate_hz: EPOCH_RATE_HZ,
            bandpass_hz: Some((0.3, 75.0)),
            transition_hz: 1.0,
        }
    }
}

/// Band-pass, resample to the epoch rate, and cut contiguous 1-s epochs.
///
/// A trailing partial second is dropped. A recording shorter than one
/// second after resampling yields an empty list.
pub fn preprocess(rec: &Recording, cfg: &PreprocessConfig) -> Result<Vec<Epoch>> {
    if cfg.target_rate_hz != EPOCH_RATE_HZ {
        return Err(Error::config(format!(
            "epochs are defined at {EPOCH_RATE_HZ} Hz, target rate {} unsupported",
            cfg.target_rate_hz
        )));
    }
    if !(rec.sample_rate_hz > 0.0) {
        return Err(Error::config("sample rate must be positive"));
    }
    if let Some((lo, hi)) = cfg.bandpass_hz {
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::config(format!("invalid band-pass [{lo}, {hi}]")));
        }
    }
    let out_len = (rec.samples as f64 * cfg.target_rate_hz / rec.sample_rate_hz).round() as usize;
    let n_epochs = out_len / EPOCH_SAMPLES;
    if n_epochs == 0 {
        return Ok(Vec::new());
    }
    let channels: Vec<Vec<f64>> = (0..rec.channels())
        .map(|c| {
            let x = rec.channel(c);
            let filtered = match cfg.bandpass_hz {
                Some((lo, hi)) => spectral::apply_mask(x, rec.sample_rate_hz, |f| {
                    spectral::pass_gain(f, lo, hi, cfg.transition_hz)
                }),
                None => x.to_vec(),
            };
            if out_len == rec.samples {
                filtered
            } else {
                spectral::resample(&filtered, out_len)
            }
        })
        .collect();
    (0..n_epochs)
        .map(|e| {
            let mut data = Vec::with_capacity(rec.channels() * EPOCH_SAMPLES);
            for ch in &channels {
                data.extend_from_slice(&ch[e * EPOCH_SAMPLES..(e + 1) * EPOCH_SAMPLES]);
            }
            Epoch::new(data, rec.channels(), rec.label, rec.subject_id)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{bandpower, Montage};
    use std::f64::consts::PI;

    fn tone_recording(freq: f64, rate: f64, seconds: f64) -> Recording {
        let montage = Montage::standard();
        let samples = (rate * seconds).round() as usize;
        let ch: Vec<f64> = (0..samples).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect();
        Recording {
            data: ch.repeat(montage.len()),
            samples,
            sample_rate_hz: rate,
            montage,
            subject_id: 1,
            label: 2,
        }
    }

    #[test]
    fn ten_seconds_at_500hz_gives_ten_epochs() {
        let rec = tone_recording(7.0, 500.0, 10.0);
        let epochs = preprocess(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(epochs.len(), 10);
        assert!(epochs.iter().all(|e| e.data().len() == 8 * EPOCH_SAMPLES && e.label == 2));
    }

    #[test]
    fn identity_path_slices_input() {
        let mut rec = tone_recording(3.0, 200.0, 2.6);
        rec.data.iter_mut().enumerate().for_each(|(i, v)| *v += i as f64 * 1e-3);
        let cfg = PreprocessConfig {
            bandpass_hz: None,
            ..Default::default()
        };
        let epochs = preprocess(&rec, &cfg).unwrap();
        assert_eq!(epochs.len(), 2);
        for (e, ep) in epochs.iter().enumerate() {
            for c in 0..rec.channels() {
                let start = e * EPOCH_SAMPLES;
                assert_eq!(ep.channel(c), &rec.channel(c)[start..start + EPOCH_SAMPLES]);
            }
        }
    }

    #[test]
    fn short_recording_yields_nothing() {
        let rec = tone_recording(3.0, 250.0, 0.5);
        assert!(preprocess(&rec, &PreprocessConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn above_nyquist_tone_is_not_aliased() {
        let rec = tone_recording(120.0, 500.0, 10.0);
        let original_power = 0.5;
        for cfg in [
            PreprocessConfig::default(),
            PreprocessConfig {
                bandpass_hz: None,
                ..Default::default()
            },
        ] {
            for e in preprocess(&rec, &cfg).unwrap() {
                // every 1 Hz bin up to Nyquist
                for k in 0..=100 {
                    let p = bandpower(&e, k as f64, k as f64);
                    assert!(p <= original_power * 1e-4, "bin {k} Hz holds {p}");
                }
            }
        }
    }

    #[test]
    fn preprocess_is_deterministic() {
        let rec = tone_recording(11.0, 256.0, 3.0);
        let a = preprocess(&rec, &PreprocessConfig::default()).unwrap();
        let b = preprocess(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }
}
