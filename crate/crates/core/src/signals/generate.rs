use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::{spectral, Montage, Recording};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, stream, SeedRng};
use crate::task::TaskKind;

/// Ranges from which per-subject shifts are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    pub enabled: bool,
    pub channel_gain_range: (f64, f64),
    /// Relative half-width of the per-component gain jitter.
    pub band_jitter: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            enabled: true,
            channel_gain_range: (0.7, 1.3),
            band_jitter: 0.2,
        }
    }
}

/// The realized shift of one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub channel_gains: Vec<f64>,
    /// One gain per rhythmic component of the task.
    pub band_gains: Vec<f64>,
    pub noise_scale: f64,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn identity(channels: usize, seed: u64) -> Self {
        ShiftSpec {
            channel_gains: vec![1.0; channels],
            band_gains: vec![1.0; N_COMPONENTS],
            noise_scale: 1.0,
            seed,
        }
    }

    pub fn draw(cfg: &ShiftConfig, channels: usize, seed: u64) -> Result<Self> {
        if !cfg.enabled {
            return Ok(Self::identity(channels, seed));
        }
        let (lo, hi) = cfg.channel_gain_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("channel gain range ({lo}, {hi}) must be positive")));
        }
        if !(0.0..1.0).contains(&cfg.band_jitter) {
            return Err(Error::config("band jitter must lie in [0, 1)"));
        }
        let mut rng = seeded(derive_seed(seed, stream::SUBJECT));
        let gain = |rng: &mut SeedRng| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let jitter = |rng: &mut SeedRng| {
            if cfg.band_jitter > 0.0 {
                1.0 + rng.random_range(-cfg.band_jitter..cfg.band_jitter)
            } else {
                1.0
            }
        };
        let channel_gains = (0..channels).map(|_| gain(&mut rng)).collect();
        let band_gains = (0..N_COMPONENTS).map(|_| jitter(&mut rng)).collect();
        let noise_scale = jitter(&mut rng);
        Ok(ShiftSpec {
            channel_gains,
            band_gains,
            noise_scale,
            seed,
        })
    }
}

const N_COMPONENTS: usize = 2;

/// Amplitudes (relative to `amplitude_uv`) and frequencies of the synthetic
/// sources. Each task reads only its own group of fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalParams {
    pub amplitude_uv: f64,
    pub noise_rms: f64,
    pub trial_jitter_sd: f64,

    // syn_mi
    pub mu_amp: f64,
    pub mu_hz: (f64, f64),
    pub beta_amp: f64,
    pub beta_hz: (f64, f64),
    pub erd_depth: f64,
    pub onset_s: f64,

    // syn_stress
    pub theta_amp: f64,
    pub theta_hz: (f64, f64),
    pub alpha_hz: (f64, f64),
    pub alpha_anterior: f64,
    pub alpha_posterior: f64,
    pub stress_theta_gain: f64,
    pub stress_alpha_drop: f64,

    // syn_speech
    pub carrier_amp: f64,
    pub carrier_band: (f64, f64),
    pub envelope_depth: f64,
    pub topo_gain: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        SignalParams {
            amplitude_uv: 10.0,
            noise_rms: 1.0,
            trial_jitter_sd: 0.15,
            mu_amp: 1.2,
            mu_hz: (9.0, 12.0),
            beta_amp: 0.5,
            beta_hz: (18.0, 24.0),
            erd_depth: 0.6,
            onset_s: 0.3,
            theta_amp: 0.8,
            theta_hz: (5.0, 7.0),
            alpha_hz: (9.0, 11.0),
            alpha_anterior: 0.6,
            alpha_posterior: 1.4,
            stress_theta_gain: 1.6,
            stress_alpha_drop: 0.3,
            carrier_amp: 1.0,
            carrier_band: (15.0, 45.0),
            envelope_depth: 0.8,
            topo_gain: 1.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub task: TaskKind,
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub trial_seconds: f64,
    /// Acquisition rate; `None` uses the task's native rate.
    pub sample_rate_hz: Option<f64>,
    pub shift: ShiftConfig,
    pub params: SignalParams,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            task: TaskKind::SynMi,
            n_subjects: 9,
            trials_per_subject: 80,
            trial_seconds: 1.0,
            sample_rate_hz: None,
            shift: ShiftConfig::default(),
            params: SignalParams::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn for_task(task: TaskKind) -> Self {
        GeneratorConfig {
            task,
            ..Default::default()
        }
    }

    pub fn rate(&self) -> f64 {
        self.sample_rate_hz.unwrap_or_else(|| self.task.native_rate_hz())
    }
}

/// Channel groups whose mu rhythm desynchronizes for each imagery class
/// (left hand, right hand, feet, tongue).
pub(crate) const MI_GROUPS: [[usize; 2]; 4] = [[3, 5], [2, 4], [0, 1], [6, 7]];

/// Channels emphasized by each speech class.
fn speech_topography(class: usize, channels: usize) -> [usize; 2] {
    [class % channels, (class + 3) % channels]
}

/// Generates `n_subjects × trials_per_subject` labelled recordings.
///
/// Subject `s` (1-based) draws from its own stream seeded with
/// `seed XOR mix64(s)`, so subjects can be generated in parallel and any
/// subject's data is independent of how many others exist.
pub fn generate_dataset(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<Recording>> {
    if cfg.n_subjects < 2 {
        return Err(Error::config("need at least two subjects"));
    }
    if !(cfg.trial_seconds > 0.0) || !(cfg.rate() > 0.0) {
        return Err(Error::config("trial length and sample rate must be positive"));
    }
    let montage = Montage::standard();
    let per_subject: Vec<Result<Vec<Recording>>> = (1..=cfg.n_subjects as u32)
        .into_par_iter()
        .map(|subject| {
            let subject_seed = derive_seed(seed, subject as u64);
            let shift = ShiftSpec::draw(&cfg.shift, montage.len(), subject_seed)?;
            let mut rng = seeded(subject_seed);
            (0..cfg.trials_per_subject)
                .map(|t| {
                    let label = t % cfg.task.n_classes();
                    synth_trial(cfg, &montage, &shift, subject, label, &mut rng)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.n_subjects * cfg.trials_per_subject);
    for r in per_subject {
        out.extend(r?);
    }
    Ok(out)
}

fn sine(samples: usize, rate: f64, freq: f64, phase: f64) -> Vec<f64> {
    (0..samples)
        .map(|i| (2.0 * PI * freq * i as f64 / rate + phase).sin())
        .collect()
}

fn unit_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Unit-RMS noise with a `1/f` power spectrum.
fn pink_noise(samples: usize, rate: f64, rng: &mut SeedRng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut spec = vec![Complex::new(0.0, 0.0); samples];
    for k in 1..=samples / 2 {
        let f = spectral::bin_hz(k, samples, rate);
        let a = 1.0 / f.sqrt();
        let c = Complex::new(normal.sample(rng) * a, normal.sample(rng) * a);
        spec[k] = c;
        if k != samples - k {
            spec[samples - k] = c.conj();
        } else {
            spec[k] = Complex::new(c.re, 0.0);
        }
    }
    unit_rms(spectral::ifft_real(&spec))
}

/// Unit-RMS noise confined to `[low, high]` Hz.
fn band_noise(samples: usize, rate: f64, low: f64, high: f64, rng: &mut SeedRng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let white: Vec<f64> = (0..samples).map(|_| normal.sample(rng)).collect();
    unit_rms(spectral::apply_mask(&white, rate, |f| spectral::pass_gain(f, low, high, 1.0)))
}

fn uniform(rng: &mut SeedRng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Smooth 0→1 step starting at `onset` seconds, 100 ms wide.
fn onset_ramp(i: usize, rate: f64, onset: f64) -> f64 {
    let t = i as f64 / rate;
    let u = ((t - onset) / 0.1).clamp(0.0, 1.0);
    0.5 - 0.5 * (PI * u).cos()
}

fn synth_trial(
    cfg: &GeneratorConfig,
    montage: &Montage,
    shift: &ShiftSpec,
    subject: u32,
    label: usize,
    rng: &mut SeedRng,
) -> Result<Recording> {
    let rate = cfg.rate();
    let samples = (cfg.trial_seconds * rate).round() as usize;
    if samples == 0 {
        return Err(Error::config("trial shorter than one sample"));
    }
    let p = &cfg.params;
    let channels = montage.len();
    let jitter = Normal::new(0.0, p.trial_jitter_sd.max(0.0)).unwrap();
    let trial_gain = jitter.sample(rng).exp();
    let phase = |rng: &mut SeedRng| rng.random_range(0.0..2.0 * PI);
    let mut data = Vec::with_capacity(channels * samples);

    match cfg.task {
        TaskKind::SynMi => {
            let f_mu = uniform(rng, p.mu_hz);
            let f_beta = uniform(rng, p.beta_hz);
            let group = MI_GROUPS[label];
            for c in 0..channels {
                let noise = pink_noise(samples, rate, rng);
                let mu = sine(samples, rate, f_mu, phase(rng));
                let beta = sine(samples, rate, f_beta, phase(rng));
                let erd = group.contains(&c);
                for i in 0..samples {
                    let suppress = if erd { 1.0 - p.erd_depth * onset_ramp(i, rate, p.onset_s) } else { 1.0 };
                    let v = p.noise_rms * shift.noise_scale * noise[i]
                        + trial_gain * suppress * p.mu_amp * shift.band_gains[0] * mu[i]
                        + trial_gain * p.beta_amp * shift.band_gains[1] * beta[i];
                    data.push(v);
                }
            }
        }
        TaskKind::SynStress => {
            let f_theta = uniform(rng, p.theta_hz);
            let f_alpha = uniform(rng, p.alpha_hz);
            let anterior = montage.anterior();
            let stressed = label == 1;
            for c in 0..channels {
                let noise = pink_noise(samples, rate, rng);
                let theta = sine(samples, rate, f_theta, phase(rng));
                let alpha = sine(samples, rate, f_alpha, phase(rng));
                let front = anterior.contains(&c);
                let theta_gain = if front && stressed { p.stress_theta_gain } else { 1.0 };
                let alpha_amp = match (front, stressed) {
                    (true, _) => p.alpha_anterior,
                    (false, false) => p.alpha_posterior,
                    (false, true) => p.alpha_posterior * (1.0 - p.stress_alpha_drop),
                };
                for i in 0..samples {
                    let v = p.noise_rms * shift.noise_scale * noise[i]
                        + trial_gain * p.theta_amp * theta_gain * shift.band_gains[0] * theta[i]
                        + trial_gain * alpha_amp * shift.band_gains[1] * alpha[i];
                    data.push(v);
                }
            }
        }
        TaskKind::SynSpeech => {
            let rate_hz = 2.0 + label as f64;
            let env_phase = phase(rng);
            let topo = speech_topography(label, channels);
            for c in 0..channels {
                let noise = pink_noise(samples, rate, rng);
                let carrier = band_noise(samples, rate, p.carrier_band.0, p.carrier_band.1, rng);
                let gain = if topo.contains(&c) { p.topo_gain } else { 1.0 };
                for i in 0..samples {
                    let env = 1.0 + p.envelope_depth * (2.0 * PI * rate_hz * i as f64 / rate + env_phase).sin();
                    let v = p.noise_rms * shift.noise_scale * noise[i]
                        + trial_gain * gain * p.carrier_amp * shift.band_gains[0] * env * carrier[i];
                    data.push(v);
                }
            }
        }
    }

    for (c, chunk) in data.chunks_mut(samples).enumerate() {
        let g = shift.channel_gains[c] * p.amplitude_uv;
        chunk.iter_mut().for_each(|v| *v *= g);
    }
    Ok(Recording {
        data,
        samples,
        sample_rate_hz: rate,
        montage: montage.clone(),
        subject_id: subject,
        label,
    })
}
