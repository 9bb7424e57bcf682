//! Self-supervised transforms with self-generated labels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{bandstop, BandTable, Epoch, Montage, EPOCH_SAMPLES};
use crate::task::TaskKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextKind {
    StoppedBand,
    AmpScale,
    ApFlip,
    Jigsaw,
}

impl PretextKind {
    pub fn name(self) -> &'static str {
        match self {
            PretextKind::StoppedBand => "stopped_band",
            PretextKind::AmpScale => "amp_scale",
            PretextKind::ApFlip => "ap_flip",
            PretextKind::Jigsaw => "jigsaw",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretextSample {
    pub view: Epoch,
    pub kind: PretextKind,
    pub label: usize,
    pub n_classes: usize,
}

pub const AMP_LEVELS: usize = 16;
pub const DEFAULT_JIGSAW_K: usize = 3;
pub const DEFAULT_TRANSITION_HZ: f64 = 1.0;

/// The fixed band table of each task.
pub fn band_table_for(task: TaskKind) -> BandTable {
    let bands = match task {
        TaskKind::SynSpeech => vec![("delta_theta", 0.5, 8.0), ("alpha_beta", 8.0, 30.0), ("gamma", 30.0, 70.0), ("high_gamma", 70.0, 100.0)],
        TaskKind::SynStress => vec![("theta", 4.0, 8.0), ("alpha", 8.0, 12.0), ("beta_low", 13.0, 20.0), ("beta_high", 20.0, 30.0)],
        TaskKind::SynMi => vec![("theta", 3.0, 7.0), ("mu", 8.0, 13.0), ("beta", 13.0, 30.0), ("gamma", 30.0, 45.0)],
    };
    BandTable::new(bands).expect("built-in band tables are valid")
}

/// Removes band `index` of the table.
pub fn stopped_band_with(epoch: &Epoch, table: &BandTable, index: usize, transition_hz: f64) -> Result<PretextSample> {
    if table.len() < 2 {
        return Err(Error::config("stopped-band needs at least two bands"));
    }
    let band = table
        .bands()
        .get(index)
        .ok_or_else(|| Error::contract(format!("band index {index} out of range")))?;
    Ok(PretextSample {
        view: bandstop(epoch, band.low_hz, band.high_hz, transition_hz)?,
        kind: PretextKind::StoppedBand,
        label: index,
        n_classes: table.len(),
    })
}

pub fn stopped_band<R: Rng + ?Sized>(epoch: &Epoch, table: &BandTable, rng: &mut R) -> Result<PretextSample> {
    if table.len() < 2 {
        return Err(Error::config("stopped-band needs at least two bands"));
    }
    let index = rng.random_range(0..table.len());
    stopped_band_with(epoch, table, index, DEFAULT_TRANSITION_HZ)
}

/// `−2 + k·4/15`, the k-th of 16 evenly spaced factors on [−2, 2].
pub fn amp_factor(k: usize) -> f64 {
    -2.0 + k as f64 * 4.0 / (AMP_LEVELS - 1) as f64
}

pub fn amp_scale_with(epoch: &Epoch, k: usize) -> Result<PretextSample> {
    if k >= AMP_LEVELS {
        return Err(Error::contract(format!("amplitude level {k} out of range")));
    }
    Ok(PretextSample {
        view: epoch.scaled(amp_factor(k)),
        kind: PretextKind::AmpScale,
        label: k,
        n_classes: AMP_LEVELS,
    })
}

pub fn amp_scale<R: Rng + ?Sized>(epoch: &Epoch, rng: &mut R) -> PretextSample {
    amp_scale_with(epoch, rng.random_range(0..AMP_LEVELS)).expect("level drawn in range")
}

/// Swaps every anterior-posterior pair when `flip` is set.
pub fn ap_flip_with(epoch: &Epoch, montage: &Montage, flip: bool) -> Result<PretextSample> {
    if montage.ap_pairs().is_empty() {
        return Err(Error::config("montage has no anterior-posterior pairs"));
    }
    if montage.len() != epoch.channels() {
        return Err(Error::config("montage does not match epoch channels"));
    }
    let mut view = epoch.clone();
    if flip {
        for &(a, p) in montage.ap_pairs() {
            let (front, back) = (epoch.channel(a).to_vec(), epoch.channel(p).to_vec());
            view.channel_mut(a).copy_from_slice(&back);
            view.channel_mut(p).copy_from_slice(&front);
        }
    }
    Ok(PretextSample {
        view,
        kind: PretextKind::ApFlip,
        label: flip as usize,
        n_classes: 2,
    })
}

pub fn ap_flip<R: Rng + ?Sized>(epoch: &Epoch, montage: &Montage, rng: &mut R) -> Result<PretextSample> {
    let flip = rng.random_bool(0.5);
    ap_flip_with(epoch, montage, flip)
}

pub fn factorial(k: usize) -> usize {
    (1..=k).product()
}

/// The `index`-th permutation of `0..k` in lexicographic order.
pub fn permutation_from_index(k: usize, mut index: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..k).collect();
    let mut out = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let f = factorial(i);
        out.push(pool.remove(index / f));
        index %= f;
    }
    out
}

/// Lexicographic rank of a permutation of `0..k`.
pub fn permutation_index(perm: &[usize]) -> usize {
    let k = perm.len();
    (0..k)
        .map(|i| perm[i + 1..].iter().filter(|&&v| v < perm[i]).count() * factorial(k - 1 - i))
        .sum()
}

fn check_jigsaw_k(k: usize) -> Result<usize> {
    if !(2..=3).contains(&k) {
        return Err(Error::config(format!("jigsaw needs 2 or 3 segments, got {k}")));
    }
    Ok(EPOCH_SAMPLES / k)
}

/// Chunk `i` of the view is chunk `perm[i]` of the epoch. Chunks are
/// `200 / k` samples long (rounded down); any remainder at the end of the
/// epoch stays in place.
pub fn jigsaw_with(epoch: &Epoch, k: usize, perm_index: usize) -> Result<PretextSample> {
    let len = check_jigsaw_k(k)?;
    let n_classes = factorial(k);
    if perm_index >= n_classes {
        return Err(Error::contract(format!("permutation index {perm_index} out of range")));
    }
    let perm = permutation_from_index(k, perm_index);
    let mut view = epoch.clone();
    for c in 0..epoch.channels() {
        let src = epoch.channel(c);
        let dst = view.channel_mut(c);
        for (i, &p) in perm.iter().enumerate() {
            dst[i * len..(i + 1) * len].copy_from_slice(&src[p * len..(p + 1) * len]);
        }
    }
    Ok(PretextSample {
        view,
        kind: PretextKind::Jigsaw,
        label: perm_index,
        n_classes,
    })
}

pub fn jigsaw<R: Rng + ?Sized>(epoch: &Epoch, k: usize, rng: &mut R) -> Result<PretextSample> {
    check_jigsaw_k(k)?;
    let index = rng.random_range(0..factorial(k));
    jigsaw_with(epoch, k, index)
}

/// Main task, its two auxiliary transforms and their loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskKind,
    pub n_main: usize,
    pub ssl: [PretextKind; 2],
    pub band_table: BandTable,
    pub weights: [f64; 2],
    pub jigsaw_k: usize,
    pub montage: Montage,
}

impl TaskSpec {
    pub fn for_task(task: TaskKind) -> Self {
        let (domain, weights) = match task {
            TaskKind::SynSpeech => (PretextKind::AmpScale, [0.6, 0.6]),
            TaskKind::SynStress => (PretextKind::ApFlip, [0.2, 0.1]),
            TaskKind::SynMi => (PretextKind::Jigsaw, [0.1, 0.8]),
        };
        TaskSpec {
            task,
            n_main: task.n_classes(),
            ssl: [PretextKind::StoppedBand, domain],
            band_table: band_table_for(task),
            weights,
            jigsaw_k: DEFAULT_JIGSAW_K,
            montage: Montage::standard(),
        }
    }

    pub fn with_weights(mut self, weights: [f64; 2]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config(format!("ssl weights must be finite and >= 0, got {weights:?}")));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn with_jigsaw_k(mut self, k: usize) -> Result<Self> {
        check_jigsaw_k(k)?;
        self.jigsaw_k = k;
        Ok(self)
    }

    pub fn n_classes_of(&self, kind: PretextKind) -> usize {
        match kind {
            PretextKind::StoppedBand => self.band_table.len(),
            PretextKind::AmpScale => AMP_LEVELS,
            PretextKind::ApFlip => 2,
            PretextKind::Jigsaw => factorial(self.jigsaw_k),
        }
    }

    /// Class counts of the two auxiliary heads.
    pub fn ssl_classes(&self) -> Vec<usize> {
        self.ssl.iter().map(|&k| self.n_classes_of(k)).collect()
    }

    /// A fresh view of `epoch` for auxiliary task `j`.
    pub fn view<R: Rng + ?Sized>(&self, j: usize, epoch: &Epoch, rng: &mut R) -> Result<PretextSample> {
        match self.ssl[j] {
            PretextKind::StoppedBand => stopped_band(epoch, &self.band_table, rng),
            PretextKind::AmpScale => Ok(amp_scale(epoch, rng)),
            PretextKind::ApFlip => ap_flip(epoch, &self.montage, rng),
            PretextKind::Jigsaw => jigsaw(epoch, self.jigsaw_k, rng),
        }
    }
}
