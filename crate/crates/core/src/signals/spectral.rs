//! FFT-domain filtering and band power.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn fft(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(&mut buf));
    buf
}

/// Inverse transform, normalized by `1/N`, real part only.
pub fn ifft_real(spec: &[Complex<f64>]) -> Vec<f64> {
    let mut buf = spec.to_vec();
    let n = buf.len();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut buf));
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Absolute frequency (Hz) of bin `k` in an `n`-point transform.
pub fn bin_hz(k: usize, n: usize, rate: f64) -> f64 {
    let k = if k <= n / 2 { k } else { n - k };
    k as f64 * rate / n as f64
}

/// Gain of a band-stop mask at frequency `f`: zero on `[low, high]`,
/// raised-cosine back to one over `transition` Hz on either side.
pub fn stop_gain(f: f64, low: f64, high: f64, transition: f64) -> f64 {
    if f >= low && f <= high {
        0.0
    } else if f < low && low - f < transition {
        0.5 * (1.0 - (std::f64::consts::PI * (low - f) / transition).cos())
    } else if f > high && f - high < transition {
        0.5 * (1.0 - (std::f64::consts::PI * (f - high) / transition).cos())
    } else {
        1.0
    }
}

/// Gain of a band-pass mask: one on `[low, high]`, raised-cosine to zero
/// over `transition` Hz outside it. DC is removed whenever `low > 0`.
pub fn pass_gain(f: f64, low: f64, high: f64, transition: f64) -> f64 {
    if f == 0.0 && low > 0.0 {
        return 0.0;
    }
    if f >= low && f <= high {
        1.0
    } else if f < low && low - f < transition {
        0.5 * (1.0 + (std::f64::consts::PI * (low - f) / transition).cos())
    } else if f > high && f - high < transition {
        0.5 * (1.0 + (std::f64::consts::PI * (f - high) / transition).cos())
    } else {
        0.0
    }
}

/// Multiplies the spectrum of `x` by `gain(f)` and transforms back.
pub fn apply_mask(x: &[f64], rate: f64, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut spec = fft(x);
    let n = spec.len();
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= gain(bin_hz(k, n, rate));
    }
    ifft_real(&spec)
}

/// One-sided periodogram; `Σ_k p[k]` equals the mean square of `x`.
pub fn periodogram(x: &[f64], rate: f64) -> Vec<(f64, f64)> {
    let spec = fft(x);
    let n = spec.len();
    let n2 = (n * n) as f64;
    (0..=n / 2)
        .map(|k| {
            let p = spec[k].norm_sqr() / n2;
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { p } else { 2.0 * p };
            (bin_hz(k, n, rate), one_sided)
        })
        .collect()
}

/// Power of `x` in bins whose frequency lies in `[low, high]`.
pub fn band_power(x: &[f64], rate: f64, low: f64, high: f64) -> f64 {
    periodogram(x, rate)
        .into_iter()
        .filter(|(f, _)| *f >= low && *f <= high)
        .map(|(_, p)| p)
        .sum()
}

/// FFT resampling from `from_len` to `to_len` samples; content above the
/// new Nyquist frequency is discarded.
pub fn resample(x: &[f64], to_len: usize) -> Vec<f64> {
    let n = x.len();
    if to_len == n {
        return x.to_vec();
    }
    let spec = fft(x);
    let keep = n.min(to_len);
    let mut out = vec![Complex::new(0.0, 0.0); to_len];
    let half = (keep - 1) / 2;
    out[0] = spec[0];
    for k in 1..=half {
        out[k] = spec[k];
        out[to_len - k] = spec[n - k];
    }
    // An even-length shared Nyquist bin is dropped; it cannot be split
    // between the two lengths without aliasing.
    let scale = to_len as f64 / n as f64;
    ifft_real(&out).into_iter().map(|v| v * scale).collect()
}
