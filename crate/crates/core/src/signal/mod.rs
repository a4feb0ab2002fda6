//! Spectral kernels shared by augmentation, similarity and evaluation.

mod fft;

pub use fft::{fft, fft_in_place, rfft};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Non-DC power below this fraction of total power counts as "no signal".
const DEGENERATE_POWER_RATIO: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct RealSeries {
    values: Vec<f64>,
    sample_rate_hz: f64,
}

impl RealSeries {
    pub fn new(values: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Dimension(format!(
                "a series needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Contract(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            values,
            sample_rate_hz,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One-sided power spectrum of a real series.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bin_power: Vec<f64>,
    pub bin_width_hz: f64,
}

impl Spectrum {
    pub fn frequency_of(&self, bin: f64) -> f64 {
        bin * self.bin_width_hz
    }
}

/// `|X_k|² / n` for `k = 0..=n/2`.
pub fn power_spectrum(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    let spectrum = rfft(values)?;
    Ok(spectrum[..=n / 2]
        .iter()
        .map(|c| c.norm_sqr() / n as f64)
        .collect())
}

pub fn psd(x: &RealSeries) -> Spectrum {
    Spectrum {
        bin_power: power_spectrum(x.values()).expect("series length is at least 2"),
        bin_width_hz: x.sample_rate_hz / x.len() as f64,
    }
}

fn is_degenerate_power(non_dc: f64, total: f64) -> bool {
    non_dc <= 0.0 || non_dc <= DEGENERATE_POWER_RATIO * total
}

/// Drops the DC bin and scales the remaining bins to sum to one.
pub fn normalize_psd(s: &Spectrum) -> Result<Vec<f64>> {
    normalize_power(&s.bin_power)
}

pub(crate) fn normalize_power(bin_power: &[f64]) -> Result<Vec<f64>> {
    if bin_power.len() < 2 {
        return Err(Error::Dimension("spectrum has no non-DC bins".into()));
    }
    let non_dc: f64 = bin_power[1..].iter().sum();
    let total = non_dc + bin_power[0];
    if is_degenerate_power(non_dc, total) {
        return Err(Error::DegenerateSignal(
            "spectrum carries no power outside the DC bin".into(),
        ));
    }
    Ok(bin_power[1..].iter().map(|p| p / non_dc).collect())
}

/// Mean-removed, unit-L2 copy of `u`.
pub(crate) fn standardize(u: &[f64]) -> Result<Vec<f64>> {
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let centered: Vec<f64> = u.iter().map(|x| x - mean).collect();
    let energy: f64 = centered.iter().map(|x| x * x).sum();
    let raw: f64 = u.iter().map(|x| x * x).sum();
    if is_degenerate_power(energy, raw) {
        return Err(Error::DegenerateSignal("zero-variance input".into()));
    }
    let norm = energy.sqrt();
    Ok(centered.into_iter().map(|x| x / norm).collect())
}

/// Normalized circular cross-correlation
/// `r[τ] = Σ_t û[t]·v̂[(t+τ) mod n]` of the mean-removed, unit-norm inputs,
/// computed through `IFFT(conj(U)·V)`.
pub fn circular_cross_correlation(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_pair(u, v)?;
    let (u, v) = (standardize(u)?, standardize(v)?);
    let uf = rfft(&u)?;
    let vf = rfft(&v)?;
    let mut prod: Vec<Complex64> = uf.iter().zip(&vf).map(|(a, b)| a.conj() * b).collect();
    fft_in_place(&mut prod, true)?;
    Ok(prod.into_iter().map(|c| c.re).collect())
}

/// Zero-padded (non-wrapping) variant of [`circular_cross_correlation`].
/// Entry `i` holds lag `i - (n - 1)`, for lags `-(n-1)..=(n-1)`.
pub fn linear_cross_correlation(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_pair(u, v)?;
    let n = u.len();
    let (u, v) = (standardize(u)?, standardize(v)?);
    let m = 2 * n - 1;
    let pad = |x: &[f64]| -> Vec<Complex64> {
        let mut b: Vec<Complex64> = x.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        b.resize(m, Complex64::new(0.0, 0.0));
        b
    };
    let (mut uf, mut vf) = (pad(&u), pad(&v));
    fft_in_place(&mut uf, false)?;
    fft_in_place(&mut vf, false)?;
    let mut prod: Vec<Complex64> = uf.iter().zip(&vf).map(|(a, b)| a.conj() * b).collect();
    fft_in_place(&mut prod, true)?;
    // circular index τ (mod m) ↔ lag τ for τ < n, lag τ - m otherwise
    Ok((0..m)
        .map(|i| {
            let lag = i as isize - (n as isize - 1);
            prod[lag.rem_euclid(m as isize) as usize].re
        })
        .collect())
}

fn check_pair(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() || u.len() < 2 {
        return Err(Error::Dimension(format!(
            "cross-correlation needs equal lengths ≥ 2, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

/// Nyquist information for the aliasing guard of [`resample_frames`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandLimit {
    pub max_signal_hz: f64,
    pub sample_rate_hz: f64,
}

/// Linear-interpolation resampling of a frame sequence along time.
///
/// `data` holds `data.len() / frame_dim` frames of `frame_dim` values each.
/// Output frame `i` interpolates the input at position `i·speed`, so content
/// at frequency `f` reappears at `speed·f` under the original sample rate.
pub fn resample_frames(
    data: &[f64],
    frame_dim: usize,
    speed: f64,
    out_len: usize,
    band: Option<BandLimit>,
) -> Result<Vec<f64>> {
    if frame_dim == 0 || data.len() % frame_dim != 0 {
        return Err(Error::Dimension(format!(
            "{} values do not form frames of {frame_dim}",
            data.len()
        )));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::Contract(format!("speed must be positive, got {speed}")));
    }
    let len = data.len() / frame_dim;
    let consumed = out_len as f64 * speed;
    if consumed > len as f64 + 1e-9 {
        return Err(Error::InsufficientLength {
            needed: consumed.ceil() as usize,
            available: len,
        });
    }
    if let Some(b) = band {
        if speed * b.max_signal_hz >= b.sample_rate_hz / 2.0 {
            return Err(Error::Aliasing(format!(
                "speed {speed} moves {} Hz content past the {} Hz Nyquist limit",
                b.max_signal_hz,
                b.sample_rate_hz / 2.0
            )));
        }
    }
    let mut out = Vec::with_capacity(out_len * frame_dim);
    for i in 0..out_len {
        let pos = i as f64 * speed;
        let j = (pos.floor() as usize).min(len - 1);
        let a = pos - j as f64;
        let lo = &data[j * frame_dim..(j + 1) * frame_dim];
        if a == 0.0 || j + 1 >= len {
            // the last frame is held when `pos` runs past it by < 1 sample
            out.extend_from_slice(lo);
        } else {
            let hi = &data[(j + 1) * frame_dim..(j + 2) * frame_dim];
            out.extend(lo.iter().zip(hi).map(|(x, y)| (1.0 - a) * x + a * y));
        }
    }
    Ok(out)
}

pub fn resample_linear(
    x: &RealSeries,
    speed: f64,
    out_len: usize,
    max_signal_hz: Option<f64>,
) -> Result<RealSeries> {
    let band = max_signal_hz.map(|f| BandLimit {
        max_signal_hz: f,
        sample_rate_hz: x.sample_rate_hz,
    });
    let values = resample_frames(x.values(), 1, speed, out_len, band)?;
    RealSeries::new(values, x.sample_rate_hz)
}

/// Peak location (in fractional bins) of a one-sided power spectrum,
/// ignoring DC. Ties go to the lowest bin. The peak is refined by a parabola
/// through the log-power of the peak and its two neighbours when both are
/// non-DC bins with positive power.
pub(crate) fn refined_peak_bin(bin_power: &[f64]) -> Result<f64> {
    if bin_power.len() < 3 {
        return Err(Error::Dimension("too few bins to locate a peak".into()));
    }
    let non_dc: f64 = bin_power[1..].iter().sum();
    if is_degenerate_power(non_dc, non_dc + bin_power[0]) {
        return Err(Error::DegenerateSignal("flat series has no spectral peak".into()));
    }
    let mut k = 1;
    for i in 2..bin_power.len() {
        if bin_power[i] > bin_power[k] {
            k = i;
        }
    }
    if k < 2 || k + 1 >= bin_power.len() {
        return Ok(k as f64);
    }
    let (a, b, c) = (bin_power[k - 1], bin_power[k], bin_power[k + 1]);
    if a <= 0.0 || c <= 0.0 {
        return Ok(k as f64);
    }
    let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
    let denom = la - 2.0 * lb + lc;
    if denom >= 0.0 {
        return Ok(k as f64);
    }
    let delta = 0.5 * (la - lc) / denom;
    Ok(k as f64 + delta.clamp(-0.5, 0.5))
}

/// Frequency of the strongest non-DC component, refined between bins.
pub fn dominant_frequency(z: &RealSeries) -> Result<f64> {
    if z.len() < 4 {
        return Err(Error::Dimension(format!(
            "dominant frequency needs at least 4 samples, got {}",
            z.len()
        )));
    }
    let s = psd(z);
    Ok(s.frequency_of(refined_peak_bin(&s.bin_power)?))
}
