//! Periodicity-variant views (speed resampling, the contrastive negatives)
//! and periodicity-invariant views (delay, reverse, spatial jitter, noise).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameSeq;
use crate::rng::{stream_seed, SplitMix64};
use crate::signal::{resample_frames, BandLimit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedAugConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub num_views: usize,
    /// Frames per variant view.
    pub target_len: usize,
}

impl Default for SpeedAugConfig {
    fn default() -> Self {
        Self {
            s_min: 0.5,
            s_max: 2.0,
            num_views: 10,
            target_len: 75,
        }
    }
}

impl SpeedAugConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_min > 0.0 && self.s_min < self.s_max && self.s_max.is_finite()) {
            return Err(Error::Config(format!(
                "speed range must satisfy 0 < s_min < s_max, got [{}, {}]",
                self.s_min, self.s_max
            )));
        }
        if self.num_views < 2 {
            return Err(Error::Config(format!(
                "at least 2 variant views are needed, got {}",
                self.num_views
            )));
        }
        if self.target_len < 4 {
            return Err(Error::Config("target_len must be at least 4".into()));
        }
        Ok(())
    }

    /// Shortest raw sequence the fastest view can be cut from.
    pub fn required_len(&self) -> usize {
        (self.target_len as f64 * self.s_max - 1e-9).ceil() as usize
    }

    pub fn check_length(&self, raw_len: usize) -> Result<()> {
        self.validate()?;
        if raw_len < self.required_len() {
            return Err(Error::InsufficientLength {
                needed: self.required_len(),
                available: raw_len,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvariantAugConfig {
    pub p_reverse: f64,
    pub max_delay: usize,
    pub noise_sigma: f64,
    pub brightness_jitter: f64,
    pub crop_scale_range: [f64; 2],
}

impl Default for InvariantAugConfig {
    fn default() -> Self {
        Self {
            p_reverse: 0.5,
            max_delay: 11,
            noise_sigma: 0.05,
            brightness_jitter: 0.1,
            crop_scale_range: [0.8, 1.0],
        }
    }
}

impl InvariantAugConfig {
    /// Every augmentation disabled.
    pub fn identity() -> Self {
        Self {
            p_reverse: 0.0,
            max_delay: 0,
            noise_sigma: 0.0,
            brightness_jitter: 0.0,
            crop_scale_range: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_reverse) {
            return Err(Error::Config(format!("p_reverse {} is not a probability", self.p_reverse)));
        }
        if !(self.noise_sigma >= 0.0 && self.brightness_jitter >= 0.0) {
            return Err(Error::Config("noise and brightness magnitudes must be ≥ 0".into()));
        }
        let [lo, hi] = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "crop_scale_range [{lo}, {hi}] must lie in (0, 1] with low ≤ high"
            )));
        }
        Ok(())
    }
}

/// `M` speed-resampled copies of one sample with their pseudo speed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantViewSet {
    pub views: Vec<FrameSeq>,
    pub speeds: Vec<f64>,
}

/// One speed per equal-width stratum of `[s_min, s_max)`, jittered, ascending.
pub fn sample_speeds(cfg: &SpeedAugConfig, rng: &mut SplitMix64) -> Vec<f64> {
    let m = cfg.num_views;
    let w = (cfg.s_max - cfg.s_min) / m as f64;
    let mut speeds: Vec<f64> = (0..m)
        .map(|i| cfg.s_min + (i as f64 + rng.next_f64()) * w)
        .collect();
    for i in 1..m {
        // rounding at a stratum edge can produce a tie
        if speeds[i] <= speeds[i - 1] {
            speeds[i] = f64::from_bits(speeds[i - 1].to_bits() + 1);
        }
    }
    speeds
}

pub fn variant_views(
    x: &FrameSeq,
    cfg: &SpeedAugConfig,
    rng_seed: u64,
    max_signal_hz: Option<f64>,
) -> Result<VariantViewSet> {
    cfg.check_length(x.frames())?;
    let speeds = sample_speeds(cfg, &mut SplitMix64::new(rng_seed));
    variant_views_at(x, &speeds, cfg.target_len, max_signal_hz)
}

/// Variant views at caller-chosen speeds.
pub fn variant_views_at(
    x: &FrameSeq,
    speeds: &[f64],
    target_len: usize,
    max_signal_hz: Option<f64>,
) -> Result<VariantViewSet> {
    if speeds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract("speeds must be strictly increasing".into()));
    }
    let band = max_signal_hz.map(|f| BandLimit {
        max_signal_hz: f,
        sample_rate_hz: x.sample_rate_hz(),
    });
    let views = speeds
        .iter()
        .map(|&s| {
            let data = resample_frames(x.data(), x.frame_dim(), s, target_len, band)?;
            x.with_data(data)
        })
        .collect::<Result<_>>()?;
    Ok(VariantViewSet {
        views,
        speeds: speeds.to_vec(),
    })
}

/// Applies delay, reverse, crop-resize, brightness and noise, in that order.
/// The output has `v.frames() - max_delay` frames.
pub fn invariant_view(v: &FrameSeq, cfg: &InvariantAugConfig, rng_seed: u64) -> Result<FrameSeq> {
    cfg.validate()?;
    if v.frames() < cfg.max_delay + 1 {
        return Err(Error::InsufficientLength {
            needed: cfg.max_delay + 1,
            available: v.frames(),
        });
    }
    let out_len = v.frames() - cfg.max_delay;
    let mut rng = SplitMix64::new(rng_seed);

    let delay = rng.below(cfg.max_delay as u64 + 1) as usize;
    let d = v.frame_dim();
    let mut frames: Vec<&[f64]> = (delay..delay + out_len).map(|t| v.frame(t)).collect();
    if rng.bernoulli(cfg.p_reverse) {
        frames.reverse();
    }

    let (h, w) = (v.height(), v.width());
    let [lo, hi] = cfg.crop_scale_range;
    let scale = if hi > lo { rng.uniform(lo, hi) } else { lo };
    let ch = ((scale * h as f64).round() as usize).clamp(1, h);
    let cw = ((scale * w as f64).round() as usize).clamp(1, w);
    let y0 = rng.below((h - ch + 1) as u64) as usize;
    let x0 = rng.below((w - cw + 1) as u64) as usize;
    // nearest-neighbour source index for every output pixel of one plane
    let src: Vec<usize> = (0..h * w)
        .map(|p| {
            let (y, x) = (p / w, p % w);
            (y0 + y * ch / h) * w + (x0 + x * cw / w)
        })
        .collect();

    let shift = if cfg.brightness_jitter > 0.0 {
        rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter)
    } else {
        0.0
    };

    let plane = h * w;
    let mut data = Vec::with_capacity(out_len * d);
    for f in frames {
        for c in 0..v.channels() {
            let base = c * plane;
            data.extend(src.iter().map(|&s| f[base + s] + shift));
        }
    }
    if cfg.noise_sigma > 0.0 {
        rng.add_normal_noise(&mut data, cfg.noise_sigma);
    }
    v.with_data(data)
}

/// Two invariant passes over one set of variant views, sharing speed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingViews {
    pub a: VariantViewSet,
    pub b: VariantViewSet,
}

impl TrainingViews {
    pub fn speeds(&self) -> &[f64] {
        &self.a.speeds
    }
}

pub fn make_training_views(
    x: &FrameSeq,
    speed_cfg: &SpeedAugConfig,
    inv_cfg: &InvariantAugConfig,
    rng_seed: u64,
    max_signal_hz: Option<f64>,
) -> Result<TrainingViews> {
    if inv_cfg.max_delay + 4 > speed_cfg.target_len {
        return Err(Error::Config(format!(
            "max_delay {} leaves fewer than 4 frames of a {}-frame view",
            inv_cfg.max_delay, speed_cfg.target_len
        )));
    }
    let base = variant_views(x, speed_cfg, stream_seed(rng_seed, 0, 0, 0), max_signal_hz)?;
    let pass = |set: u64| -> Result<VariantViewSet> {
        let views = base
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| invariant_view(v, inv_cfg, stream_seed(rng_seed, set, 0, i as u64)))
            .collect::<Result<_>>()?;
        Ok(VariantViewSet {
            views,
            speeds: base.speeds.clone(),
        })
    };
    Ok(TrainingViews {
        a: pass(1)?,
        b: pass(2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{dominant_frequency, power_spectrum, RealSeries};
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn tone(freq: f64, n: usize) -> FrameSeq {
        let v = (0..n).map(|t| (TAU * freq * t as f64 / 30.0).sin()).collect();
        FrameSeq::from_series(v, 30.0).unwrap()
    }

    fn peak_bin(x: &[f64]) -> usize {
        let p = power_spectrum(x).unwrap();
        (1..p.len()).fold(1, |k, i| if p[i] > p[k] { i } else { k })
    }

    #[test]
    fn resampled_views_carry_scaled_frequencies() {
        let x = tone(1.0, 150);
        let set = variant_views_at(&x, &[0.5, 1.0, 2.0], 75, Some(1.0)).unwrap();
        for (v, s) in set.views.iter().zip(&set.speeds) {
            let f = dominant_frequency(&RealSeries::new(v.data().to_vec(), 30.0).unwrap()).unwrap();
            let bin = 30.0 / 75.0;
            assert!((f - s).abs() <= bin, "speed {s}: {f}");
        }
    }

    #[test]
    fn views_are_deterministic_and_sorted() {
        let x = tone(1.3, 150);
        let cfg = SpeedAugConfig::default();
        let a = variant_views(&x, &cfg, 9, None).unwrap();
        let b = variant_views(&x, &cfg, 9, None).unwrap();
        assert_eq!(a, b);
        assert!(a.speeds.windows(2).all(|w| w[0] < w[1]));
        assert!(a.views.iter().all(|v| v.frames() == 75));
    }

    #[test]
    fn two_near_equal_speeds_stay_ordered() {
        let x = tone(1.0, 40);
        let set = variant_views_at(&x, &[1.0, 1.0 + 1e-12], 20, None).unwrap();
        assert!(set.speeds[0] < set.speeds[1]);
        assert!(variant_views_at(&x, &[1.0, 1.0], 20, None).is_err());
    }

    #[test]
    fn short_input_is_rejected() {
        let x = tone(1.0, 149);
        assert!(matches!(
            variant_views(&x, &SpeedAugConfig::default(), 0, None),
            Err(Error::InsufficientLength { needed: 150, available: 149 })
        ));
    }

    #[test]
    fn identity_config_returns_input() {
        let x = tone(2.0, 64);
        assert_eq!(invariant_view(&x, &InvariantAugConfig::identity(), 5).unwrap(), x);
        let img = FrameSeq::new((0..5 * 2 * 3 * 3).map(|i| i as f64).collect(), 5, 2, 3, 3, 30.0).unwrap();
        assert_eq!(invariant_view(&img, &InvariantAugConfig::identity(), 5).unwrap(), img);
    }

    #[test]
    fn reverse_keeps_the_normalized_psd() {
        let x = tone(2.3, 64);
        let cfg = InvariantAugConfig {
            p_reverse: 1.0,
            ..InvariantAugConfig::identity()
        };
        let r = invariant_view(&x, &cfg, 1).unwrap();
        let mut rev = x.data().to_vec();
        rev.reverse();
        assert_eq!(r.data(), &rev[..]);
        let p = crate::signal::normalize_power(&power_spectrum(x.data()).unwrap()).unwrap();
        let q = crate::signal::normalize_power(&power_spectrum(r.data()).unwrap()).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn crop_resize_is_nearest_neighbour() {
        // single 4×4 frame, crop to 2×2 then upsample
        let img = FrameSeq::new((0..16).map(|i| i as f64).collect(), 1, 1, 4, 4, 30.0).unwrap();
        let cfg = InvariantAugConfig {
            crop_scale_range: [0.5, 0.5],
            ..InvariantAugConfig::identity()
        };
        let out = invariant_view(&img, &cfg, 3).unwrap();
        let d = out.data();
        // every 2×2 output block repeats one source pixel
        for by in 0..2 {
            for bx in 0..2 {
                let v = d[by * 8 + bx * 2];
                assert_eq!(d[by * 8 + bx * 2 + 1], v);
                assert_eq!(d[by * 8 + 4 + bx * 2], v);
                assert_eq!(d[by * 8 + 4 + bx * 2 + 1], v);
            }
        }
    }

    #[test]
    fn identity_training_views_coincide() {
        let x = tone(1.0, 150);
        let tv = make_training_views(&x, &SpeedAugConfig::default(), &InvariantAugConfig::identity(), 4, None)
            .unwrap();
        assert_eq!(tv.a, tv.b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn delay_keeps_the_peak(freq in 0.6f64..5.0, seed in any::<u64>()) {
            let x = tone(freq, 75);
            let cfg = InvariantAugConfig { max_delay: 11, ..InvariantAugConfig::identity() };
            let y = invariant_view(&x, &cfg, seed).unwrap();
            let reference = x.window(0, 64).unwrap();
            let (a, b) = (peak_bin(reference.data()) as i64, peak_bin(y.data()) as i64);
            prop_assert!((a - b).abs() <= 1);
        }

        #[test]
        fn paired_views_share_labels_and_peaks(freq in 0.6f64..5.0, seed in any::<u64>()) {
            let x = tone(freq, 150);
            let inv = InvariantAugConfig { noise_sigma: 0.0, ..InvariantAugConfig::default() };
            let tv = make_training_views(&x, &SpeedAugConfig::default(), &inv, seed, Some(5.0)).unwrap();
            prop_assert_eq!(&tv.a.speeds, &tv.b.speeds);
            for (va, vb) in tv.a.views.iter().zip(&tv.b.views) {
                let (a, b) = (peak_bin(va.data()) as i64, peak_bin(vb.data()) as i64);
                prop_assert!((a - b).abs() <= 1);
            }
        }

        #[test]
        fn stratified_speeds_cover_the_range(seed in any::<u64>(), m in 2usize..16) {
            let cfg = SpeedAugConfig { num_views: m, ..SpeedAugConfig::default() };
            let s = sample_speeds(&cfg, &mut SplitMix64::new(seed));
            let w = (cfg.s_max - cfg.s_min) / m as f64;
            for (i, v) in s.iter().enumerate() {
                prop_assert!(*v >= cfg.s_min + i as f64 * w - 1e-12);
                prop_assert!(*v <= cfg.s_min + (i + 1) as f64 * w + 1e-12);
            }
            prop_assert!(s.windows(2).all(|p| p[0] < p[1]));
        }
    }
}
