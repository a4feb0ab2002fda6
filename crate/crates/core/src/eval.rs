//! Feature evaluation (spectral peak and nearest-neighbour regression),
//! regression metrics, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::encoder::{encode_batch, EncoderConfig};
use crate::error::{Error, Result};
use crate::ndtensor::ParamStore;
use crate::signal::{dominant_frequency, power_spectrum, RealSeries};
use crate::similarity::{FeatureSeries, SimilarityConfig, SimilarityIndex, VARIANCE_FLOOR};
use crate::synthdata::Dataset;

/// Floor applied to each absolute error before the geometric mean.
pub const GM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub n: usize,
    pub mae: f64,
    /// Percent.
    pub mape: f64,
    pub gm: f64,
    pub pearson_rho: f64,
    /// Set when either vector is constant, in which case `pearson_rho` is 0.
    pub rho_undefined: bool,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// MAE, MAPE (percent), error geometric mean, and Pearson correlation.
pub fn compute_metrics(y: &[f64], y_hat: &[f64]) -> Result<Metrics> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::MetricDomain(format!(
            "need equal non-zero lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return Err(Error::MetricDomain("non-finite value".into()));
    }
    if y.contains(&0.0) {
        return Err(Error::MetricDomain("a zero ground truth makes MAPE undefined".into()));
    }
    let n = y.len() as f64;
    let errors: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).collect();
    let mae = errors.iter().sum::<f64>() / n;
    let mape = 100.0 * errors.iter().zip(y).map(|(e, t)| e / t.abs()).sum::<f64>() / n;
    let gm = (errors.iter().map(|e| e.max(GM_FLOOR).ln()).sum::<f64>() / n).exp();
    let rho = pearson(y, y_hat);
    Ok(Metrics {
        n: y.len(),
        mae,
        mape,
        gm,
        pearson_rho: rho.unwrap_or(0.0),
        rho_undefined: rho.is_none(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub protocol: String,
    pub metrics: Metrics,
    /// Samples whose features were degenerate and were scored at the worst
    /// in-range prediction.
    pub degenerate: usize,
    pub predictions: Vec<f64>,
    /// Free-form provenance (config hash, seed, experiment, ...).
    pub tags: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn degenerate_fraction(&self) -> f64 {
        self.degenerate as f64 / self.metrics.n as f64
    }

    /// Flat `key = value` text, one entry per line.
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        let _ = writeln!(out, "protocol = {}", self.protocol);
        let _ = writeln!(out, "n = {}", m.n);
        let _ = writeln!(out, "mae = {}", m.mae);
        let _ = writeln!(out, "mape = {}", m.mape);
        let _ = writeln!(out, "gm = {}", m.gm);
        let _ = writeln!(out, "gm_floor = {GM_FLOOR}");
        let _ = writeln!(out, "pearson_rho = {}", m.pearson_rho);
        let _ = writeln!(out, "rho_undefined = {}", m.rho_undefined);
        let _ = writeln!(out, "degenerate = {}", self.degenerate);
        let _ = writeln!(out, "degenerate_fraction = {}", self.degenerate_fraction());
        for (k, v) in &self.tags {
            let _ = writeln!(out, "tag.{k} = {v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        let mut tags = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Data(format!("malformed report line `{line}`")))?;
            match k.strip_prefix("tag.") {
                Some(tag) => {
                    tags.insert(tag.to_string(), v.to_string());
                }
                None => {
                    kv.insert(k.to_string(), v.to_string());
                }
            }
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Data(format!("report lacks `{k}`")));
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("report field `{k}` is not a number")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("report field `{k}` is not an integer")))
        };
        Ok(Self {
            protocol: get("protocol")?.clone(),
            metrics: Metrics {
                n: int("n")?,
                mae: num("mae")?,
                mape: num("mape")?,
                gm: num("gm")?,
                pearson_rho: num("pearson_rho")?,
                rho_undefined: get("rho_undefined")? == "true",
            },
            degenerate: int("degenerate")?,
            predictions: Vec::new(),
            tags,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub const CSV_HEADER: &'static str = "experiment,protocol,seed,config_hash,value,n,mae,mape,gm,pearson_rho,degenerate,status";

    /// One results row in [`Self::CSV_HEADER`] layout.
    pub fn csv_row(&self) -> String {
        let tag = |k: &str| self.tags.get(k).cloned().unwrap_or_default();
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},ok",
            tag("experiment"),
            self.protocol,
            tag("seed"),
            tag("config_hash"),
            tag("value"),
            m.n,
            m.mae,
            m.mape,
            m.gm,
            m.pearson_rho,
            self.degenerate
        )
    }

    /// A results row for a run that produced no metrics.
    pub fn failure_row(experiment: &str, protocol: &str, seed: u64, config_hash: &str, value: &str, error: &str) -> String {
        let error: String = error.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
        format!("{experiment},{protocol},{seed},{config_hash},{value},,,,,,,error: {error}")
    }

    /// Appends one row to a results CSV, writing the header on creation.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        append_results_row(path, &self.csv_row())
    }
}

/// Appends a raw row (already in [`MetricsReport::CSV_HEADER`] layout) to a
/// results CSV, writing the header on creation.
pub fn append_results_row(path: &Path, row: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(MetricsReport::CSV_HEADER);
        text.push('\n');
    }
    text.push_str(row);
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// The in-range prediction farthest from `truth`.
fn worst_in_range(truth: f64, range: [f64; 2]) -> f64 {
    if (truth - range[0]).abs() >= (range[1] - truth).abs() {
        range[0]
    } else {
        range[1]
    }
}

/// Spectral-peak frequency of a feature series: each channel's refined
/// dominant frequency, weighted by that channel's non-DC power. `None` when
/// every channel is flat. The result lies strictly inside `(0, fs/2)`.
pub fn fft_predict(z: &FeatureSeries) -> Option<f64> {
    let n = z.len();
    let fs = z.sample_rate_hz();
    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..z.channels() {
        let x = z.channel(c);
        let mean = x.iter().sum::<f64>() / n as f64;
        let energy: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        if energy < VARIANCE_FLOOR * n as f64 {
            continue;
        }
        let Ok(series) = RealSeries::new(x.clone(), fs) else { continue };
        let Ok(f) = dominant_frequency(&series) else { continue };
        let power: f64 = power_spectrum(&x).ok()?[1..].iter().sum();
        num += power * f;
        den += power;
    }
    if den <= 0.0 {
        return None;
    }
    // a Nyquist-bin peak is reported half a bin inside the band
    let half_bin = 0.5 * fs / n as f64;
    Some((num / den).clamp(half_bin, fs / 2.0 - half_bin))
}

/// Spectral-peak evaluation of precomputed features against labels.
pub fn fft_eval_features(features: &[FeatureSeries], labels: &[f64], range: [f64; 2]) -> Result<MetricsReport> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} feature series for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mut degenerate = 0;
    let predictions: Vec<f64> = features
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            fft_predict(z).unwrap_or_else(|| {
                degenerate += 1;
                worst_in_range(y, range)
            })
        })
        .collect();
    Ok(MetricsReport {
        protocol: "fft".into(),
        metrics: compute_metrics(labels, &predictions)?,
        degenerate,
        predictions,
        tags: BTreeMap::new(),
    })
}

/// Nearest-neighbour regression: each query takes the label of its most
/// similar reference series (lowest index on ties).
pub fn knn_eval_features(
    reference: &[FeatureSeries],
    reference_labels: &[f64],
    queries: &[FeatureSeries],
    query_labels: &[f64],
    cfg: SimilarityConfig,
    range: [f64; 2],
) -> Result<MetricsReport> {
    if reference.is_empty() || queries.is_empty() {
        return Err(Error::Data("nearest-neighbour evaluation needs non-empty sets".into()));
    }
    if reference.len() != reference_labels.len() || queries.len() != query_labels.len() {
        return Err(Error::Data("feature and label counts differ".into()));
    }
    let index = SimilarityIndex::new(reference, cfg)?;
    let mut degenerate = 0;
    let mut predictions = Vec::with_capacity(queries.len());
    for (q, &y) in queries.iter().zip(query_labels) {
        let (sims, flat) = index.query(q)?;
        if flat {
            degenerate += 1;
            predictions.push(worst_in_range(y, range));
            continue;
        }
        let mut best = 0;
        for (i, s) in sims.iter().enumerate() {
            if *s > sims[best] {
                best = i;
            }
        }
        predictions.push(reference_labels[best]);
    }
    Ok(MetricsReport {
        protocol: "knn".into(),
        metrics: compute_metrics(query_labels, &predictions)?,
        degenerate,
        predictions,
        tags: BTreeMap::new(),
    })
}

/// Encodes every sample of `data`.
pub fn features_of(data: &Dataset, params: &ParamStore, cfg: &EncoderConfig) -> Result<Vec<FeatureSeries>> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut out = Vec::with_capacity(data.len());
    // equal-length runs are encoded together
    for chunk in data.frames().chunks(16) {
        out.extend(encode_batch(chunk, params, cfg)?);
    }
    Ok(out)
}

pub fn fft_eval(params: &ParamStore, cfg: &EncoderConfig, test: &Dataset, range: [f64; 2]) -> Result<MetricsReport> {
    fft_eval_features(&features_of(test, params, cfg)?, &test.labels(), range)
}

pub fn knn_eval(
    params: &ParamStore,
    cfg: &EncoderConfig,
    train: &Dataset,
    test: &Dataset,
    sim: SimilarityConfig,
    range: [f64; 2],
) -> Result<MetricsReport> {
    knn_eval_features(
        &features_of(train, params, cfg)?,
        &train.labels(),
        &features_of(test, params, cfg)?,
        &test.labels(),
        sim,
        range,
    )
}

/// Restricts a report's predictions to samples whose label satisfies `keep`.
pub fn subset_metrics(report: &MetricsReport, labels: &[f64], keep: impl Fn(f64) -> bool) -> Result<Metrics> {
    let (y, p): (Vec<f64>, Vec<f64>) = labels
        .iter()
        .zip(&report.predictions)
        .filter(|(y, _)| keep(**y))
        .map(|(y, p)| (*y, *p))
        .unzip();
    compute_metrics(&y, &p)
}

/// CSV with one row per sample: id, label, then the `T × C` features
/// flattened time-major.
pub fn export_features(ids: &[String], labels: &[f64], features: &[FeatureSeries], path: &Path) -> Result<()> {
    let first = features
        .first()
        .ok_or_else(|| Error::Data("nothing to export".into()))?;
    let (t, c) = (first.len(), first.channels());
    let mut out = String::from("id,freq_hz");
    for step in 0..t {
        for ch in 0..c {
            let _ = write!(out, ",t{step}_c{ch}");
        }
    }
    out.push('\n');
    for ((id, y), z) in ids.iter().zip(labels).zip(features) {
        if z.len() != t || z.channels() != c {
            return Err(Error::Dimension(format!("sample `{id}` has a different feature shape")));
        }
        let _ = write!(out, "{id},{y}");
        for v in z.values().data() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::Tensor;
    use crate::similarity::SimilarityKind;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn tone_features(freq: f64, phase: f64, n: usize) -> FeatureSeries {
        let a: Vec<f64> = (0..n).map(|t| (TAU * freq * t as f64 / 30.0 + phase).sin()).collect();
        let b: Vec<f64> = (0..n).map(|t| 0.5 * (TAU * freq * t as f64 / 30.0 + phase).cos()).collect();
        FeatureSeries::from_channels(&[a, b], 30.0).unwrap()
    }

    #[test]
    fn hand_computed_metrics() {
        let m = compute_metrics(&[1.0, 2.0], &[1.0, 4.0]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.mape, 50.0);
        // errors {0, 2}: the zero error is floored
        assert!((m.gm - (GM_FLOOR * 2.0).sqrt()).abs() < 1e-15);

        let m = compute_metrics(&[5.0, 10.0], &[4.0, 6.0]).unwrap();
        assert!((m.gm - 2.0).abs() < 1e-9);

        let m = compute_metrics(&[2.0], &[1.0]).unwrap();
        assert!((m.mape - 50.0).abs() < 1e-9);
        assert!(m.rho_undefined);
        assert_eq!(m.pearson_rho, 0.0);

        let y = [1.0, 2.0, 3.5];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.mae, m.mape), (0.0, 0.0));
        assert!((m.pearson_rho - 1.0).abs() < 1e-12 && !m.rho_undefined);

        assert!(matches!(compute_metrics(&[0.0], &[1.0]), Err(Error::MetricDomain(_))));
        assert!(matches!(compute_metrics(&[], &[]), Err(Error::MetricDomain(_))));
    }

    #[test]
    fn pearson_against_a_textbook_pair() {
        // x = 1..5, y = (2, 4, 5, 4, 5): r = 6 / √(10 · 6)
        let m = compute_metrics(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 5.0, 4.0, 5.0]).unwrap();
        assert!((m.pearson_rho - 6.0 / 60f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metric_identities(pairs in proptest::collection::vec((0.5f64..5.0, 0.0f64..6.0), 1..40)) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = compute_metrics(&y, &p).unwrap();
            prop_assert!(m.mae >= 0.0 && m.mape >= 0.0 && m.gm >= 0.0);
            prop_assert!(m.gm <= m.mae + 1e-5);
            prop_assert!((-1.0..=1.0).contains(&m.pearson_rho));
        }
    }

    #[test]
    fn oracle_tones_are_recovered() {
        let labels: Vec<f64> = (0..20).map(|i| 0.5 + 0.225 * i as f64).collect();
        let feats: Vec<FeatureSeries> = labels
            .iter()
            .enumerate()
            .map(|(i, &f)| tone_features(f, i as f64, 150))
            .collect();
        let r = fft_eval_features(&feats, &labels, [0.5, 5.0]).unwrap();
        assert!(r.metrics.mae < 0.05, "{}", r.metrics.mae);
        assert_eq!(r.degenerate, 0);
        assert!(r.predictions.iter().all(|p| *p > 0.0 && *p < 15.0));
    }

    #[test]
    fn constant_features_are_all_degenerate() {
        let flat = FeatureSeries::new(Tensor::filled(&[150, 2], 0.3), 30.0).unwrap();
        let feats = vec![flat; 4];
        let labels = [0.6, 1.0, 4.0, 4.9];
        let r = fft_eval_features(&feats, &labels, [0.5, 5.0]).unwrap();
        assert_eq!(r.degenerate_fraction(), 1.0);
        assert_eq!(r.predictions, vec![5.0, 5.0, 0.5, 0.5]);
    }

    #[test]
    fn nyquist_peak_stays_inside_the_band() {
        let alt: Vec<f64> = (0..16).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let z = FeatureSeries::from_channels(&[alt], 30.0).unwrap();
        let p = fft_predict(&z).unwrap();
        assert!(p < 15.0 && p > 14.0);
    }

    #[test]
    fn knn_self_match_and_clusters() {
        let labels: Vec<f64> = (0..6).map(|i| 1.0 + 0.5 * i as f64).collect();
        let feats: Vec<FeatureSeries> = labels.iter().map(|&f| tone_features(f, 0.3, 60)).collect();
        for kind in SimilarityKind::ALL {
            let r = knn_eval_features(&feats, &labels, &feats, &labels, SimilarityConfig::of(kind), [0.5, 5.0]).unwrap();
            assert_eq!(r.metrics.mae, 0.0, "{kind:?}");
        }

        // bin-aligned tones at 1 Hz and 4 Hz have disjoint spectra
        let train = vec![tone_features(1.0, 0.0, 60), tone_features(4.0, 0.0, 60)];
        let queries: Vec<FeatureSeries> = (0..8)
            .map(|i| tone_features(if i % 2 == 0 { 1.0 } else { 4.0 }, i as f64, 60))
            .collect();
        let truth: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { 4.0 }).collect();
        let cfg = SimilarityConfig::of(SimilarityKind::NpsdCos);
        let r = knn_eval_features(&train, &[1.0, 4.0], &queries, &truth, cfg, [0.5, 5.0]).unwrap();
        assert_eq!(r.predictions, truth);
    }

    #[test]
    fn knn_ties_pick_the_lowest_index() {
        let z = tone_features(2.0, 0.0, 60);
        let train = vec![z.clone(), z.clone(), z.clone()];
        let r = knn_eval_features(&train, &[3.0, 2.0, 1.0], &[z], &[2.0], SimilarityConfig::default(), [0.5, 5.0]).unwrap();
        assert_eq!(r.predictions, vec![3.0]);
    }

    proptest! {
        #[test]
        fn knn_stays_in_the_train_label_range(
            train_f in proptest::collection::vec(0.5f64..5.0, 2..6),
            test_f in proptest::collection::vec(0.5f64..5.0, 1..6),
        ) {
            let tr: Vec<FeatureSeries> = train_f.iter().map(|&f| tone_features(f, 0.1, 64)).collect();
            let te: Vec<FeatureSeries> = test_f.iter().map(|&f| tone_features(f, 0.7, 64)).collect();
            let r = knn_eval_features(&tr, &train_f, &te, &test_f, SimilarityConfig::default(), [0.5, 5.0]).unwrap();
            let lo = train_f.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = train_f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.predictions.iter().all(|p| *p >= lo && *p <= hi));
        }
    }

    #[test]
    fn report_text_round_trip_and_csv() {
        let feats = vec![tone_features(1.0, 0.0, 60), tone_features(2.0, 0.0, 60)];
        let mut r = fft_eval_features(&feats, &[1.0, 2.0], [0.5, 5.0]).unwrap();
        r.tags.insert("config_hash".into(), "abc".into());
        r.tags.insert("seed".into(), "3".into());
        let back = MetricsReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back.metrics, r.metrics);
        assert_eq!(back.tags, r.tags);

        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("results.csv");
        r.append_csv(&csv).unwrap();
        r.append_csv(&csv).unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(MetricsReport::CSV_HEADER));
    }

    #[test]
    fn feature_export_layout() {
        let feats = vec![tone_features(1.0, 0.0, 8), tone_features(2.0, 0.0, 8)];
        let ids = vec!["a".to_string(), "b".to_string()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        export_features(&ids, &[1.0, 2.0], &feats, &path).unwrap();
        let first = fs::read(&path).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split(',').count() == 8 * 2 + 2));
        export_features(&ids, &[1.0, 2.0], &feats, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
        assert!(matches!(
            export_features(&ids, &[1.0, 2.0], &feats, &dir.path().join("missing/x.csv")),
            Err(Error::Io { .. })
        ));
    }
}
