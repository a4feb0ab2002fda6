//! Periodic feature similarity and continuous label similarity.
//!
//! Three periodic measures are provided, all increasing with similarity:
//!
//! * `Mxcorr`: maximum over offsets of the cross-correlation between the
//!   mean-removed, unit-norm series. The gradient follows the maximizing
//!   offset only (lowest offset on ties).
//! * `NpsdCos`: cosine of the DC-dropped, sum-normalized one-sided PSDs.
//! * `NpsdL2`: negative Euclidean distance between the same PSDs.
//!
//! Multi-channel series are scored per channel and averaged. Inside
//! training graphs the per-channel normalizers are floored at a variance of
//! [`VARIANCE_FLOOR`] so a collapsed feature yields a near-zero similarity and
//! a diagnostic count instead of a NaN.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::{BackwardRule, Tape, Tensor, Var};
use crate::signal::{fft_in_place, rfft};

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Mxcorr,
    NpsdCos,
    NpsdL2,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 3] = [Self::Mxcorr, Self::NpsdCos, Self::NpsdL2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mxcorr => "mxcorr",
            Self::NpsdCos => "npsd_cos",
            Self::NpsdL2 => "npsd_l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown similarity kind `{s}`")))
    }
}

/// Offset domain of the cross-correlation behind `Mxcorr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    #[default]
    Circular,
    /// Zero-padded, lags `-(T-1)..=T-1`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilarityConfig {
    pub kind: SimilarityKind,
    pub correlation: Correlation,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            kind: SimilarityKind::NpsdL2,
            correlation: Correlation::Circular,
        }
    }
}

impl SimilarityConfig {
    pub fn of(kind: SimilarityKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelKernel {
    /// `1 / (|s_i - s_j| + eps)`
    InverseL1 { eps: f64 },
    /// `-|s_i - s_j| / scale`
    NegL1 { scale: f64 },
    /// One-hot targets on the diagonal; reduces the generalized loss to InfoNCE.
    Indicator,
}

pub fn label_similarity(s_i: f64, s_j: f64, kernel: LabelKernel) -> f64 {
    let d = (s_i - s_j).abs();
    match kernel {
        LabelKernel::InverseL1 { eps } => 1.0 / (d + eps),
        LabelKernel::NegL1 { scale } => -d / scale,
        LabelKernel::Indicator => {
            if d == 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Frame-wise features: a `T × C` matrix at the input's sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    values: Tensor,
    sample_rate_hz: f64,
}

impl FeatureSeries {
    pub fn new(values: Tensor, sample_rate_hz: f64) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::Dimension(format!(
                "features must be T×C, got shape {:?}",
                values.shape()
            )));
        }
        if !values.all_finite() {
            return Err(Error::NumericDomain("non-finite feature value".into()));
        }
        Ok(Self {
            values,
            sample_rate_hz,
        })
    }

    pub fn from_channels(channels: &[Vec<f64>], sample_rate_hz: f64) -> Result<Self> {
        let c = channels.len();
        let t = channels.first().map_or(0, Vec::len);
        if c == 0 || channels.iter().any(|ch| ch.len() != t) {
            return Err(Error::Dimension("channels must be non-empty and equally long".into()));
        }
        let data = (0..t * c).map(|i| channels[i % c][i / c]).collect();
        Self::new(Tensor::matrix(t, c, data)?, sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        channel_of(self.values.data(), self.channels(), 0, self.len(), c)
    }
}

fn channel_of(data: &[f64], channels: usize, start_row: usize, rows: usize, c: usize) -> Vec<f64> {
    (start_row..start_row + rows)
        .map(|t| data[t * channels + c])
        .collect()
}

/// Per-series state shared by forward and backward passes.
struct Prepared {
    /// Unit-norm centered series (`Mxcorr`) or normalized PSD (`Npsd*`).
    repr: Vec<f64>,
    /// Forward DFT of `repr` (`Mxcorr`, circular) or of the raw series (`Npsd*`).
    spectrum: Vec<Complex64>,
    /// Normalizer actually divided by.
    denom: f64,
    floored: bool,
}

fn prepare(x: &[f64], kind: SimilarityKind, corr: Correlation) -> Prepared {
    let n = x.len();
    match kind {
        SimilarityKind::Mxcorr => {
            let mean = x.iter().sum::<f64>() / n as f64;
            let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
            let energy: f64 = centered.iter().map(|v| v * v).sum();
            let floor = VARIANCE_FLOOR * n as f64;
            let floored = energy < floor;
            let denom = energy.max(floor).sqrt();
            let repr: Vec<f64> = centered.iter().map(|v| v / denom).collect();
            let spectrum = match corr {
                Correlation::Circular => rfft(&repr).expect("non-empty"),
                Correlation::Linear => Vec::new(),
            };
            Prepared {
                repr,
                spectrum,
                denom,
                floored,
            }
        }
        SimilarityKind::NpsdCos | SimilarityKind::NpsdL2 => {
            let spectrum = rfft(x).expect("non-empty");
            let power: Vec<f64> = spectrum[1..=n / 2]
                .iter()
                .map(|c| c.norm_sqr() / n as f64)
                .collect();
            let total: f64 = power.iter().sum();
            // one-sided non-DC power of a series with variance σ² is ≈ nσ²/2
            let floor = 0.5 * VARIANCE_FLOOR * n as f64;
            let floored = total < floor;
            let denom = total.max(floor);
            Prepared {
                repr: power.iter().map(|p| p / denom).collect(),
                spectrum,
                denom,
                floored,
            }
        }
    }
}

/// Similarity of one channel pair and, for `Mxcorr`, the maximizing lag.
fn pair_value(a: &Prepared, b: &Prepared, kind: SimilarityKind, corr: Correlation) -> (f64, isize) {
    match kind {
        SimilarityKind::Mxcorr => {
            let n = a.repr.len();
            match corr {
                Correlation::Circular => {
                    let mut prod: Vec<Complex64> = a
                        .spectrum
                        .iter()
                        .zip(&b.spectrum)
                        .map(|(x, y)| x.conj() * y)
                        .collect();
                    fft_in_place(&mut prod, true).expect("non-empty");
                    let mut best = 0;
                    for tau in 1..n {
                        if prod[tau].re > prod[best].re {
                            best = tau;
                        }
                    }
                    (prod[best].re, best as isize)
                }
                Correlation::Linear => {
                    let lag_value = |lag: isize| -> f64 {
                        (0..n as isize)
                            .filter(|t| (0..n as isize).contains(&(t + lag)))
                            .map(|t| a.repr[t as usize] * b.repr[(t + lag) as usize])
                            .sum()
                    };
                    let mut best = (lag_value(-(n as isize - 1)), -(n as isize - 1));
                    for lag in -(n as isize - 2)..n as isize {
                        let v = lag_value(lag);
                        if v > best.0 {
                            best = (v, lag);
                        }
                    }
                    best
                }
            }
        }
        SimilarityKind::NpsdCos => {
            let (na, nb) = (norm(&a.repr), norm(&b.repr));
            if na == 0.0 || nb == 0.0 {
                return (0.0, 0);
            }
            (dot(&a.repr, &b.repr) / (na * nb), 0)
        }
        SimilarityKind::NpsdL2 => {
            let d: f64 = a
                .repr
                .iter()
                .zip(&b.repr)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            (-d.sqrt(), 0)
        }
    }
}

/// Adds `g · ∂pair/∂repr` into `da` and `db`.
fn pair_grad(
    a: &Prepared,
    b: &Prepared,
    kind: SimilarityKind,
    corr: Correlation,
    lag: isize,
    g: f64,
    da: &mut [f64],
    db: &mut [f64],
) {
    match kind {
        SimilarityKind::Mxcorr => {
            let n = a.repr.len() as isize;
            for t in 0..n {
                let s = match corr {
                    Correlation::Circular => (t + lag).rem_euclid(n),
                    Correlation::Linear => t + lag,
                };
                if (0..n).contains(&s) {
                    da[t as usize] += g * b.repr[s as usize];
                    db[s as usize] += g * a.repr[t as usize];
                }
            }
        }
        SimilarityKind::NpsdCos => {
            let (na, nb) = (norm(&a.repr), norm(&b.repr));
            if na == 0.0 || nb == 0.0 {
                return;
            }
            let cos = dot(&a.repr, &b.repr) / (na * nb);
            for k in 0..a.repr.len() {
                da[k] += g * (b.repr[k] / (na * nb) - cos * a.repr[k] / (na * na));
                db[k] += g * (a.repr[k] / (na * nb) - cos * b.repr[k] / (nb * nb));
            }
        }
        SimilarityKind::NpsdL2 => {
            let dist = a
                .repr
                .iter()
                .zip(&b.repr)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            if dist == 0.0 {
                // subgradient 0 at coincident spectra
                return;
            }
            for k in 0..a.repr.len() {
                let d = (a.repr[k] - b.repr[k]) / dist;
                da[k] -= g * d;
                db[k] += g * d;
            }
        }
    }
}

/// Maps a gradient on `repr` back to the raw series.
fn repr_backward(p: &Prepared, d_repr: &[f64], kind: SimilarityKind) -> Vec<f64> {
    match kind {
        SimilarityKind::Mxcorr => {
            let n = p.repr.len();
            let proj = if p.floored { 0.0 } else { dot(&p.repr, d_repr) };
            let dc: Vec<f64> = (0..n)
                .map(|t| (d_repr[t] - p.repr[t] * proj) / p.denom)
                .collect();
            let mean = dc.iter().sum::<f64>() / n as f64;
            dc.into_iter().map(|v| v - mean).collect()
        }
        SimilarityKind::NpsdCos | SimilarityKind::NpsdL2 => {
            let n = p.spectrum.len();
            let proj = if p.floored { 0.0 } else { dot(&p.repr, d_repr) };
            // ∂x_t Σ_k dP_k |X_k|²/n = 2·Re(IDFT(dP·X))_t over the one-sided bins
            let mut y = vec![Complex64::new(0.0, 0.0); n];
            for (i, d) in d_repr.iter().enumerate() {
                let k = i + 1;
                let d_power = (d - proj) / p.denom;
                y[k] = p.spectrum[k] * d_power;
            }
            fft_in_place(&mut y, true).expect("non-empty");
            y.iter().map(|c| 2.0 * c.re).collect()
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Counts of series whose every channel hit the variance floor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimDiagnostics {
    pub degenerate_a: usize,
    pub degenerate_b: usize,
}

impl SimDiagnostics {
    pub fn any(&self) -> bool {
        self.degenerate_a + self.degenerate_b > 0
    }
}

/// Stacked series: `count` blocks of `len` rows of a `(count·len) × C` matrix.
struct Stack<'a> {
    data: &'a [f64],
    count: usize,
    len: usize,
    channels: usize,
}

impl Stack<'_> {
    fn prepare(&self, cfg: SimilarityConfig) -> Vec<Vec<Prepared>> {
        (0..self.count)
            .map(|i| {
                (0..self.channels)
                    .map(|c| {
                        prepare(
                            &channel_of(self.data, self.channels, i * self.len, self.len, c),
                            cfg.kind,
                            cfg.correlation,
                        )
                    })
                    .collect()
            })
            .collect()
    }
}

fn count_degenerate(preps: &[Vec<Prepared>]) -> usize {
    preps
        .iter()
        .filter(|chans| chans.iter().all(|p| p.floored))
        .count()
}

fn stack_of(t: &Tensor, len: usize) -> Result<Stack<'_>> {
    if t.rank() != 2 || len < 4 || t.rows() % len != 0 {
        return Err(Error::Dimension(format!(
            "expected a stack of {len}-step series (len ≥ 4), got shape {:?}",
            t.shape()
        )));
    }
    Ok(Stack {
        data: t.data(),
        count: t.rows() / len,
        len,
        channels: t.cols(),
    })
}

/// Forward pass: `(values, lags)` with `lags[(i·mb + j)·C + c]`.
fn matrix_forward(
    pa: &[Vec<Prepared>],
    pb: &[Vec<Prepared>],
    cfg: SimilarityConfig,
) -> (Vec<f64>, Vec<isize>) {
    let c = pa.first().map_or(0, Vec::len);
    let mut values = Vec::with_capacity(pa.len() * pb.len());
    let mut lags = Vec::with_capacity(pa.len() * pb.len() * c);
    for a in pa {
        for b in pb {
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b) {
                let (v, lag) = pair_value(x, y, cfg.kind, cfg.correlation);
                s += v;
                lags.push(lag);
            }
            values.push(s / c as f64);
        }
    }
    (values, lags)
}

struct SimMatrixRule {
    len: usize,
    cfg: SimilarityConfig,
    lags: Vec<isize>,
}

impl BackwardRule for SimMatrixRule {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let sa = stack_of(inputs[0], self.len).expect("validated in forward");
        let sb = stack_of(inputs[1], self.len).expect("validated in forward");
        let (pa, pb) = (sa.prepare(self.cfg), sb.prepare(self.cfg));
        let c = sa.channels;
        let repr_len = pa[0][0].repr.len();
        let mut da = vec![vec![vec![0.0; repr_len]; c]; sa.count];
        let mut db = vec![vec![vec![0.0; repr_len]; c]; sb.count];
        let g = grad.data();
        for i in 0..sa.count {
            for j in 0..sb.count {
                let gij = g[i * sb.count + j] / c as f64;
                if gij == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    let lag = self.lags[(i * sb.count + j) * c + ch];
                    let (x, y) = (&pa[i][ch], &pb[j][ch]);
                    pair_grad(x, y, self.cfg.kind, self.cfg.correlation, lag, gij, &mut da[i][ch], &mut db[j][ch]);
                }
            }
        }
        let unstack = |preps: &[Vec<Prepared>], d: &[Vec<Vec<f64>>], shape: &[usize]| {
            let mut out = vec![0.0; shape[0] * shape[1]];
            for (i, (chans, dchans)) in preps.iter().zip(d).enumerate() {
                for (ch, (p, dr)) in chans.iter().zip(dchans).enumerate() {
                    for (t, v) in repr_backward(p, dr, self.cfg.kind).into_iter().enumerate() {
                        out[(i * self.len + t) * c + ch] = v;
                    }
                }
            }
            Tensor::new(shape.to_vec(), out).expect("shape")
        };
        vec![
            Some(unstack(&pa, &da, inputs[0].shape())),
            Some(unstack(&pb, &db, inputs[1].shape())),
        ]
    }
}

/// Tape-connected `Ma × Mb` matrix of periodic similarities between the
/// series stacked in `a` (`(Ma·len) × C`) and `b` (`(Mb·len) × C`).
pub fn similarity_matrix(
    tape: &mut Tape,
    a: Var,
    b: Var,
    len: usize,
    cfg: SimilarityConfig,
) -> Result<(Var, SimDiagnostics)> {
    let (value, lags, diag) = {
        let (ta, tb) = (tape.value(a), tape.value(b));
        let (sa, sb) = (stack_of(ta, len)?, stack_of(tb, len)?);
        if sa.channels != sb.channels {
            return Err(Error::Dimension(format!(
                "channel counts differ: {} vs {}",
                sa.channels, sb.channels
            )));
        }
        let (pa, pb) = (sa.prepare(cfg), sb.prepare(cfg));
        let (values, lags) = matrix_forward(&pa, &pb, cfg);
        let diag = SimDiagnostics {
            degenerate_a: count_degenerate(&pa),
            degenerate_b: count_degenerate(&pb),
        };
        (Tensor::matrix(sa.count, sb.count, values)?, lags, diag)
    };
    let rule = SimMatrixRule { len, cfg, lags };
    Ok((tape.custom(&[a, b], value, Box::new(rule)), diag))
}

fn stack_series(items: &[FeatureSeries]) -> Result<(Tensor, usize)> {
    let first = items
        .first()
        .ok_or_else(|| Error::Dimension("empty feature set".into()))?;
    let (len, c) = (first.len(), first.channels());
    let mut data = Vec::with_capacity(items.len() * len * c);
    for s in items {
        if s.len() != len || s.channels() != c {
            return Err(Error::Dimension(format!(
                "feature shapes differ: {}×{} vs {}×{}",
                len,
                c,
                s.len(),
                s.channels()
            )));
        }
        data.extend_from_slice(s.values().data());
    }
    Ok((Tensor::matrix(items.len() * len, c, data)?, len))
}

/// Untracked similarity matrix between two feature sets, row-major.
pub fn similarity_values(
    a: &[FeatureSeries],
    b: &[FeatureSeries],
    cfg: SimilarityConfig,
) -> Result<(Vec<f64>, SimDiagnostics)> {
    let (ta, len) = stack_series(a)?;
    let (tb, len_b) = stack_series(b)?;
    if len != len_b || ta.cols() != tb.cols() {
        return Err(Error::Dimension("feature sets have different shapes".into()));
    }
    let (pa, pb) = (stack_of(&ta, len)?.prepare(cfg), stack_of(&tb, len)?.prepare(cfg));
    let diag = SimDiagnostics {
        degenerate_a: count_degenerate(&pa),
        degenerate_b: count_degenerate(&pb),
    };
    Ok((matrix_forward(&pa, &pb, cfg).0, diag))
}

/// Precomputed reference set for repeated nearest-neighbour queries.
pub struct SimilarityIndex {
    cfg: SimilarityConfig,
    len: usize,
    channels: usize,
    items: Vec<Vec<Prepared>>,
    degenerate: Vec<bool>,
}

impl SimilarityIndex {
    pub fn new(reference: &[FeatureSeries], cfg: SimilarityConfig) -> Result<Self> {
        let (t, len) = stack_series(reference)?;
        let stack = stack_of(&t, len)?;
        let items = stack.prepare(cfg);
        let degenerate = items.iter().map(|c| c.iter().all(|p| p.floored)).collect();
        Ok(Self {
            cfg,
            len,
            channels: stack.channels,
            items,
            degenerate,
        })
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.degenerate[i]
    }

    /// Similarities of `query` to every reference series, and whether the
    /// query itself is degenerate.
    pub fn query(&self, query: &FeatureSeries) -> Result<(Vec<f64>, bool)> {
        if query.len() != self.len || query.channels() != self.channels {
            return Err(Error::Dimension("query shape differs from the index".into()));
        }
        let q: Vec<Prepared> = (0..self.channels)
            .map(|c| prepare(&query.channel(c), self.cfg.kind, self.cfg.correlation))
            .collect();
        let degenerate = q.iter().all(|p| p.floored);
        let (values, _) = matrix_forward(std::slice::from_ref(&q), &self.items, self.cfg);
        Ok((values, degenerate))
    }
}

/// Periodic similarity of two feature series. Zero-variance channels are an
/// error here rather than floored.
pub fn periodic_similarity(u: &FeatureSeries, v: &FeatureSeries, cfg: SimilarityConfig) -> Result<f64> {
    if u.len() != v.len() || u.channels() != v.channels() || u.len() < 4 {
        return Err(Error::Dimension(format!(
            "similarity needs equal T×C shapes with T ≥ 4, got {}×{} and {}×{}",
            u.len(),
            u.channels(),
            v.len(),
            v.channels()
        )));
    }
    let (values, diag) = similarity_values(std::slice::from_ref(u), std::slice::from_ref(v), cfg)?;
    let floored = |s: &FeatureSeries| {
        (0..s.channels()).any(|c| prepare(&s.channel(c), cfg.kind, cfg.correlation).floored)
    };
    if diag.any() || floored(u) || floored(v) {
        return Err(Error::DegenerateSignal(
            "a feature channel has (near-)zero variance".into(),
        ));
    }
    Ok(values[0])
}

/// Tape-connected `N × N` cosine similarity between the rows of `z`.
pub fn cosine_similarity_matrix(tape: &mut Tape, z: Var) -> Result<Var> {
    let zt = tape.value(z);
    if zt.rank() != 2 {
        return Err(Error::Dimension(format!("expected N×D, got {:?}", zt.shape())));
    }
    let (n, d) = (zt.rows(), zt.cols());
    let (unit, _) = unit_rows(zt.data(), n, d);
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = dot(&unit[i * d..(i + 1) * d], &unit[j * d..(j + 1) * d]);
        }
    }
    Ok(tape.custom(&[z], Tensor::matrix(n, n, s)?, Box::new(CosineRule)))
}

const ROW_NORM_FLOOR: f64 = 1e-8;

fn unit_rows(data: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut unit = data.to_vec();
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = &mut unit[i * d..(i + 1) * d];
        let nr = norm(row);
        norms.push(nr);
        let denom = nr.max(ROW_NORM_FLOOR);
        row.iter_mut().for_each(|v| *v /= denom);
    }
    (unit, norms)
}

struct CosineRule;

impl BackwardRule for CosineRule {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let z = inputs[0];
        let (n, d) = (z.rows(), z.cols());
        let (unit, norms) = unit_rows(z.data(), n, d);
        let g = grad.data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            // d unit_i = Σ_j (G_ij + G_ji) unit_j
            let mut du = vec![0.0; d];
            for j in 0..n {
                let w = g[i * n + j] + g[j * n + i];
                if w != 0.0 {
                    for (acc, u) in du.iter_mut().zip(&unit[j * d..(j + 1) * d]) {
                        *acc += w * u;
                    }
                }
            }
            let ui = &unit[i * d..(i + 1) * d];
            let floored = norms[i] < ROW_NORM_FLOOR;
            let proj = if floored { 0.0 } else { dot(ui, &du) };
            let denom = norms[i].max(ROW_NORM_FLOOR);
            for k in 0..d {
                out[i * d + k] = (du[k] - ui[k] * proj) / denom;
            }
        }
        vec![Some(Tensor::matrix(n, d, out).expect("shape"))]
    }
}
