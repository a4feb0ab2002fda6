//! Deterministic synthetic periodic datasets.
//!
//! Rotating sprites: one of ten asymmetric vector shapes rotates about the
//! canvas centre at `freq_hz`. Each pixel is the fraction of its 2×2
//! sub-samples inside the rotated shape, accumulated as an integer count, so
//! every value is a multiple of 1/4. A 1-D noisy sine fixture shares the
//! same manifest and loading path.
//!
//! On disk a dataset is a directory holding `manifest.json` and one
//! `samples/<id>.f32` file per sample (little-endian `f32`, frames ×
//! channels × height × width). A sample can always be re-rendered from its
//! [`SampleSpec`], so split rules that alter appearance write new files.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frames::FrameSeq;
use crate::rng::SplitMix64;

pub const GENERATOR_VERSION: &str = "simper-synth/1";
pub const NUM_SPRITES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    RotatingSprite,
    Sine1d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub id: String,
    pub source: SourceKind,
    pub freq_hz: f64,
    pub phase: f64,
    pub sprite_id: usize,
    /// Colour plane assignment; `Some` renders three channels.
    pub color_id: Option<usize>,
    pub fs: f64,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl SampleSpec {
    pub fn channels(&self) -> usize {
        if self.color_id.is_some() {
            3
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.freq_hz > 0.0 && self.freq_hz < self.fs / 2.0) {
            return Err(Error::Aliasing(format!(
                "{} Hz is outside (0, {}) for a {} Hz sample rate",
                self.freq_hz,
                self.fs / 2.0,
                self.fs
            )));
        }
        if self.sprite_id >= NUM_SPRITES || self.color_id.is_some_and(|c| c >= NUM_SPRITES) {
            return Err(Error::Data(format!("sprite/colour id out of range in `{}`", self.id)));
        }
        if self.num_frames < 4 || self.height == 0 || self.width == 0 {
            return Err(Error::Data(format!("degenerate geometry in `{}`", self.id)));
        }
        Ok(())
    }
}

/// Sample geometry shared by every generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub freq_range: [f64; 2],
    pub fs: f64,
    pub num_frames: usize,
    pub canvas: usize,
    pub noise_sigma: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            freq_range: [0.5, 5.0],
            fs: 30.0,
            num_frames: 150,
            canvas: 16,
            noise_sigma: 0.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.freq_range;
        if !(self.fs > 0.0) {
            return Err(Error::Config("fs must be positive".into()));
        }
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Config(format!("bad frequency range [{lo}, {hi}]")));
        }
        if hi >= self.fs / 2.0 {
            return Err(Error::Aliasing(format!(
                "frequency range reaches {hi} Hz, at or past the {} Hz Nyquist limit",
                self.fs / 2.0
            )));
        }
        if self.num_frames < 4 || self.canvas == 0 {
            return Err(Error::Config("num_frames ≥ 4 and canvas ≥ 1 are required".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub spec: SampleSpec,
}

impl ManifestEntry {
    pub fn label(&self) -> f64 {
        self.spec.freq_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub generator: String,
    pub split: String,
    pub seed: u64,
    pub freq_range: [f64; 2],
    pub metadata: BTreeMap<String, String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.entries.iter().map(ManifestEntry::label).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("malformed manifest: {e}")))
    }

    /// SHA-256 of the canonical JSON text.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Writes every sample file under `root` and fills in the checksums.
    pub fn write_samples(&mut self, root: &Path) -> Result<()> {
        let dir = root.join("samples");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for e in &mut self.entries {
            let bytes = sample_bytes(&render(&e.spec)?);
            e.sha256 = hex::encode(Sha256::digest(&bytes));
            let path = root.join(&e.file);
            fs::write(&path, &bytes).map_err(|err| Error::io(&path, err))?;
        }
        Ok(())
    }

    /// Renders every sample in memory and fills in the checksums.
    pub fn fill_checksums(&mut self) -> Result<()> {
        for e in &mut self.entries {
            e.sha256 = hex::encode(Sha256::digest(sample_bytes(&render(&e.spec)?)));
        }
        Ok(())
    }

    /// Loads and checksum-verifies every sample file under `root`.
    pub fn load_samples(&self, root: &Path) -> Result<Dataset> {
        let items = self
            .entries
            .iter()
            .map(|e| {
                let path = root.join(&e.file);
                let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
                let digest = hex::encode(Sha256::digest(&bytes));
                if digest != e.sha256 {
                    return Err(Error::Data(format!(
                        "{} hashes to {digest}, manifest records {}",
                        path.display(),
                        e.sha256
                    )));
                }
                let frames = frames_from_bytes(&bytes, &e.spec)?;
                Ok(Sample {
                    spec: e.spec.clone(),
                    frames,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { items })
    }

    /// Renders every sample in memory without touching the disk.
    pub fn render_all(&self) -> Result<Dataset> {
        let items = self
            .entries
            .iter()
            .map(|e| {
                Ok(Sample {
                    spec: e.spec.clone(),
                    frames: render(&e.spec)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { items })
    }

    fn derived(&self, split: &str, entries: Vec<ManifestEntry>) -> Self {
        Self {
            generator: self.generator.clone(),
            split: split.to_string(),
            seed: self.seed,
            freq_range: self.freq_range,
            metadata: self.metadata.clone(),
            entries,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub spec: SampleSpec,
    pub frames: FrameSeq,
}

/// Samples held in memory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub items: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.items.iter().map(|s| s.spec.freq_hz).collect()
    }

    pub fn frames(&self) -> Vec<&FrameSeq> {
        self.items.iter().map(|s| &s.frames).collect()
    }
}

fn sample_bytes(frames: &FrameSeq) -> Vec<u8> {
    frames
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

fn frames_from_bytes(bytes: &[u8], spec: &SampleSpec) -> Result<FrameSeq> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!("sample `{}` is not a whole number of f32s", spec.id)));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    FrameSeq::new(data, spec.num_frames, spec.channels(), spec.height, spec.width, spec.fs)
        .map_err(|e| Error::Data(format!("sample `{}`: {e}", spec.id)))
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Capsule { a: (f64, f64), b: (f64, f64), r: f64 },
    Disc { c: (f64, f64), r: f64 },
    /// Annular sector; angles in turns, counter-clockwise from `start`.
    Sector { r0: f64, r1: f64, start: f64, extent: f64 },
}

impl Shape {
    /// `p` is the point in sprite coordinates, `r` its radius and `turn`
    /// its polar angle in turns.
    fn contains(&self, p: (f64, f64), r: f64, turn: f64) -> bool {
        match *self {
            Shape::Disc { c, r } => (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2) <= r * r,
            Shape::Capsule { a, b, r } => {
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let len2 = dx * dx + dy * dy;
                let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
                let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
                (p.0 - qx).powi(2) + (p.1 - qy).powi(2) <= r * r
            }
            Shape::Sector { r0, r1, start, extent } => {
                r >= r0 && r <= r1 && (turn - start).rem_euclid(1.0) < extent
            }
        }
    }
}

fn cap(a: (f64, f64), b: (f64, f64), r: f64) -> Shape {
    Shape::Capsule { a, b, r }
}

fn disc(c: (f64, f64), r: f64) -> Shape {
    Shape::Disc { c, r }
}

fn sector(r0: f64, r1: f64, start: f64, extent: f64) -> Shape {
    Shape::Sector { r0, r1, start, extent }
}

/// Ten shapes in canvas-radius units, none with rotational symmetry. Each is
/// built around a sector spanning roughly half a turn, so a pixel on its
/// orbit is covered for about half of every period and the fundamental
/// dominates its spectrum.
fn sprite(id: usize) -> Vec<Shape> {
    match id {
        0 => vec![sector(0.0, 0.9, 0.0, 0.5)],
        1 => vec![sector(0.3, 0.95, 0.0, 0.6)],
        2 => vec![sector(0.0, 0.75, 0.1, 0.45), disc((-0.5, -0.3), 0.2)],
        3 => vec![sector(0.0, 0.95, 0.0, 0.4), sector(0.5, 0.95, 0.4, 0.15)],
        4 => vec![sector(0.15, 0.9, 0.0, 0.55), cap((0.0, 0.0), (-0.7, 0.0), 0.1)],
        5 => vec![sector(0.0, 0.6, 0.0, 0.5), sector(0.6, 0.95, 0.25, 0.5)],
        6 => vec![sector(0.0, 0.9, 0.05, 0.4), disc((0.55, -0.2), 0.22)],
        7 => vec![sector(0.4, 0.95, 0.0, 0.65)],
        8 => vec![sector(0.0, 0.9, 0.0, 0.45), cap((0.2, -0.2), (0.6, -0.6), 0.1)],
        _ => vec![sector(0.0, 0.5, 0.0, 0.6), sector(0.5, 0.9, 0.1, 0.4)],
    }
}

/// RGB weights of the ten colours.
const PALETTE: [[f64; 3]; NUM_SPRITES] = [
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.2, 0.2, 1.0],
    [1.0, 1.0, 0.2],
    [1.0, 0.2, 1.0],
    [0.2, 1.0, 1.0],
    [1.0, 0.6, 0.2],
    [0.6, 0.2, 1.0],
    [0.6, 1.0, 0.6],
    [0.9, 0.9, 0.9],
];

/// Pure function of the spec.
pub fn render(spec: &SampleSpec) -> Result<FrameSeq> {
    spec.validate()?;
    let (n, h, w) = (spec.num_frames, spec.height, spec.width);
    let mut noise = SplitMix64::new(spec.noise_seed);
    let mut data = match spec.source {
        SourceKind::Sine1d => (0..n)
            .flat_map(|t| {
                let v = (TAU * spec.freq_hz * t as f64 / spec.fs + spec.phase).sin();
                std::iter::repeat(v).take(h * w).collect::<Vec<_>>()
            })
            .collect(),
        SourceKind::RotatingSprite => {
            let shapes = sprite(spec.sprite_id);
            let scale = 2.0 / w.max(h) as f64;
            // sub-sample positions in canvas coordinates, with their polar form
            let mut points = Vec::with_capacity(4 * h * w);
            for y in 0..h {
                for x in 0..w {
                    for (sy, sx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                        let px = (x as f64 + sx) * scale - w as f64 * scale / 2.0;
                        let py = (y as f64 + sy) * scale - h as f64 * scale / 2.0;
                        points.push((px, py, px.hypot(py), py.atan2(px) / TAU));
                    }
                }
            }
            let mut coverage = vec![0u8; n * h * w];
            for t in 0..n {
                let theta = spec.phase + TAU * spec.freq_hz * t as f64 / spec.fs;
                let (s, c) = theta.sin_cos();
                let turns = theta / TAU;
                for (cell, sub) in coverage[t * h * w..(t + 1) * h * w].iter_mut().zip(points.chunks(4)) {
                    // rotate each sub-sample back into sprite coordinates
                    *cell = sub
                        .iter()
                        .filter(|&&(px, py, r, turn)| {
                            let q = (c * px + s * py, -s * px + c * py);
                            shapes.iter().any(|sh| sh.contains(q, r, turn - turns))
                        })
                        .count() as u8;
                }
            }
            let channels = spec.color_id.map(|c| PALETTE[c].to_vec()).unwrap_or_else(|| vec![1.0]);
            let plane = h * w;
            let mut out = Vec::with_capacity(n * channels.len() * plane);
            for t in 0..n {
                for &weight in &channels {
                    out.extend(coverage[t * plane..(t + 1) * plane].iter().map(|&k| k as f64 / 4.0 * weight));
                }
            }
            out
        }
    };
    if spec.noise_sigma > 0.0 {
        noise.add_normal_noise(&mut data, spec.noise_sigma);
    }
    FrameSeq::new(data, n, spec.channels(), h, w, spec.fs)
}

fn entry(spec: SampleSpec) -> ManifestEntry {
    ManifestEntry {
        file: format!("samples/{}.f32", spec.id),
        sha256: String::new(),
        spec,
    }
}

fn base_manifest(kind: &str, cfg: &GenConfig, seed: u64, entries: Vec<ManifestEntry>) -> DatasetManifest {
    let mut metadata = BTreeMap::new();
    metadata.insert("source".into(), kind.into());
    metadata.insert("fs".into(), cfg.fs.to_string());
    metadata.insert("num_frames".into(), cfg.num_frames.to_string());
    metadata.insert("canvas".into(), cfg.canvas.to_string());
    DatasetManifest {
        generator: GENERATOR_VERSION.into(),
        split: "all".into(),
        seed,
        freq_range: cfg.freq_range,
        metadata,
        entries,
    }
}

/// Specs for `n` rotating-sprite samples; checksums are left empty until the
/// samples are rendered or written.
pub fn generate_rotating_sprites(n: usize, cfg: &GenConfig, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    let [lo, hi] = cfg.freq_range;
    let entries = (0..n)
        .map(|i| {
            let mut rng = SplitMix64::keyed(seed, i as u64, 0, 0);
            entry(SampleSpec {
                id: format!("s{i:05}"),
                source: SourceKind::RotatingSprite,
                freq_hz: rng.uniform(lo, hi),
                phase: rng.uniform(0.0, TAU),
                sprite_id: rng.below(NUM_SPRITES as u64) as usize,
                color_id: None,
                fs: cfg.fs,
                num_frames: cfg.num_frames,
                height: cfg.canvas,
                width: cfg.canvas,
                noise_sigma: cfg.noise_sigma,
                noise_seed: rng.next_u64(),
            })
        })
        .collect();
    Ok(base_manifest("rotating", cfg, seed, entries))
}

/// Noisy 1-D sinusoids on a 1×1 canvas.
pub fn generate_sine1d(n: usize, cfg: &GenConfig, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    let [lo, hi] = cfg.freq_range;
    let entries = (0..n)
        .map(|i| {
            let mut rng = SplitMix64::keyed(seed, i as u64, 0, 1);
            entry(SampleSpec {
                id: format!("s{i:05}"),
                source: SourceKind::Sine1d,
                freq_hz: rng.uniform(lo, hi),
                phase: rng.uniform(0.0, TAU),
                sprite_id: 0,
                color_id: None,
                fs: cfg.fs,
                num_frames: cfg.num_frames,
                height: 1,
                width: 1,
                noise_sigma: cfg.noise_sigma,
                noise_seed: rng.next_u64(),
            })
        })
        .collect();
    let mut m = base_manifest("sine1d", cfg, seed, entries);
    // a unit sine carries power 1/2
    let snr_db = 10.0 * (0.5 / (cfg.noise_sigma * cfg.noise_sigma)).log10();
    m.metadata.insert("snr_db".into(), format!("{snr_db:.3}"));
    if snr_db < 0.0 {
        m.metadata.insert("low_snr".into(), "true".into());
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SplitRule {
    Uniform,
    InterpolationGap { band: [f64; 2] },
    ExtrapolationGap { band: [f64; 2] },
    Spurious,
    Subsample { fraction: f64 },
}

impl SplitRule {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::InterpolationGap { .. } => "interpolation",
            Self::ExtrapolationGap { .. } => "extrapolation",
            Self::Spurious => "spurious",
            Self::Subsample { .. } => "subsample",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

/// Frequency stratum `0..NUM_SPRITES` of `f` within `range`.
pub fn stratum(f: f64, range: [f64; 2]) -> usize {
    let w = (range[1] - range[0]) / NUM_SPRITES as f64;
    (((f - range[0]) / w).floor().max(0.0) as usize).min(NUM_SPRITES - 1)
}

/// Sorted by frequency, consecutive pairs split one each way, so the test
/// half spans the whole range evenly.
fn uniform_split(m: &DatasetManifest, rng: &mut SplitMix64) -> (Vec<ManifestEntry>, Vec<ManifestEntry>) {
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by(|&a, &b| m.entries[a].label().total_cmp(&m.entries[b].label()).then(a.cmp(&b)));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for pair in order.chunks(2) {
        if pair.len() == 1 {
            train.push(pair[0]);
            continue;
        }
        let flip = rng.bernoulli(0.5);
        let (tr, te) = if flip { (pair[1], pair[0]) } else { (pair[0], pair[1]) };
        train.push(tr);
        test.push(te);
    }
    train.sort_unstable();
    test.sort_unstable();
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| m.entries[i].clone()).collect();
    (pick(train), pick(test))
}

fn restyle(e: &ManifestEntry, prefix: &str, sprite_id: usize) -> ManifestEntry {
    let mut spec = e.spec.clone();
    spec.id = format!("{prefix}-{}", e.spec.id);
    spec.sprite_id = sprite_id;
    spec.color_id = Some(sprite_id);
    entry(spec)
}

fn check_band(band: [f64; 2], range: [f64; 2]) -> Result<()> {
    if !(band[0] < band[1] && band[0] >= range[0] && band[1] <= range[1]) {
        return Err(Error::Config(format!(
            "band [{}, {}] must be a non-empty sub-interval of [{}, {}]",
            band[0], band[1], range[0], range[1]
        )));
    }
    Ok(())
}

/// Splits `m` into train and test manifests. Entries for the spurious rule
/// are re-styled, so their checksums are left empty until rendered.
pub fn build_split(m: &DatasetManifest, rule: SplitRule, seed: u64) -> Result<SplitPair> {
    let mut rng = SplitMix64::keyed(seed, 0x5eed, 0, 0);
    let in_band = |e: &ManifestEntry, band: [f64; 2]| e.label() >= band[0] && e.label() <= band[1];
    let (train, test) = match rule {
        SplitRule::Uniform => uniform_split(m, &mut rng),
        SplitRule::InterpolationGap { band } | SplitRule::ExtrapolationGap { band } => {
            check_band(band, m.freq_range)?;
            if let SplitRule::ExtrapolationGap { .. } = rule {
                if band[1] < m.freq_range[1] {
                    return Err(Error::Config(format!(
                        "an extrapolation band must reach the top of the range ({} Hz)",
                        m.freq_range[1]
                    )));
                }
            } else if band[0] <= m.freq_range[0] || band[1] >= m.freq_range[1] {
                return Err(Error::Config("an interpolation band must be interior".into()));
            }
            let (train, test) = uniform_split(m, &mut rng);
            (train.into_iter().filter(|e| !in_band(e, band)).collect(), test)
        }
        SplitRule::Spurious => {
            let (train, test) = uniform_split(m, &mut rng);
            let train = train
                .iter()
                .map(|e| restyle(e, "train", stratum(e.label(), m.freq_range)))
                .collect();
            let test = test
                .iter()
                .map(|e| restyle(e, "test", rng.below(NUM_SPRITES as u64) as usize))
                .collect();
            (train, test)
        }
        SplitRule::Subsample { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!("fraction {fraction} is outside (0, 1]")));
            }
            let keep = ((fraction * m.len() as f64).round() as usize).clamp(1, m.len().max(1));
            let mut order: Vec<usize> = (0..m.len()).collect();
            rng.shuffle(&mut order);
            let mut kept = order[..keep.min(m.len())].to_vec();
            let mut rest = order[keep.min(m.len())..].to_vec();
            kept.sort_unstable();
            rest.sort_unstable();
            (
                kept.into_iter().map(|i| m.entries[i].clone()).collect(),
                rest.into_iter().map(|i| m.entries[i].clone()).collect(),
            )
        }
    };
    if train.is_empty() || (test.is_empty() && !matches!(rule, SplitRule::Subsample { .. })) {
        return Err(Error::Config(format!(
            "the {} rule leaves an empty split ({} train, {} test)",
            rule.name(),
            train.len(),
            test.len()
        )));
    }
    let mut train = m.derived(&format!("{}-train", rule.name()), train);
    let mut test = m.derived(&format!("{}-test", rule.name()), test);
    for part in [&mut train, &mut test] {
        part.metadata.insert("split_rule".into(), serde_json::to_string(&rule).expect("rule"));
        part.metadata.insert("split_seed".into(), seed.to_string());
    }
    Ok(SplitPair { train, test })
}

/// Writes a dataset directory: `manifest.json`, sample files, and the
/// checksums filled in.
pub fn write_dataset(m: &mut DatasetManifest, root: &Path, manifest_name: &str) -> Result<PathBuf> {
    m.write_samples(root)?;
    let path = root.join(manifest_name);
    m.save(&path)?;
    Ok(path)
}
