//! Experiment configuration and the generate → pretrain → evaluate pipeline
//! shared by the command-line front end and the acceptance harness.
//!
//! A configuration is a TOML document with one section per module. Loading
//! layers a preset, an optional file, and `key=value` overrides, then parses
//! strictly: an unknown key anywhere is a configuration error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{InvariantAugConfig, SpeedAugConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{
    append_results_row, compute_metrics, export_features, features_of, fft_eval_features, knn_eval_features,
    MetricsReport,
};
use crate::loss::{LossConfig, LossMode};
use crate::ndtensor::Checkpoint;
use crate::similarity::{SimilarityConfig, SimilarityKind};
use crate::synthdata::{
    build_split, generate_rotating_sprites, generate_sine1d, write_dataset, Dataset, DatasetManifest, GenConfig,
    SourceKind, SplitPair, SplitRule, GENERATOR_VERSION,
};
use crate::train::{
    predict, pretrain_instance_discrimination, pretrain_simper, train_supervised, LrSchedule, PretrainConfig,
    SupervisedConfig, TrainConfig, TrainOutcome,
};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Simper,
    /// Instance discrimination with in-batch negatives.
    InfonceBaseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simper => "simper",
            Self::InfonceBaseline => "infonce_baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simper" => Ok(Self::Simper),
            "infonce_baseline" => Ok(Self::InfonceBaseline),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Dominant frequency of the learned features.
    Fft,
    /// Label of the most similar labelled training sample.
    Knn,
    /// Encoder plus regression head trained on the labelled samples.
    Finetune,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fft => "fft",
            Self::Knn => "knn",
            Self::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fft" => Ok(Self::Fft),
            "knn" => Ok(Self::Knn),
            "finetune" => Ok(Self::Finetune),
            _ => Err(Error::Config(format!("unknown protocol `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: SourceKind,
    /// Samples generated before splitting.
    pub n: usize,
    pub seed: u64,
    pub generator: GenConfig,
    pub split: SplitRule,
    pub split_seed: u64,
    /// Share of the training side used for training.
    pub data_fraction: f64,
    /// Share of the training set whose labels the label-consuming protocols see.
    pub label_fraction: f64,
    /// Dataset directory written by `gen`; generated in memory when absent.
    pub dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::RotatingSprite,
            n: 400,
            seed: 0,
            generator: GenConfig::default(),
            split: SplitRule::Uniform,
            split_seed: 0,
            data_fraction: 1.0,
            label_fraction: 1.0,
            dir: None,
        }
    }
}

impl DataConfig {
    /// Values per frame of generated samples, and their luminance size.
    fn frame_dims(&self) -> (usize, usize) {
        let pixels = match self.source {
            SourceKind::RotatingSprite => self.generator.canvas * self.generator.canvas,
            SourceKind::Sine1d => 1,
        };
        let channels = if self.split == SplitRule::Spurious { 3 } else { 1 };
        (channels * pixels, pixels)
    }

    fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.n < 2 {
            return Err(Error::Config("data.n must be ≥ 2".into()));
        }
        for (key, f) in [("data_fraction", self.data_fraction), ("label_fraction", self.label_fraction)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("data.{key} must lie in (0, 1], got {f}")));
            }
        }
        if let Some(dir) = &self.dir {
            for side in ["train", "test"] {
                let path = dir.join(side).join(MANIFEST_NAME);
                if !path.is_file() {
                    return Err(Error::io(
                        path,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "dataset manifest not found"),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub speed: SpeedAugConfig,
    pub invariant: InvariantAugConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    pub freeze_encoder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub protocols: Vec<Protocol>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocols: vec![Protocol::Fft, Protocol::Knn],
        }
    }
}

/// Values swept by `ablate`, one list per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub speed_range: Vec<[f64; 2]>,
    pub num_views: Vec<usize>,
    pub similarity: Vec<SimilarityKind>,
    pub loss_mode: Vec<LossMode>,
    pub data_fraction: Vec<f64>,
    pub label_fraction: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            speed_range: vec![[0.5, 2.0], [0.75, 1.5], [0.9, 1.1]],
            num_views: vec![3, 5, 10],
            similarity: SimilarityKind::ALL.to_vec(),
            loss_mode: vec![LossMode::Generalized, LossMode::Infonce],
            data_fraction: vec![1.0, 0.2, 0.05],
            label_fraction: vec![1.0, 0.2, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Run directory relative to the output root; `name` when absent.
    pub output_dir: Option<PathBuf>,
    /// One full run per seed; each seeds training, the data stays fixed.
    pub seeds: Vec<u64>,
    pub method: Method,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub similarity: SimilarityConfig,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            output_dir: None,
            seeds: vec![0, 1, 2],
            method: Method::Simper,
            data: DataConfig::default(),
            augment: AugmentConfig::default(),
            similarity: SimilarityConfig::default(),
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

pub const PRESETS: [&str; 3] = ["reference", "desk", "smoke"];

impl ExperimentConfig {
    /// Named starting points:
    /// * `reference`: 200 train / 200 test sprites, 60 epochs.
    /// * `desk`: the reference schedule on 40 train / 100 test sprites.
    /// * `smoke`: 20 train / 20 test sprites, 3 epochs, one seed.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        match name {
            "reference" => {}
            "desk" => {
                cfg.name = "desk".into();
                cfg.data.n = 200;
                cfg.data.data_fraction = 0.4;
            }
            "smoke" => {
                cfg.name = "smoke".into();
                cfg.seeds = vec![0];
                cfg.data.n = 40;
                cfg.set_epochs(3);
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    /// Sets pretraining and fine-tuning epochs with the schedule shape kept.
    pub fn set_epochs(&mut self, epochs: usize) {
        for t in [&mut self.train, &mut self.finetune.train] {
            t.epochs = epochs;
            t.lr = LrSchedule {
                initial: t.lr.initial,
                factor: t.lr.factor,
                ..LrSchedule::scaled(epochs)
            };
        }
    }

    /// Parses one TOML document strictly, without layering.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Layers `preset` (default `reference`), the file at `path`, and
    /// dotted `key=value` overrides, in that order.
    pub fn load(preset: Option<&str>, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = Self::preset(preset.unwrap_or("reference"))?;
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, file);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(Error::Config(format!("experiment name `{}` must be [A-Za-z0-9._-]+", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.eval.protocols.is_empty() {
            return Err(Error::Config("eval.protocols must not be empty".into()));
        }
        self.data.validate()?;
        self.pretrain_config(0).validate()?;
        self.finetune.train.validate()?;
        if self.method == Method::InfonceBaseline && self.train.batch_size < 2 {
            return Err(Error::Config(
                "infonce_baseline needs train.batch_size ≥ 2 for in-batch negatives".into(),
            ));
        }
        if self.data.dir.is_none() {
            let (full, luminance) = self.data.frame_dims();
            if self.encoder.frame_input_dim != full && self.encoder.frame_input_dim != luminance {
                return Err(Error::Config(format!(
                    "encoder.frame_input_dim = {} but generated frames carry {full} values ({luminance} as luminance)",
                    self.encoder.frame_input_dim
                )));
            }
        }
        Ok(())
    }

    /// Short content hash of the fully resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn experiment_dir(&self, root: &Path) -> PathBuf {
        root.join(self.output_dir.clone().unwrap_or_else(|| PathBuf::from(&self.name)))
    }

    pub fn run_dir(&self, root: &Path, seed: u64) -> PathBuf {
        self.experiment_dir(root).join(format!("seed-{seed}"))
    }

    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            train: TrainConfig {
                seed,
                ..self.train.clone()
            },
            speed: self.augment.speed.clone(),
            invariant: self.augment.invariant.clone(),
            similarity: self.similarity,
            loss: self.loss.clone(),
            encoder: self.encoder.clone(),
            max_signal_hz: Some(self.data.generator.freq_range[1]),
        }
    }

    pub fn supervised_config(&self, seed: u64, encoder: EncoderConfig) -> SupervisedConfig {
        SupervisedConfig {
            train: TrainConfig {
                seed,
                ..self.finetune.train.clone()
            },
            encoder,
            freeze_encoder: self.finetune.freeze_encoder,
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`; the value is read as TOML, or as a bare string
/// when it does not parse.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Generates (or loads the manifests of) the train/test split.
pub fn generate_split(data: &DataConfig) -> Result<SplitPair> {
    if let Some(dir) = &data.dir {
        return Ok(SplitPair {
            train: DatasetManifest::load(&dir.join("train").join(MANIFEST_NAME))?,
            test: DatasetManifest::load(&dir.join("test").join(MANIFEST_NAME))?,
        });
    }
    let all = match data.source {
        SourceKind::RotatingSprite => generate_rotating_sprites(data.n, &data.generator, data.seed)?,
        SourceKind::Sine1d => generate_sine1d(data.n, &data.generator, data.seed)?,
    };
    build_split(&all, data.split, data.split_seed)
}

/// Writes `train/` and `test/` dataset directories under `root`.
pub fn write_split(pair: &mut SplitPair, root: &Path) -> Result<()> {
    write_dataset(&mut pair.train, &root.join("train"), MANIFEST_NAME)?;
    write_dataset(&mut pair.test, &root.join("test"), MANIFEST_NAME)?;
    Ok(())
}

/// In-memory data for one experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    /// The training samples whose labels are visible.
    pub labeled: Dataset,
    pub test: Dataset,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub train_sha256: String,
    pub test_sha256: String,
    pub freq_range: [f64; 2],
}

fn subsample(m: &DatasetManifest, fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if fraction >= 1.0 {
        return Ok(m.clone());
    }
    Ok(build_split(m, SplitRule::Subsample { fraction }, seed)?.train)
}

fn restrict(data: &Dataset, keep: &DatasetManifest) -> Dataset {
    let ids: std::collections::BTreeSet<&str> = keep.entries.iter().map(|e| e.spec.id.as_str()).collect();
    Dataset {
        items: data
            .items
            .iter()
            .filter(|s| ids.contains(s.spec.id.as_str()))
            .cloned()
            .collect(),
    }
}

pub fn prepare_data(data: &DataConfig) -> Result<PreparedData> {
    let pair = generate_split(data)?;
    let train_m = subsample(&pair.train, data.data_fraction, data.split_seed)?;
    let labeled_m = subsample(&train_m, data.label_fraction, data.split_seed.wrapping_add(1))?;
    if train_m.is_empty() || labeled_m.is_empty() || pair.test.is_empty() {
        return Err(Error::Config(format!(
            "empty data: {} train, {} labelled, {} test samples",
            train_m.len(),
            labeled_m.len(),
            pair.test.len()
        )));
    }
    let (train, test) = match &data.dir {
        Some(dir) => (
            train_m.load_samples(&dir.join("train"))?,
            pair.test.load_samples(&dir.join("test"))?,
        ),
        None => (train_m.render_all()?, pair.test.render_all()?),
    };
    let ids = |m: &DatasetManifest| m.entries.iter().map(|e| e.spec.id.clone()).collect();
    Ok(PreparedData {
        labeled: restrict(&train, &labeled_m),
        train,
        test,
        train_ids: ids(&train_m),
        test_ids: ids(&pair.test),
        train_sha256: train_m.checksum(),
        test_sha256: pair.test.checksum(),
        freq_range: pair.train.freq_range,
    })
}

/// What produced a checkpoint, with the exact configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub experiment: String,
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub train_manifest_sha256: String,
    pub test_manifest_sha256: String,
    pub generator: String,
    pub version: String,
    pub config: ExperimentConfig,
}

impl Provenance {
    pub fn new(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Self {
        Self {
            experiment: cfg.name.clone(),
            method: cfg.method,
            seed,
            config_hash: cfg.hash(),
            train_manifest_sha256: data.train_sha256.clone(),
            test_manifest_sha256: data.test_sha256.clone(),
            generator: GENERATOR_VERSION.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("provenance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::Data(format!("provenance: {e}")))?;
        if p.config.hash() != p.config_hash {
            return Err(Error::Data(format!(
                "provenance config hashes to {}, record says {}",
                p.config.hash(),
                p.config_hash
            )));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn tag_checkpoint(ckpt: &mut Checkpoint, cfg: &ExperimentConfig, data: &PreparedData) {
    ckpt.meta.insert("experiment".into(), cfg.name.clone());
    ckpt.meta.insert("config_hash".into(), cfg.hash());
    ckpt.meta.insert("data.train_sha256".into(), data.train_sha256.clone());
}

/// Runs the configured pretraining method for one seed.
pub fn pretrain(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<TrainOutcome> {
    let pcfg = cfg.pretrain_config(seed);
    let mut out = match cfg.method {
        Method::Simper => pretrain_simper(&data.train, &pcfg)?,
        Method::InfonceBaseline => pretrain_instance_discrimination(&data.train, &pcfg)?,
    };
    tag_checkpoint(&mut out.checkpoint, cfg, data);
    Ok(out)
}

fn tag_report(report: &mut MetricsReport, cfg: &ExperimentConfig, seed: u64, method: &str) {
    report.tags.insert("experiment".into(), cfg.name.clone());
    report.tags.insert("config_hash".into(), cfg.hash());
    report.tags.insert("seed".into(), seed.to_string());
    report.tags.insert("method".into(), method.into());
}

/// Trains a regression head (and, unless frozen, the encoder) on the
/// labelled samples, starting from `init` or from scratch, and scores it on
/// the test set.
pub fn finetune(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    init: Option<&Checkpoint>,
    seed: u64,
) -> Result<(TrainOutcome, MetricsReport)> {
    let encoder = match init {
        Some(c) => EncoderConfig::from_meta(&c.meta)?,
        None => cfg.encoder.clone(),
    };
    let scfg = cfg.supervised_config(seed, encoder);
    let mut out = train_supervised(&data.labeled, &scfg, init)?;
    tag_checkpoint(&mut out.checkpoint, cfg, data);
    let preds = predict(&data.test.frames(), &out.checkpoint.params, &scfg.encoder)?;
    let labels = data.test.labels();
    let mut report = MetricsReport {
        protocol: Protocol::Finetune.name().into(),
        metrics: compute_metrics(&labels, &preds)?,
        degenerate: 0,
        predictions: preds,
        tags: BTreeMap::new(),
    };
    let method = out.checkpoint.meta.get("method").cloned().unwrap_or_default();
    tag_report(&mut report, cfg, seed, &method);
    Ok((out, report))
}

/// Scores a pretrained checkpoint with one protocol. `export` receives the
/// test-set feature table when given.
pub fn evaluate(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    data: &PreparedData,
    protocol: Protocol,
    seed: u64,
    export: Option<&Path>,
) -> Result<MetricsReport> {
    let encoder = EncoderConfig::from_meta(&ckpt.meta)?;
    let needs_test_features = export.is_some() || protocol != Protocol::Finetune;
    let test_features = if needs_test_features {
        Some(features_of(&data.test, &ckpt.params, &encoder)?)
    } else {
        None
    };
    if let (Some(path), Some(z)) = (export, &test_features) {
        export_features(&data.test_ids, &data.test.labels(), z, path)?;
    }
    let mut report = match protocol {
        Protocol::Fft => fft_eval_features(
            test_features.as_deref().expect("computed above"),
            &data.test.labels(),
            data.freq_range,
        )?,
        Protocol::Knn => knn_eval_features(
            &features_of(&data.labeled, &ckpt.params, &encoder)?,
            &data.labeled.labels(),
            test_features.as_deref().expect("computed above"),
            &data.test.labels(),
            cfg.similarity,
            data.freq_range,
        )?,
        Protocol::Finetune => return Ok(finetune(cfg, data, Some(ckpt), seed)?.1),
    };
    let method = ckpt.meta.get("method").cloned().unwrap_or_default();
    tag_report(&mut report, cfg, seed, &method);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    SpeedRange,
    NumViews,
    Similarity,
    LossMode,
    DataFraction,
    LabelFraction,
}

impl AblationAxis {
    pub const ALL: [Self; 6] = [
        Self::SpeedRange,
        Self::NumViews,
        Self::Similarity,
        Self::LossMode,
        Self::DataFraction,
        Self::LabelFraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SpeedRange => "speed_range",
            Self::NumViews => "num_views",
            Self::Similarity => "similarity",
            Self::LossMode => "loss_mode",
            Self::DataFraction => "data_fraction",
            Self::LabelFraction => "label_fraction",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis `{s}`")))
    }
}

/// One configuration per value listed for `axis`, labelled by that value.
pub fn ablation_points(cfg: &ExperimentConfig, axis: AblationAxis) -> Result<Vec<(String, ExperimentConfig)>> {
    let a = &cfg.ablation;
    let vary = |label: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        (label, c)
    };
    let points: Vec<(String, ExperimentConfig)> = match axis {
        AblationAxis::SpeedRange => a
            .speed_range
            .iter()
            .map(|&[lo, hi]| {
                vary(format!("{lo}:{hi}"), &|c| {
                    c.augment.speed.s_min = lo;
                    c.augment.speed.s_max = hi;
                })
            })
            .collect(),
        AblationAxis::NumViews => a
            .num_views
            .iter()
            .map(|&m| vary(m.to_string(), &|c| c.augment.speed.num_views = m))
            .collect(),
        AblationAxis::Similarity => a
            .similarity
            .iter()
            .map(|&k| vary(k.name().into(), &|c| c.similarity.kind = k))
            .collect(),
        AblationAxis::LossMode => a
            .loss_mode
            .iter()
            .map(|&m| vary(m.name().into(), &|c| c.loss.mode = m))
            .collect(),
        AblationAxis::DataFraction => a
            .data_fraction
            .iter()
            .map(|&f| vary(f.to_string(), &|c| c.data.data_fraction = f))
            .collect(),
        AblationAxis::LabelFraction => a
            .label_fraction
            .iter()
            .map(|&f| vary(f.to_string(), &|c| c.data.label_fraction = f))
            .collect(),
    };
    if points.is_empty() {
        return Err(Error::Config(format!("ablation.{} lists no values", axis.name())));
    }
    Ok(points)
}

/// Pretrains and evaluates one grid point, returning one row per protocol.
fn ablation_rows(cfg: &ExperimentConfig, value: &str, seed: u64, data: &Result<PreparedData>) -> Vec<String> {
    let run = || -> Result<Vec<Result<MetricsReport>>> {
        cfg.validate()?;
        let data = data.as_ref().map_err(|e| Error::Config(e.to_string()))?;
        let out = pretrain(cfg, data, seed)?;
        Ok(cfg
            .eval
            .protocols
            .iter()
            .map(|&p| evaluate(cfg, &out.checkpoint, data, p, seed, None))
            .collect())
    };
    let results = match run() {
        Ok(r) => r,
        Err(e) => cfg.eval.protocols.iter().map(|_| Err(Error::Config(e.to_string()))).collect(),
    };
    cfg.eval
        .protocols
        .iter()
        .zip(results)
        .map(|(p, r)| match r {
            Ok(mut report) => {
                report.tags.insert("value".into(), value.into());
                report.csv_row()
            }
            Err(e) => MetricsReport::failure_row(&cfg.name, p.name(), seed, &cfg.hash(), value, &e.to_string()),
        })
        .collect()
}

/// Runs every (value, seed) grid point and appends one results row per
/// protocol to `csv`. Failures become rows and the sweep continues. With
/// `jobs > 1` grid points run concurrently; rows are written in grid order.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    axis: AblationAxis,
    csv: &Path,
    jobs: usize,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<usize> {
    let points = ablation_points(cfg, axis)?;
    let mut data_cache: BTreeMap<String, usize> = BTreeMap::new();
    let mut datasets = Vec::new();
    let mut data_of = Vec::new();
    for (_, c) in &points {
        let key = serde_json::to_string(&c.data).expect("data config serializes");
        let idx = *data_cache.entry(key).or_insert_with(|| {
            datasets.push(prepare_data(&c.data));
            datasets.len() - 1
        });
        data_of.push(idx);
    }
    let grid: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Mutex<Vec<Option<Vec<String>>>> = Mutex::new(vec![None; grid.len()]);
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(p, seed)) = grid.get(i) else { break };
        let (value, c) = &points[p];
        progress(&format!("{}={value} seed {seed}", axis.name()));
        let rows = ablation_rows(c, value, seed, &datasets[data_of[p]]);
        results.lock().expect("no worker panics while holding the lock")[i] = Some(rows);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1) {
            s.spawn(worker);
        }
        worker();
    });
    let mut count = 0;
    for rows in results.into_inner().expect("workers finished").into_iter().flatten() {
        for row in rows {
            append_results_row(csv, &row)?;
            count += 1;
        }
    }
    Ok(count)
}
