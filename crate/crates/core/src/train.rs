//! Optimizer and training procedures: periodicity-aware contrastive
//! pretraining, the instance-discrimination baseline, and supervised
//! regression (from scratch, fine-tuned, or head-only).

use serde::{Deserialize, Serialize};

use crate::augment::{invariant_view, make_training_views, InvariantAugConfig, SpeedAugConfig};
use crate::encoder::{
    encode_batch_with_raw, encode_on_tape, head_predictions, init_head, init_params, EncoderConfig, EncoderVars,
    HEAD_BIAS, HEAD_WEIGHT,
};
use crate::error::{Error, Result};
use crate::frames::FrameSeq;
use crate::loss::{instance_discrimination_loss, simper_loss, LossConfig};
use crate::ndtensor::{BackwardRule, Checkpoint, ParamStore, Tape, Tensor, Var};
use crate::rng::{stream_seed, SplitMix64};
use crate::similarity::{cosine_similarity_matrix, similarity_matrix, SimilarityConfig};
use crate::synthdata::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub initial: f64,
    /// Epochs (0-based) at whose start the rate is multiplied by `factor`.
    pub decay_epochs: Vec<usize>,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            decay_epochs: vec![40, 50],
            factor: 0.1,
        }
    }
}

impl LrSchedule {
    /// The default schedule shape (decays at 2/3 and 5/6 of the run)
    /// stretched to `epochs`.
    pub fn scaled(epochs: usize) -> Self {
        let at = |num: usize, den: usize| (epochs * num + den / 2) / den;
        Self {
            decay_epochs: vec![at(2, 3), at(5, 6)],
            ..Self::default()
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        self.decay_epochs
            .iter()
            .filter(|&&e| e <= epoch)
            .fold(self.initial, |lr, _| lr * self.factor)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite() && self.factor > 0.0) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.values().iter().map(|t| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored in `params`. Parameters
    /// rejected by `trainable` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64, trainable: impl Fn(&str) -> bool) -> Result<()> {
        let (names, values, grads) = params.split_mut();
        if values.len() != self.m.len() {
            return Err(Error::Dimension("optimizer state does not match the parameters".into()));
        }
        for (name, g) in names.iter().zip(grads.iter()) {
            if !g.all_finite() {
                return Err(Error::Divergence(format!("non-finite gradient in `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (i, name) in names.iter().enumerate() {
            if !trainable(name) {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((p, g), m), v) in values[i].data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: LrSchedule,
    /// Gradient-norm ceiling; exceeding it aborts with a divergence error.
    pub max_grad_norm: f64,
    /// Fraction of degenerate views in a batch above which training aborts.
    pub max_degenerate_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 8,
            seed: 0,
            lr: LrSchedule::default(),
            max_grad_norm: 1e4,
            max_degenerate_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.max_grad_norm > 0.0) || !(0.0..=1.0).contains(&self.max_degenerate_fraction) {
            return Err(Error::Config("bad divergence-guard thresholds".into()));
        }
        self.lr.validate()
    }
}

/// Everything contrastive pretraining needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainConfig {
    pub train: TrainConfig,
    pub speed: SpeedAugConfig,
    pub invariant: InvariantAugConfig,
    pub similarity: SimilarityConfig,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    /// Highest signal frequency in the data, for the resampling Nyquist guard.
    pub max_signal_hz: Option<f64>,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.speed.validate()?;
        self.invariant.validate()?;
        self.loss.validate()?;
        self.encoder.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub degenerate_views: usize,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// `epoch,mean_loss,lr` rows with a header.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,lr,degenerate_views,max_grad_norm\n");
        for r in &self.curve {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.mean_loss, r.lr, r.degenerate_views, r.max_grad_norm
            ));
        }
        out
    }
}

fn check_dataset(data: &Dataset, cfg: &EncoderConfig) -> Result<()> {
    let first = data
        .items
        .first()
        .ok_or_else(|| Error::Data("training set is empty".into()))?;
    let dim = first.frames.frame_dim();
    let luminance = first.frames.height() * first.frames.width();
    if dim != cfg.frame_input_dim && luminance != cfg.frame_input_dim {
        return Err(Error::Config(format!(
            "encoder expects {} values per frame, data has {dim}",
            cfg.frame_input_dim
        )));
    }
    Ok(())
}

fn batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::keyed(seed, u64::MAX, epoch as u64, 0).shuffle(&mut order);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Shared per-batch bookkeeping: gradient guard and one optimizer step.
fn apply_batch(
    params: &mut ParamStore,
    adam: &mut Adam,
    cfg: &TrainConfig,
    lr: f64,
    trainable: impl Fn(&str) -> bool,
) -> Result<f64> {
    let norm = params.grad_norm();
    if !norm.is_finite() || norm > cfg.max_grad_norm {
        return Err(Error::Divergence(format!(
            "gradient norm {norm} exceeds the {} ceiling",
            cfg.max_grad_norm
        )));
    }
    adam.step(params, lr, trainable)?;
    params.zero_grads();
    Ok(norm)
}

fn base_meta(ckpt: &mut Checkpoint, method: &str, encoder: &EncoderConfig, train: &TrainConfig) {
    ckpt.meta.insert("method".into(), method.into());
    ckpt.meta.insert("train.seed".into(), train.seed.to_string());
    ckpt.meta.insert("train.epochs".into(), train.epochs.to_string());
    encoder.to_meta(&mut ckpt.meta);
}

/// Loss for one sample: variant views, two invariant passes, encode all
/// `2M` views, and the generalized contrastive loss between the passes.
/// Gradients are accumulated into `params` with weight `scale`.
fn simper_sample(
    x: &FrameSeq,
    params: &mut ParamStore,
    cfg: &PretrainConfig,
    rng_seed: u64,
    scale: f64,
) -> Result<(f64, usize)> {
    let views = make_training_views(x, &cfg.speed, &cfg.invariant, rng_seed, cfg.max_signal_hz)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let ev = EncoderVars::new(params, &vars, &cfg.encoder)?;
    let a: Vec<&FrameSeq> = views.a.views.iter().collect();
    let b: Vec<&FrameSeq> = views.b.views.iter().collect();
    let ea = encode_on_tape(&mut tape, &ev, &a, &cfg.encoder)?;
    let eb = encode_on_tape(&mut tape, &ev, &b, &cfg.encoder)?;
    let (sim, diag) = similarity_matrix(&mut tape, ea.features, eb.features, ea.len, cfg.similarity)?;
    let width = cfg.speed.s_max - cfg.speed.s_min;
    let loss = simper_loss(
        &mut tape,
        sim,
        views.speeds(),
        cfg.loss.kernel(width),
        cfg.loss.temperature,
    )?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {value}")));
    }
    tape.backward(loss)?;
    params.accumulate_grads(&tape, &vars, scale);
    Ok((value, diag.degenerate_a + diag.degenerate_b))
}

/// Contrastive pretraining with intra-sample negatives: every step averages
/// per-sample losses over a batch, then takes one optimizer step.
pub fn pretrain_simper(data: &Dataset, cfg: &PretrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(data, &cfg.encoder)?;
    for s in &data.items {
        cfg.speed.check_length(s.frames.frames())?;
    }
    let mut params = init_params(&cfg.encoder, cfg.train.seed)?;
    let mut adam = Adam::new(&params);
    let mut curve = Vec::with_capacity(cfg.train.epochs);
    let views_per_sample = 2 * cfg.speed.num_views;
    for epoch in 0..cfg.train.epochs {
        let lr = cfg.train.lr.at(epoch);
        let (mut total, mut degenerate, mut peak_norm) = (0.0, 0, 0.0f64);
        for batch in batches(data.len(), cfg.train.batch_size, cfg.train.seed, epoch) {
            let scale = 1.0 / batch.len() as f64;
            let mut batch_degenerate = 0;
            for &i in &batch {
                let seed = stream_seed(cfg.train.seed, i as u64, epoch as u64, 0);
                let (loss, deg) = simper_sample(&data.items[i].frames, &mut params, cfg, seed, scale)?;
                total += loss;
                batch_degenerate += deg;
            }
            let fraction = batch_degenerate as f64 / (batch.len() * views_per_sample) as f64;
            if fraction > cfg.train.max_degenerate_fraction {
                return Err(Error::DegenerateSignal(format!(
                    "{:.0}% of views in an epoch-{epoch} batch have collapsed features",
                    100.0 * fraction
                )));
            }
            degenerate += batch_degenerate;
            peak_norm = peak_norm.max(apply_batch(&mut params, &mut adam, &cfg.train, lr, |_| true)?);
        }
        curve.push(EpochRecord {
            epoch,
            mean_loss: total / data.len() as f64,
            lr,
            degenerate_views: degenerate,
            max_grad_norm: peak_norm,
        });
    }
    let mut checkpoint = Checkpoint::new(params);
    base_meta(&mut checkpoint, "simper", &cfg.encoder, &cfg.train);
    checkpoint.meta.insert("similarity".into(), cfg.similarity.kind.name().into());
    checkpoint.meta.insert("loss.mode".into(), cfg.loss.mode.name().into());
    Ok(TrainOutcome { checkpoint, curve })
}

/// A frequency-preserving training view: a random temporal crop of
/// `crop_len` frames followed by the invariant augmentations.
fn instance_view(x: &FrameSeq, crop_len: usize, inv: &InvariantAugConfig, seed: u64) -> Result<FrameSeq> {
    let crop_len = crop_len.min(x.frames());
    let start = SplitMix64::new(seed).below((x.frames() - crop_len + 1) as u64) as usize;
    invariant_view(&x.window(start, crop_len)?, inv, stream_seed(seed, 0, 0, 1))
}

/// Instance-discrimination baseline: two invariant views per instance, cosine
/// similarity of time-flattened features, in-batch negatives.
pub fn pretrain_instance_discrimination(data: &Dataset, cfg: &PretrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.train.batch_size < 2 {
        return Err(Error::Config(
            "instance discrimination needs batch_size ≥ 2 for in-batch negatives".into(),
        ));
    }
    check_dataset(data, &cfg.encoder)?;
    let crop = cfg.speed.target_len;
    let mut params = init_params(&cfg.encoder, cfg.train.seed)?;
    let mut adam = Adam::new(&params);
    let mut curve = Vec::with_capacity(cfg.train.epochs);
    let c = cfg.encoder.feature_channels;
    for epoch in 0..cfg.train.epochs {
        let lr = cfg.train.lr.at(epoch);
        let (mut total, mut peak_norm, mut counted) = (0.0, 0.0f64, 0usize);
        for batch in batches(data.len(), cfg.train.batch_size, cfg.train.seed, epoch) {
            // a trailing singleton batch has no negatives
            if batch.len() < 2 {
                continue;
            }
            let mut views = Vec::with_capacity(2 * batch.len());
            for &i in &batch {
                for pass in 0..2 {
                    let seed = stream_seed(cfg.train.seed, i as u64, epoch as u64, pass + 1);
                    views.push(instance_view(&data.items[i].frames, crop, &cfg.invariant, seed)?);
                }
            }
            let refs: Vec<&FrameSeq> = views.iter().collect();
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let ev = EncoderVars::new(&params, &vars, &cfg.encoder)?;
            let enc = encode_on_tape(&mut tape, &ev, &refs, &cfg.encoder)?;
            let flat = tape.reshape(enc.features, vec![enc.count, enc.len * c])?;
            let sim = cosine_similarity_matrix(&mut tape, flat)?;
            let loss = instance_discrimination_loss(&mut tape, sim, cfg.loss.temperature)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss {value}")));
            }
            tape.backward(loss)?;
            params.accumulate_grads(&tape, &vars, 1.0);
            total += value * batch.len() as f64;
            counted += batch.len();
            peak_norm = peak_norm.max(apply_batch(&mut params, &mut adam, &cfg.train, lr, |_| true)?);
        }
        curve.push(EpochRecord {
            epoch,
            mean_loss: total / counted.max(1) as f64,
            lr,
            degenerate_views: 0,
            max_grad_norm: peak_norm,
        });
    }
    let mut checkpoint = Checkpoint::new(params);
    base_meta(&mut checkpoint, "instance_discrimination", &cfg.encoder, &cfg.train);
    Ok(TrainOutcome { checkpoint, curve })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SupervisedConfig {
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    /// Train only the regression head on top of a fixed encoder.
    pub freeze_encoder: bool,
}

/// `mean |p − y|` over a `N × 1` prediction column.
struct L1Rule {
    targets: Vec<f64>,
}

impl BackwardRule for L1Rule {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.item() / self.targets.len() as f64;
        let p = inputs[0];
        let d = p
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(p, y)| g * (p - y).signum() * f64::from(u8::from(p != y)))
            .collect();
        vec![Some(Tensor::new(p.shape().to_vec(), d).expect("shape"))]
    }
}

fn l1_loss(tape: &mut Tape, pred: Var, targets: &[f64]) -> Result<Var> {
    let p = tape.value(pred);
    if p.len() != targets.len() {
        return Err(Error::Dimension(format!("{} predictions for {} targets", p.len(), targets.len())));
    }
    let value = p.data().iter().zip(targets).map(|(p, y)| (p - y).abs()).sum::<f64>() / targets.len() as f64;
    Ok(tape.custom(
        &[pred],
        Tensor::scalar(value),
        Box::new(L1Rule {
            targets: targets.to_vec(),
        }),
    ))
}

fn is_head(name: &str) -> bool {
    name == HEAD_WEIGHT || name == HEAD_BIAS
}

/// Fits `y ≈ x·w + b` under the L1 loss with Adam, from pooled features
/// `x` (`N × C`). Returns the fitted `(w, b)` and the final train MAE.
pub fn fit_linear_head(x: &Tensor, y: &[f64], cfg: &TrainConfig) -> Result<(Tensor, f64, f64)> {
    cfg.validate()?;
    let (n, c) = (x.rows(), x.cols());
    if n != y.len() || n == 0 {
        return Err(Error::Config(format!("{n} feature rows for {} labels", y.len())));
    }
    let mut params = ParamStore::new();
    params.insert(HEAD_WEIGHT, Tensor::zeros(&[c, 1]));
    params.insert(HEAD_BIAS, Tensor::filled(&[1, 1], y.iter().sum::<f64>() / n as f64));
    let mut adam = Adam::new(&params);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch);
        for batch in batches(n, cfg.batch_size, cfg.seed, epoch) {
            let rows: Vec<f64> = batch.iter().flat_map(|&i| x.data()[i * c..(i + 1) * c].to_vec()).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let xb = tape.constant(Tensor::matrix(batch.len(), c, rows)?);
            let ones = tape.constant(Tensor::ones(&[batch.len(), 1]));
            let xw = tape.matmul(xb, vars[0])?;
            let bias = tape.matmul(ones, vars[1])?;
            let pred = tape.add(xw, bias)?;
            let loss = l1_loss(&mut tape, pred, &targets)?;
            tape.backward(loss)?;
            params.accumulate_grads(&tape, &vars, 1.0);
            apply_batch(&mut params, &mut adam, cfg, lr, |_| true)?;
        }
    }
    let (w, b) = (params.values()[0].clone(), params.values()[1].item());
    let mae = (0..n)
        .map(|i| {
            let p: f64 = (0..c).map(|j| x.data()[i * c + j] * w.data()[j]).sum::<f64>() + b;
            (p - y[i]).abs()
        })
        .sum::<f64>()
        / n as f64;
    Ok((w, b, mae))
}

/// Temporal means of the pre-centering encoder features, `N × C`.
pub fn pooled_features(seqs: &[&FrameSeq], params: &ParamStore, cfg: &EncoderConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.values().iter().map(|v| tape.constant(v.clone())).collect();
    let ev = EncoderVars::new(params, &vars, cfg)?;
    let c = cfg.feature_channels;
    let mut out = Vec::with_capacity(seqs.len() * c);
    for s in seqs {
        let enc = encode_on_tape(&mut tape, &ev, &[*s], cfg)?;
        let raw = tape.value(enc.raw).data();
        for ch in 0..c {
            out.push((0..enc.len).map(|t| raw[t * c + ch]).sum::<f64>() / enc.len as f64);
        }
    }
    Tensor::matrix(seqs.len(), c, out)
}

/// Encoder plus regression head under the L1 loss. `init` supplies
/// pretrained encoder weights; without it the encoder starts from random
/// weights (the supervised baseline).
pub fn train_supervised(data: &Dataset, cfg: &SupervisedConfig, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    cfg.train.validate()?;
    cfg.encoder.validate()?;
    check_dataset(data, &cfg.encoder)?;
    let labels = data.labels();
    if labels.iter().any(|y| !y.is_finite()) {
        return Err(Error::Config("training labels must be finite".into()));
    }
    let mut params = match init {
        Some(ckpt) => {
            let mut p = ParamStore::new();
            for (name, value) in ckpt.params.names().iter().zip(ckpt.params.values()) {
                if !is_head(name) {
                    p.insert(name.clone(), value.clone());
                }
            }
            p
        }
        None => init_params(&cfg.encoder, cfg.train.seed)?,
    };
    init_head(&mut params, &cfg.encoder, stream_seed(cfg.train.seed, 0, 0, 7));
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let (wi, bi) = (
        params.index_of(HEAD_WEIGHT).expect("head"),
        params.index_of(HEAD_BIAS).expect("head"),
    );
    params.values_mut()[bi] = Tensor::filled(&[1, 1], mean);
    let frames = data.frames();
    let mut curve = Vec::with_capacity(cfg.train.epochs);

    if cfg.freeze_encoder {
        let pooled = pooled_features(&frames, &params, &cfg.encoder)?;
        let (w, b, mae) = fit_linear_head(&pooled, &labels, &cfg.train)?;
        params.values_mut()[wi] = w;
        params.values_mut()[bi] = Tensor::filled(&[1, 1], b);
        curve.push(EpochRecord {
            epoch: cfg.train.epochs - 1,
            mean_loss: mae,
            lr: cfg.train.lr.at(cfg.train.epochs - 1),
            degenerate_views: 0,
            max_grad_norm: 0.0,
        });
    } else {
        let mut adam = Adam::new(&params);
        for epoch in 0..cfg.train.epochs {
            let lr = cfg.train.lr.at(epoch);
            let (mut total, mut peak_norm) = (0.0, 0.0f64);
            for batch in batches(data.len(), cfg.train.batch_size, cfg.train.seed, epoch) {
                let seqs: Vec<&FrameSeq> = batch.iter().map(|&i| frames[i]).collect();
                let targets: Vec<f64> = batch.iter().map(|&i| labels[i]).collect();
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape);
                let ev = EncoderVars::new(&params, &vars, &cfg.encoder)?;
                let enc = encode_on_tape(&mut tape, &ev, &seqs, &cfg.encoder)?;
                let pred = head_predictions(&mut tape, &ev, &enc)?;
                let loss = l1_loss(&mut tape, pred, &targets)?;
                total += tape.value(loss).item() * batch.len() as f64;
                tape.backward(loss)?;
                params.accumulate_grads(&tape, &vars, 1.0);
                peak_norm = peak_norm.max(apply_batch(&mut params, &mut adam, &cfg.train, lr, |_| true)?);
            }
            curve.push(EpochRecord {
                epoch,
                mean_loss: total / data.len() as f64,
                lr,
                degenerate_views: 0,
                max_grad_norm: peak_norm,
            });
        }
    }
    let mut checkpoint = Checkpoint::new(params);
    let method = match (init.is_some(), cfg.freeze_encoder) {
        (_, true) => "linear_head",
        (true, false) => "finetune",
        (false, false) => "supervised",
    };
    base_meta(&mut checkpoint, method, &cfg.encoder, &cfg.train);
    Ok(TrainOutcome { checkpoint, curve })
}

/// Head predictions of a trained regression checkpoint.
pub fn predict(seqs: &[&FrameSeq], params: &ParamStore, cfg: &EncoderConfig) -> Result<Vec<f64>> {
    let (_, preds) = encode_batch_with_raw(seqs, params, cfg)?;
    preds.ok_or_else(|| Error::Data("checkpoint has no regression head".into()))
}
