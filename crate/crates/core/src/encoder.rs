//! Frame-wise encoder: each output step sees a window of `k` frames
//! (edge-replicated), flattened and passed through a tanh MLP to `C`
//! channels. Outputs are centered per channel over time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameSeq;
use crate::ndtensor::{BackwardRule, ParamStore, Tape, Tensor, Var};
use crate::rng::SplitMix64;
use crate::similarity::FeatureSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Values per input frame (`channels · H · W`).
    pub frame_input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_channels: usize,
    pub temporal_context: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frame_input_dim: 256,
            hidden_dims: vec![24],
            feature_channels: 4,
            temporal_context: 3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temporal_context % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal_context must be odd, got {}",
                self.temporal_context
            )));
        }
        if self.feature_channels == 0 || self.frame_input_dim == 0 {
            return Err(Error::Config("feature_channels and frame_input_dim must be ≥ 1".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn window_dim(&self) -> usize {
        self.temporal_context * self.frame_input_dim
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut fan_in = self.window_dim();
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.feature_channels));
        dims
    }

    /// Writes the architecture into checkpoint metadata.
    pub fn to_meta(&self, meta: &mut std::collections::BTreeMap<String, String>) {
        meta.insert("encoder.frame_input_dim".into(), self.frame_input_dim.to_string());
        let hidden: Vec<String> = self.hidden_dims.iter().map(|h| h.to_string()).collect();
        meta.insert("encoder.hidden_dims".into(), hidden.join(","));
        meta.insert("encoder.feature_channels".into(), self.feature_channels.to_string());
        meta.insert("encoder.temporal_context".into(), self.temporal_context.to_string());
    }

    pub fn from_meta(meta: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| -> Result<&String> {
            meta.get(k)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("checkpoint field `{k}` is not a count")))
        };
        let hidden_dims = get("encoder.hidden_dims")?
            .split(',')
            .map(|h| h.parse().map_err(|_| Error::Data(format!("bad hidden dim `{h}`"))))
            .collect::<Result<_>>()?;
        let cfg = Self {
            frame_input_dim: num("encoder.frame_input_dim")?,
            hidden_dims,
            feature_channels: num("encoder.feature_channels")?,
            temporal_context: num("encoder.temporal_context")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("layer{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

fn glorot(fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("shape")
}

/// Glorot-uniform weights and zero biases.
pub fn init_params(cfg: &EncoderConfig, rng_seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(rng_seed);
    let mut params = ParamStore::new();
    for (l, (fan_in, fan_out)) in cfg.layer_dims().into_iter().enumerate() {
        params.insert(weight_name(l), glorot(fan_in, fan_out, &mut rng));
        params.insert(bias_name(l), Tensor::zeros(&[1, fan_out]));
    }
    Ok(params)
}

/// Adds the scalar regression head (`C → 1`) used by supervised training.
pub fn init_head(params: &mut ParamStore, cfg: &EncoderConfig, rng_seed: u64) {
    let mut rng = SplitMix64::new(rng_seed ^ 0x6865_6164);
    params.insert(HEAD_WEIGHT, glorot(cfg.feature_channels, 1, &mut rng));
    params.insert(HEAD_BIAS, Tensor::zeros(&[1, 1]));
}

/// Frames in the layout the encoder expects: multi-channel input is reduced
/// to luminance when the encoder was built for a single channel.
fn adapt<'a>(x: &'a FrameSeq, cfg: &EncoderConfig) -> Result<std::borrow::Cow<'a, FrameSeq>> {
    if x.frame_dim() == cfg.frame_input_dim {
        return Ok(std::borrow::Cow::Borrowed(x));
    }
    if x.channels() > 1 && x.height() * x.width() == cfg.frame_input_dim {
        return Ok(std::borrow::Cow::Owned(x.luminance()));
    }
    Err(Error::Dimension(format!(
        "frames of {}×{}×{} do not match an encoder input of {}",
        x.channels(),
        x.height(),
        x.width(),
        cfg.frame_input_dim
    )))
}

/// Row `t` of block `i` holds frames `t-h ..= t+h` of sequence `i`, with
/// indices clamped to the sequence.
pub fn window_matrix(seqs: &[&FrameSeq], cfg: &EncoderConfig) -> Result<(Tensor, usize)> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Dimension("no sequences to encode".into()))?;
    let len = first.frames();
    if len == 0 {
        return Err(Error::Dimension("empty sequence".into()));
    }
    let k = cfg.temporal_context;
    let h = (k / 2) as isize;
    let d = cfg.frame_input_dim;
    let mut data = Vec::with_capacity(seqs.len() * len * k * d);
    for s in seqs {
        if s.frames() != len {
            return Err(Error::Dimension(format!(
                "sequences in one batch must share a length ({} vs {len})",
                s.frames()
            )));
        }
        let s = adapt(s, cfg)?;
        for t in 0..len as isize {
            for o in -h..=h {
                let src = (t + o).clamp(0, len as isize - 1) as usize;
                data.extend_from_slice(s.frame(src));
            }
        }
    }
    Ok((Tensor::matrix(seqs.len() * len, k * d, data)?, len))
}

/// Parameter handles of one encoder on a tape.
pub struct EncoderVars {
    layers: Vec<(Var, Var)>,
    head: Option<(Var, Var)>,
}

impl EncoderVars {
    /// Looks the encoder parameters up in `vars` (as returned by binding `params`).
    pub fn new(params: &ParamStore, vars: &[Var], cfg: &EncoderConfig) -> Result<Self> {
        let find = |name: &str| -> Result<Var> {
            params
                .index_of(name)
                .map(|i| vars[i])
                .ok_or_else(|| Error::Data(format!("parameter `{name}` missing")))
        };
        let layers = (0..cfg.layer_dims().len())
            .map(|l| Ok((find(&weight_name(l))?, find(&bias_name(l))?)))
            .collect::<Result<_>>()?;
        let head = match (find(HEAD_WEIGHT), find(HEAD_BIAS)) {
            (Ok(w), Ok(b)) => Some((w, b)),
            _ => None,
        };
        Ok(Self { layers, head })
    }

    pub fn head(&self) -> Option<(Var, Var)> {
        self.head
    }
}

/// `x·W + 1·b` without broadcasting.
fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let rows = tape.value(x).rows();
    let ones = tape.constant(Tensor::ones(&[rows, 1]));
    let xw = tape.matmul(x, w)?;
    let bias = tape.matmul(ones, b)?;
    tape.add(xw, bias)
}

/// Encoder outputs on a tape.
pub struct Encoded {
    /// Centered features, `(count·len) × C`.
    pub features: Var,
    /// Features before centering.
    pub raw: Var,
    pub len: usize,
    pub count: usize,
}

pub fn encode_windows(tape: &mut Tape, vars: &EncoderVars, windows: Tensor, len: usize) -> Result<Encoded> {
    let count = windows.rows() / len;
    let mut x = tape.constant(windows);
    let last = vars.layers.len() - 1;
    for (l, &(w, b)) in vars.layers.iter().enumerate() {
        x = affine(tape, x, w, b)?;
        if l < last {
            x = tape.tanh(x);
        }
    }
    let raw = x;
    let value = center_blocks(tape.value(raw), len);
    let features = tape.custom(&[raw], value, Box::new(CenterBlocks { len }));
    Ok(Encoded {
        features,
        raw,
        len,
        count,
    })
}

/// Encodes `seqs` (all of one length) on a tape.
pub fn encode_on_tape(tape: &mut Tape, vars: &EncoderVars, seqs: &[&FrameSeq], cfg: &EncoderConfig) -> Result<Encoded> {
    let (windows, len) = window_matrix(seqs, cfg)?;
    encode_windows(tape, vars, windows, len)
}

/// Temporal mean of the pre-centering features mapped through the head:
/// one prediction per sequence, shape `count × 1`.
pub fn head_predictions(tape: &mut Tape, vars: &EncoderVars, enc: &Encoded) -> Result<Var> {
    let (w, b) = vars
        .head
        .ok_or_else(|| Error::Data("encoder has no regression head".into()))?;
    let mut avg = vec![0.0; enc.count * enc.count * enc.len];
    for i in 0..enc.count {
        for t in 0..enc.len {
            avg[i * enc.count * enc.len + i * enc.len + t] = 1.0 / enc.len as f64;
        }
    }
    let avg = tape.constant(Tensor::matrix(enc.count, enc.count * enc.len, avg)?);
    let pooled = tape.matmul(avg, enc.raw)?;
    affine(tape, pooled, w, b)
}

fn center_blocks(x: &Tensor, len: usize) -> Tensor {
    let c = x.cols();
    let mut out = x.data().to_vec();
    for block in out.chunks_mut(len * c) {
        for ch in 0..c {
            let mean = (0..len).map(|t| block[t * c + ch]).sum::<f64>() / len as f64;
            for t in 0..len {
                block[t * c + ch] -= mean;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape")
}

/// Centering is a symmetric projection, so its adjoint is itself.
struct CenterBlocks {
    len: usize,
}

impl BackwardRule for CenterBlocks {
    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(center_blocks(grad, self.len))]
    }
}

/// Untracked forward pass for one sequence.
pub fn encode(x: &FrameSeq, params: &ParamStore, cfg: &EncoderConfig) -> Result<FeatureSeries> {
    encode_batch(&[x], params, cfg).map(|mut v| v.remove(0))
}

/// Untracked forward pass for several equal-length sequences.
pub fn encode_batch(seqs: &[&FrameSeq], params: &ParamStore, cfg: &EncoderConfig) -> Result<Vec<FeatureSeries>> {
    let (features, _) = encode_batch_with_raw(seqs, params, cfg)?;
    Ok(features)
}

/// Centered features plus the head prediction when a head is present.
pub fn encode_batch_with_raw(
    seqs: &[&FrameSeq],
    params: &ParamStore,
    cfg: &EncoderConfig,
) -> Result<(Vec<FeatureSeries>, Option<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.values().iter().map(|v| tape.constant(v.clone())).collect();
    let ev = EncoderVars::new(params, &vars, cfg)?;
    let enc = encode_on_tape(&mut tape, &ev, seqs, cfg)?;
    let preds = match ev.head {
        Some(_) => {
            let p = head_predictions(&mut tape, &ev, &enc)?;
            Some(tape.value(p).data().to_vec())
        }
        None => None,
    };
    let c = cfg.feature_channels;
    let all = tape.value(enc.features).data();
    let fs = seqs[0].sample_rate_hz();
    let features = (0..enc.count)
        .map(|i| {
            let block = all[i * enc.len * c..(i + 1) * enc.len * c].to_vec();
            FeatureSeries::new(Tensor::matrix(enc.len, c, block)?, fs)
        })
        .collect::<Result<_>>()?;
    Ok((features, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{psd, RealSeries};
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn small_cfg(k: usize) -> EncoderConfig {
        EncoderConfig {
            frame_input_dim: 4,
            hidden_dims: vec![5],
            feature_channels: 2,
            temporal_context: k,
        }
    }

    fn random_frames(t: usize, seed: u64) -> FrameSeq {
        let mut rng = SplitMix64::new(seed);
        FrameSeq::new((0..t * 4).map(|_| rng.uniform(-1.0, 1.0)).collect(), t, 1, 2, 2, 30.0).unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = EncoderConfig::default();
        let a = init_params(&cfg, 1).unwrap();
        assert_eq!(a, init_params(&cfg, 1).unwrap());
        assert_ne!(a, init_params(&cfg, 2).unwrap());
        for (fan_in, fan_out) in cfg.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = a.values().iter().find(|t| t.shape() == [fan_in, fan_out]).unwrap();
            assert!(w.data().iter().all(|v| v.abs() <= limit));
        }
        assert!(a.values().iter().filter(|t| t.rows() == 1).all(|b| b.data().iter().all(|&v| v == 0.0)));
        // default geometry sits near 20k parameters
        assert!((15_000..25_000).contains(&a.num_scalars()));
    }

    #[test]
    fn output_length_matches_input_for_all_windows() {
        for k in [1, 3, 5] {
            let cfg = small_cfg(k);
            let params = init_params(&cfg, 3).unwrap();
            let z = encode(&random_frames(9, 4), &params, &cfg).unwrap();
            assert_eq!((z.len(), z.channels()), (9, 2));
            for c in 0..2 {
                assert!(z.channel(c).iter().sum::<f64>().abs() < 1e-12);
            }
        }
        assert!(small_cfg(2).validate().is_err());
    }

    #[test]
    fn zero_output_layer_gives_constant_features() {
        let cfg = small_cfg(3);
        let mut params = init_params(&cfg, 3).unwrap();
        let i = params.index_of(&weight_name(1)).unwrap();
        params.values_mut()[i] = Tensor::zeros(&[5, 2]);
        let z = encode(&random_frames(8, 1), &params, &cfg).unwrap();
        assert!(z.values().data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            crate::similarity::periodic_similarity(&z, &z, Default::default()),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn frame_mismatch_is_a_dimension_error() {
        let cfg = small_cfg(1);
        let params = init_params(&cfg, 0).unwrap();
        let bad = FrameSeq::new(vec![0.0; 18], 2, 1, 3, 3, 30.0).unwrap();
        assert!(matches!(encode(&bad, &params, &cfg), Err(Error::Dimension(_))));
        // three colour planes of the right canvas are reduced to luminance
        let rgb = FrameSeq::new(vec![0.5; 2 * 3 * 4], 2, 3, 2, 2, 30.0).unwrap();
        assert!(encode(&rgb, &params, &cfg).is_ok());
    }

    #[test]
    fn mean_pixel_encoder_tracks_a_rotating_bar() {
        // 8×8 canvas, a bar through the centre rotating at 1.5 Hz, seen
        // through an off-centre mask so the mean luminance is periodic
        let (n, fs, f) = (150, 30.0, 1.5);
        let mut data = Vec::new();
        for t in 0..n {
            let angle = TAU * f * t as f64 / fs;
            for y in 0..8 {
                for x in 0..8 {
                    let (px, py) = (x as f64 - 3.5, y as f64 - 3.5);
                    let along = px * angle.cos() + py * angle.sin();
                    let across = -px * angle.sin() + py * angle.cos();
                    let on_bar = across.abs() < 0.8 && along > 0.0;
                    let masked = x >= 4;
                    data.push(if on_bar && masked { 1.0 } else { 0.0 });
                }
            }
        }
        let seq = FrameSeq::new(data, n, 1, 8, 8, fs).unwrap();
        let cfg = EncoderConfig {
            frame_input_dim: 64,
            hidden_dims: vec![1],
            feature_channels: 1,
            temporal_context: 1,
        };
        let mut params = init_params(&cfg, 0).unwrap();
        let w0 = params.index_of(&weight_name(0)).unwrap();
        params.values_mut()[w0] = Tensor::filled(&[64, 1], 1.0 / 64.0);
        let w1 = params.index_of(&weight_name(1)).unwrap();
        params.values_mut()[w1] = Tensor::filled(&[1, 1], 1.0);
        let z = encode(&seq, &params, &cfg).unwrap();

        let s = psd(&RealSeries::new(z.channel(0), fs).unwrap());
        let peak = (1..s.bin_power.len()).fold(1, |k, i| if s.bin_power[i] > s.bin_power[k] { i } else { k });
        assert!((s.frequency_of(peak as f64) - f).abs() <= s.bin_width_hz);
    }

    #[test]
    fn head_predictions_are_per_sequence() {
        let cfg = small_cfg(3);
        let mut params = init_params(&cfg, 5).unwrap();
        init_head(&mut params, &cfg, 5);
        let (a, b) = (random_frames(6, 1), random_frames(6, 2));
        let (_, both) = encode_batch_with_raw(&[&a, &b], &params, &cfg).unwrap();
        let (_, one) = encode_batch_with_raw(&[&b], &params, &cfg).unwrap();
        let both = both.unwrap();
        assert_eq!(both.len(), 2);
        assert!((both[1] - one.unwrap()[0]).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_meta_round_trip() {
        let cfg = EncoderConfig::default();
        let mut meta = Default::default();
        cfg.to_meta(&mut meta);
        assert_eq!(EncoderConfig::from_meta(&meta).unwrap(), cfg);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn delay_equivariance(seed in any::<u64>(), d in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5])) {
            let cfg = small_cfg(k);
            let params = init_params(&cfg, seed).unwrap();
            let x = random_frames(16, seed ^ 1);
            let delayed = x.window(d, 16 - d).unwrap();
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.values().iter().map(|v| tape.constant(v.clone())).collect();
            let ev = EncoderVars::new(&params, &vars, &cfg).unwrap();
            let full = encode_on_tape(&mut tape, &ev, &[&x], &cfg).unwrap();
            let part = encode_on_tape(&mut tape, &ev, &[&delayed], &cfg).unwrap();
            // compare pre-centering outputs away from the replicated edges
            let (zf, zp) = (tape.value(full.raw).data(), tape.value(part.raw).data());
            let h = k / 2;
            for t in h..(16 - d - h) {
                for c in 0..2 {
                    prop_assert!((zf[(t + d) * 2 + c] - zp[t * 2 + c]).abs() < 1e-9);
                }
            }
        }
    }
}
