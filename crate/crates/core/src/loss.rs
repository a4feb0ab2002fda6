//! InfoNCE and the generalized (soft-target) contrastive loss.
//!
//! Both reduce to one fused op: for each row `i` of a similarity matrix `S`,
//! the cross-entropy between a target distribution `q_i` and
//! `softmax_j(S_ij / ν)`. InfoNCE uses one-hot targets; the generalized loss
//! uses `q_i = softmax_j(w_ij)` with `w_ij = sim_label(s_i, s_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::{BackwardRule, Tape, Tensor, Var};
use crate::similarity::{label_similarity, periodic_similarity, FeatureSeries, LabelKernel, SimilarityConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Generalized,
    Infonce,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Generalized => "generalized",
            Self::Infonce => "infonce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "generalized" => Ok(Self::Generalized),
            "infonce" => Ok(Self::Infonce),
            _ => Err(Error::Config(format!("unknown loss mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKernelKind {
    NegL1,
    #[default]
    InverseL1,
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub temperature: f64,
    pub mode: LossMode,
    pub label_kernel: LabelKernelKind,
    /// `NegL1` scale; `None` means the width of the speed range.
    pub label_scale: Option<f64>,
    /// `InverseL1` offset.
    pub label_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            mode: LossMode::Generalized,
            label_kernel: LabelKernelKind::InverseL1,
            label_scale: None,
            label_eps: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.label_eps > 0.0) {
            return Err(Error::Config("label_eps must be > 0".into()));
        }
        if let Some(s) = self.label_scale {
            if !(s > 0.0) {
                return Err(Error::Config("label_scale must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Resolved label kernel for a speed range of the given width. The
    /// InfoNCE mode always uses indicator targets.
    pub fn kernel(&self, speed_range_width: f64) -> LabelKernel {
        if self.mode == LossMode::Infonce {
            return LabelKernel::Indicator;
        }
        match self.label_kernel {
            LabelKernelKind::NegL1 => LabelKernel::NegL1 {
                scale: self.label_scale.unwrap_or(speed_range_width),
            },
            LabelKernelKind::InverseL1 => LabelKernel::InverseL1 { eps: self.label_eps },
            LabelKernelKind::Indicator => LabelKernel::Indicator,
        }
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Row-stochastic `M × M` targets from speed labels.
pub fn soft_targets(speeds: &[f64], kernel: LabelKernel) -> Vec<f64> {
    let m = speeds.len();
    let mut q = vec![0.0; m * m];
    for i in 0..m {
        if kernel == LabelKernel::Indicator {
            q[i * m + i] = 1.0;
            continue;
        }
        let w: Vec<f64> = speeds.iter().map(|&s| label_similarity(speeds[i], s, kernel)).collect();
        let lse = log_sum_exp(w.iter().copied());
        for j in 0..m {
            q[i * m + j] = (w[j] - lse).exp();
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Row-wise soft-target cross-entropy over `softmax(S/ν)`.
///
/// `mask[i·M + j] == false` removes entry `(i, j)` from row `i`'s softmax;
/// masked entries must carry zero target mass.
pub fn soft_cross_entropy(
    tape: &mut Tape,
    sim: Var,
    targets: &[f64],
    mask: Option<&[bool]>,
    temperature: f64,
    reduction: Reduction,
) -> Result<Var> {
    let s = tape.value(sim);
    if s.rank() != 2 || s.len() != targets.len() || mask.is_some_and(|m| m.len() != targets.len()) {
        return Err(Error::Dimension(format!(
            "similarity shape {:?} does not match {} targets",
            s.shape(),
            targets.len()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Contract("temperature must be positive".into()));
    }
    let (rows, cols) = (s.rows(), s.cols());
    let keep = |k: usize| mask.map_or(true, |m| m[k]);
    let mut total = 0.0;
    let mut probs = vec![0.0; rows * cols];
    for i in 0..rows {
        let idx = (i * cols..(i + 1) * cols).filter(|&k| keep(k));
        let lse = log_sum_exp(idx.clone().map(|k| s.data()[k] / temperature));
        for k in idx {
            let logp = s.data()[k] / temperature - lse;
            probs[k] = logp.exp();
            if targets[k] != 0.0 {
                total -= targets[k] * logp;
            }
        }
        if (i * cols..(i + 1) * cols).any(|k| !keep(k) && targets[k] != 0.0) {
            return Err(Error::Contract("masked entry carries target mass".into()));
        }
    }
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / rows as f64,
    };
    let rule = SoftCeRule {
        probs,
        targets: targets.to_vec(),
        row_mass: (0..rows)
            .map(|i| targets[i * cols..(i + 1) * cols].iter().sum())
            .collect(),
        cols,
        factor: scale / temperature,
    };
    Ok(tape.custom(&[sim], Tensor::scalar(total * scale), Box::new(rule)))
}

struct SoftCeRule {
    probs: Vec<f64>,
    targets: Vec<f64>,
    row_mass: Vec<f64>,
    cols: usize,
    factor: f64,
}

impl BackwardRule for SoftCeRule {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.item() * self.factor;
        // ∂/∂S_ij = (mass_i · p_ij − q_ij) / ν
        let data = self
            .probs
            .iter()
            .zip(&self.targets)
            .enumerate()
            .map(|(k, (p, q))| g * (self.row_mass[k / self.cols] * p - q))
            .collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), data).expect("shape"))]
    }
}

fn check_speeds(speeds: &[f64]) -> Result<()> {
    if speeds.len() < 2 {
        return Err(Error::Contract("the loss needs at least 2 views".into()));
    }
    if speeds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract("speeds must be strictly increasing".into()));
    }
    Ok(())
}

/// Per-sample generalized loss `Σ_i ℓ_i` on an `M × M` matrix of
/// `sim(z_i, z'_j)`.
pub fn simper_loss(tape: &mut Tape, sim: Var, speeds: &[f64], kernel: LabelKernel, temperature: f64) -> Result<Var> {
    check_speeds(speeds)?;
    let m = speeds.len();
    if tape.value(sim).shape() != [m, m] {
        return Err(Error::Dimension(format!(
            "expected a {m}×{m} similarity matrix, got {:?}",
            tape.value(sim).shape()
        )));
    }
    soft_cross_entropy(tape, sim, &soft_targets(speeds, kernel), None, temperature, Reduction::Sum)
}

/// Scalar reference evaluation of the per-sample generalized loss by direct
/// summation, with no tape involved.
pub fn simper_loss_value(sim: &[f64], speeds: &[f64], kernel: LabelKernel, temperature: f64) -> Result<f64> {
    check_speeds(speeds)?;
    let m = speeds.len();
    if sim.len() != m * m {
        return Err(Error::Dimension(format!("expected {} similarities, got {}", m * m, sim.len())));
    }
    let q = soft_targets(speeds, kernel);
    let mut total = 0.0;
    for i in 0..m {
        let row = &sim[i * m..(i + 1) * m];
        let lse = log_sum_exp(row.iter().map(|s| s / temperature));
        for j in 0..m {
            total -= q[i * m + j] * (row[j] / temperature - lse);
        }
    }
    Ok(total)
}

/// `-log(exp(pos/ν) / Σ_{z' ∈ {pos} ∪ negs} exp(sim/ν))`
pub fn infonce_from_similarities(positive: f64, negatives: &[f64], temperature: f64) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Contract("InfoNCE needs at least one negative".into()));
    }
    let all = std::iter::once(positive).chain(negatives.iter().copied());
    Ok(log_sum_exp(all.map(|s| s / temperature)) - positive / temperature)
}

pub fn infonce_loss(
    anchor: &FeatureSeries,
    positive: &FeatureSeries,
    negatives: &[FeatureSeries],
    sim: SimilarityConfig,
    temperature: f64,
) -> Result<f64> {
    let pos = periodic_similarity(anchor, positive, sim)?;
    let negs = negatives
        .iter()
        .map(|n| periodic_similarity(anchor, n, sim))
        .collect::<Result<Vec<_>>>()?;
    infonce_from_similarities(pos, &negs, temperature)
}

/// Instance-discrimination loss over `2B` views where rows `2k` and `2k+1`
/// are the two views of instance `k`: each anchor's positive is its partner,
/// every other view is a negative, self-pairs are excluded. Mean over anchors.
pub fn instance_discrimination_loss(tape: &mut Tape, sim: Var, temperature: f64) -> Result<Var> {
    let s = tape.value(sim);
    let n = s.rows();
    if s.rank() != 2 || s.cols() != n || n < 4 || n % 2 != 0 {
        return Err(Error::Contract(format!(
            "instance discrimination needs a square 2B×2B matrix with B ≥ 2, got {:?}",
            s.shape()
        )));
    }
    let mut targets = vec![0.0; n * n];
    let mut mask = vec![true; n * n];
    for i in 0..n {
        targets[i * n + (i ^ 1)] = 1.0;
        mask[i * n + i] = false;
    }
    soft_cross_entropy(tape, sim, &targets, Some(&mask), temperature, Reduction::Mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::finite_diff_check;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn eval(sim: &[f64], speeds: &[f64], kernel: LabelKernel, nu: f64) -> f64 {
        let m = speeds.len();
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::matrix(m, m, sim.to_vec()).unwrap(), true);
        let l = simper_loss(&mut tape, s, speeds, kernel, nu).unwrap();
        tape.value(l).item()
    }

    /// The generalized loss evaluated term by term with no shared helpers.
    fn brute_force(sim: &[f64], speeds: &[f64], scale: f64, nu: f64) -> f64 {
        let m = speeds.len();
        let mut total = 0.0;
        for i in 0..m {
            let wden: f64 = (0..m).map(|k| (-(speeds[i] - speeds[k]).abs() / scale).exp()).sum();
            let sden: f64 = (0..m).map(|k| (sim[i * m + k] / nu).exp()).sum();
            for j in 0..m {
                let q = (-(speeds[i] - speeds[j]).abs() / scale).exp() / wden;
                let p = (sim[i * m + j] / nu).exp() / sden;
                total -= q * p.ln();
            }
        }
        total
    }

    #[test]
    fn uniform_similarities_give_log_two() {
        let v = infonce_from_similarities(0.3, &[0.3], 0.1).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn infonce_vanishes_as_the_gap_grows() {
        let mut last = f64::INFINITY;
        for gap in (0..40).map(|g| g as f64 * 0.25) {
            let v = infonce_from_similarities(gap, &[0.0, 0.0], 0.5).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn larger_temperature_increases_the_loss() {
        let a = infonce_from_similarities(1.0, &[0.0], 0.1).unwrap();
        let b = infonce_from_similarities(1.0, &[0.0], 0.2).unwrap();
        assert!(b > a);
    }

    #[test]
    fn hand_built_three_by_three() {
        let sim = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let speeds = [1.0, 2.0, 3.0];
        let k = LabelKernel::NegL1 { scale: 1.0 };
        let oracle = brute_force(&sim, &speeds, 1.0, 1.0);
        assert!((eval(&sim, &speeds, k, 1.0) - oracle).abs() < 1e-12);
        assert!((simper_loss_value(&sim, &speeds, k, 1.0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn constant_rows_give_log_m() {
        let speeds = [0.6, 0.9, 1.4, 1.9];
        let sim = vec![0.37; 16];
        for k in [LabelKernel::NegL1 { scale: 1.5 }, LabelKernel::InverseL1 { eps: 0.1 }] {
            let per_row = eval(&sim, &speeds, k, 0.1) / 4.0;
            assert!((per_row - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn unsorted_speeds_are_a_contract_error() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        assert!(matches!(
            simper_loss(&mut tape, s, &[2.0, 1.0], LabelKernel::Indicator, 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(2);
        let sim = Tensor::matrix(4, 4, (0..16).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let speeds = [0.5, 0.8, 1.3, 1.7];
        for k in [LabelKernel::NegL1 { scale: 1.5 }, LabelKernel::Indicator] {
            let r = finite_diff_check(|t, p| simper_loss(t, p[0], &speeds, k, 0.3), &[sim.clone()], 1e-5).unwrap();
            assert!(r.max_rel_err < 1e-6, "{r:?}");
        }
        let r = finite_diff_check(|t, p| instance_discrimination_loss(t, p[0], 0.5), &[sim], 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn instance_loss_with_tied_views_is_log_of_negatives() {
        // two identical instances: every off-diagonal similarity equals 1
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::matrix(4, 4, vec![1.0; 16]).unwrap());
        let l = instance_discrimination_loss(&mut tape, s, 0.1).unwrap();
        assert!((tape.value(l).item() - 3f64.ln()).abs() < 1e-12);
        let s = tape.constant(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        assert!(instance_discrimination_loss(&mut tape, s, 0.1).is_err());
    }

    #[test]
    fn minimizer_alignment() {
        let speeds: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
        let k = LabelKernel::NegL1 { scale: 1.5 };
        let matrix = |diag: f64, decay: f64| -> Vec<f64> {
            (0..16)
                .map(|idx| {
                    let (i, j) = (idx / 4, idx % 4);
                    if i == j { diag } else { diag - decay * (speeds[i] - speeds[j]).abs() }
                })
                .collect()
        };
        // targets are ordered by speed proximity, so a matrix ordered the same
        // way beats one ordered the opposite way
        let aligned = eval(&matrix(1.0, 0.4), &speeds, k, 0.1);
        let reversed: Vec<f64> = (0..16)
            .map(|idx| {
                let (i, j) = (idx / 4, idx % 4);
                if i == j { 1.0 } else { 0.4 + 0.4 * (speeds[i] - speeds[j]).abs() }
            })
            .collect();
        assert!(aligned < eval(&reversed, &speeds, k, 0.1));
        // a sharper diagonal lowers the loss under indicator targets
        let mut last = f64::INFINITY;
        for d in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let v = eval(&matrix(d, 0.0).iter().enumerate().map(|(i, x)| if i % 5 == 0 { *x } else { 0.0 }).collect::<Vec<_>>(), &speeds, LabelKernel::Indicator, 0.1);
            assert!(v < last);
            last = v;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn indicator_targets_reduce_to_infonce(seed in any::<u64>(), m in 2usize..8, nu in 0.05f64..2.0) {
            let mut rng = SplitMix64::new(seed);
            let sim: Vec<f64> = (0..m * m).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let speeds: Vec<f64> = (0..m).map(|i| 0.5 + 0.2 * i as f64).collect();
            let total = eval(&sim, &speeds, LabelKernel::Indicator, nu);
            let reference: f64 = (0..m)
                .map(|i| {
                    let negs: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| sim[i * m + j]).collect();
                    infonce_from_similarities(sim[i * m + i], &negs, nu).unwrap()
                })
                .sum();
            prop_assert!((total - reference).abs() < 1e-12);
        }

        #[test]
        fn rows_are_bounded_below_by_target_entropy(seed in any::<u64>(), m in 2usize..8) {
            let mut rng = SplitMix64::new(seed);
            let sim: Vec<f64> = (0..m * m).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut speeds: Vec<f64> = (0..m).map(|_| rng.uniform(0.5, 2.0)).collect();
            speeds.sort_by(f64::total_cmp);
            speeds.dedup();
            prop_assume!(speeds.len() == m);
            let k = LabelKernel::NegL1 { scale: 1.5 };
            let q = soft_targets(&speeds, k);
            for i in 0..m {
                let row = &sim[i * m..(i + 1) * m];
                let lse = log_sum_exp(row.iter().map(|s| s / 0.1));
                let ce: f64 = (0..m).map(|j| -q[i * m + j] * (row[j] / 0.1 - lse)).sum();
                let h: f64 = (0..m).map(|j| -q[i * m + j] * q[i * m + j].ln()).sum();
                prop_assert!(ce >= h - 1e-9);
            }
        }

        #[test]
        fn joint_permutation_invariance(seed in any::<u64>(), m in 2usize..7) {
            let mut rng = SplitMix64::new(seed);
            let sim: Vec<f64> = (0..m * m).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let speeds: Vec<f64> = (0..m).map(|i| 0.5 + 0.25 * i as f64).collect();
            let mut perm: Vec<usize> = (0..m).collect();
            rng.shuffle(&mut perm);
            // the permuted problem, scored without the sortedness precondition
            let k = LabelKernel::NegL1 { scale: 1.5 };
            let ps: Vec<f64> = perm.iter().map(|&p| speeds[p]).collect();
            let psim: Vec<f64> = (0..m * m).map(|idx| sim[perm[idx / m] * m + perm[idx % m]]).collect();
            let q = soft_targets(&ps, k);
            let mut permuted = 0.0;
            for i in 0..m {
                let row = &psim[i * m..(i + 1) * m];
                let lse = log_sum_exp(row.iter().map(|s| s / 0.2));
                permuted -= (0..m).map(|j| q[i * m + j] * (row[j] / 0.2 - lse)).sum::<f64>();
            }
            let base = simper_loss_value(&sim, &speeds, k, 0.2).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12);
        }
    }
}
