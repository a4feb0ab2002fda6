use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(parameter index, element index)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Gradients smaller than this are compared on an absolute scale.
const REL_SCALE_FLOOR: f64 = 1e-6;

/// Compares the reverse-mode gradient of `f` with central differences of
/// step `h` for every element of every parameter.
///
/// `f` records a scalar-valued program on the given tape using the supplied
/// parameter leaves. Relative error per element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {h}")));
    }

    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let root = f(&mut tape, &leaves)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .zip(params)
        .map(|(v, p)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    drop(tape);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        let root = f(&mut tape, &leaves)?;
        let v = tape.value(root).item();
        if !v.is_finite() {
            return Err(Error::NumericDomain(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for ei in 0..param.len() {
            let original = param.data()[ei];
            work[pi].data_mut()[ei] = original + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = original - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic[pi].data()[ei];
            let abs = (exact - numeric).abs();
            let rel = abs / exact.abs().max(numeric.abs()).max(REL_SCALE_FLOOR);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}
