//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mode, ModelGraph, Tensor};
use crate::Result;

/// Denominator floor of the relative error, so that gradients that are
/// essentially zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// One-sided slopes differing by more than this (relative) mark a kink.
const KINK_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Entry with the largest error, e.g. `"input[3]"` or `"conv1.kernel[7]"`.
    pub worst: String,
    pub checked: usize,
    /// Entries at a non-differentiable point (relu kink, pooling tie switch).
    pub skipped: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks input and parameter gradients of `Σ output ⊙ R` for a fixed random `R`,
/// in training mode with the model's current dropout step.
pub fn grad_check(model: &mut ModelGraph, input: &Tensor, epsilon: f64) -> Result<GradCheckReport> {
    let mut projection: Option<Tensor> = None;
    grad_check_with(model, input, epsilon, |m, x, with_grad| {
        let out = m.forward(x, Mode::Train)?;
        let r = projection.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
            Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0))
        });
        let f = out.dot(r);
        let gx = if with_grad { Some(m.backward(r)?) } else { None };
        Ok((f, gx))
    })
}

/// Generic checker. `objective(model, input, with_grad)` returns the scalar
/// objective and, when `with_grad` is set, must also leave the parameter
/// gradients in `model` (after `zero_grad`) and return the input gradient.
pub fn grad_check_with<F>(model: &mut ModelGraph, input: &Tensor, epsilon: f64, mut objective: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ModelGraph, &Tensor, bool) -> Result<(f64, Option<Tensor>)>,
{
    model.zero_grad();
    let (f0, gx) = objective(model, input, true)?;
    let gx = gx.expect("objective returns the input gradient when asked");
    let analytic_params: Vec<Tensor> = model.params.iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, skipped: 0 };
    let record = |report: &mut GradCheckReport, label: String, analytic: f64, fp: f64, fm: f64| {
        let d_plus = (fp - f0) / epsilon;
        let d_minus = (f0 - fm) / epsilon;
        if (d_plus - d_minus).abs() > KINK_TOL * d_plus.abs().max(d_minus.abs()).max(1.0) {
            report.skipped += 1;
            return;
        }
        let numeric = (fp - fm) / (2.0 * epsilon);
        let e = rel_error(analytic, numeric);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = label;
        }
    };

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + epsilon;
        let (fp, _) = objective(model, &x, false)?;
        x.data_mut()[i] = orig - epsilon;
        let (fm, _) = objective(model, &x, false)?;
        x.data_mut()[i] = orig;
        record(&mut report, format!("input[{i}]"), gx.data()[i], fp, fm);
    }

    for (p, analytic) in analytic_params.iter().enumerate() {
        if !model.params[p].trainable {
            continue;
        }
        for i in 0..analytic.len() {
            let orig = model.params[p].value.data()[i];
            model.params[p].value.data_mut()[i] = orig + epsilon;
            let (fp, _) = objective(model, input, false)?;
            model.params[p].value.data_mut()[i] = orig - epsilon;
            let (fm, _) = objective(model, input, false)?;
            model.params[p].value.data_mut()[i] = orig;
            let label = format!("{}[{i}]", model.params[p].name);
            record(&mut report, label, analytic.data()[i], fp, fm);
        }
    }
    Ok(report)
}
