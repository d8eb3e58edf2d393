use super::{NumError, Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Elements whose perturbation flipped a relu input across zero.
    pub skipped_kinks: usize,
}

/// Max relative error between the taped gradient of `f` at `x` and central
/// finite differences. See [`grad_check_report`].
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<NumError>,
{
    grad_check_report(f, x, eps).map(|r| r.max_rel_error)
}

/// Per element: `|g_auto - g_fd| / max(1e-8, |g_auto| + |g_fd|)` with
/// `g_fd = (f(x + eps) - f(x - eps)) / 2eps`. Elements whose perturbation
/// changes the relu sign pattern on the tape straddle a kink and are skipped.
pub fn grad_check_report<F, E>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<NumError>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&mut tape, xv)?;
    let base_sig = tape.relu_signature();
    tape.backward(loss)?;
    let auto = tape.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |probe: Tensor| -> Result<(f64, Vec<bool>), E> {
        let mut t = Tape::new();
        let v = t.leaf(probe);
        let l = f(&mut t, v)?;
        let val = t.value(l).item()?;
        if !val.is_finite() {
            return Err(NumError::Evaluation(format!("non-finite value {val} at perturbed point"))
                .into());
        }
        Ok((val, t.relu_signature()))
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0 };
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let (fp, sp) = eval(plus)?;
        let (fm, sm) = eval(minus)?;
        if sp != base_sig || sm != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * eps);
        let err = (auto[i] - fd).abs() / (auto[i].abs() + fd.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
