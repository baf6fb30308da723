use super::{Scalar, Tape, Tensor, TensorError, Var};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    /// Largest absolute difference, for diagnostics.
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences `(f(x+eps) - f(x-eps)) / (2 eps)` at every coordinate
/// of every parameter.
#[allow(clippy::needless_range_loop)]
pub fn grad_check<T, F>(
    f: F,
    params: &[Tensor<T>],
    eps: f64,
) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>, &[Var]) -> Var,
{
    let eval = |ps: &[Tensor<T>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars);
        let v = tape.value(out).data()[0];
        if !v.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check" });
        }
        Ok(v.to_f64_lossy())
    };

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(params)
            .map(|(v, p)| match grads.get(*v) {
                Some(g) => g.iter().map(|x| x.to_f64_lossy()).collect(),
                None => vec![0.0; p.len()],
            })
            .collect()
    };

    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    let step = T::of(eps);
    for p in 0..work.len() {
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;
            // the perturbation actually applied, which may differ from eps after rounding
            let h = ((orig + step) - (orig - step)).to_f64_lossy();
            let numeric = (plus - minus) / h;
            let a = analytic[p][i];
            let abs = (a - numeric).abs();
            let rel = abs / (a.abs() + numeric.abs()).max(1e-8);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.coordinates += 1;
        }
    }
    Ok(report)
}
