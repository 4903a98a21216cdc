use super::{AutodiffError, ParamSet, Tape, Var};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Largest `|analytic - numeric|` over all coordinates.
    pub max_abs_error: f64,
    pub coordinates: usize,
}

fn eval<F>(f: &mut F, params: &ParamSet) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(AutodiffError::Contract("grad_check needs a scalar function".into()));
    }
    Ok(v.data()[0])
}

/// Checks every scalar coordinate of `params` with step `h`. The relative
/// error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` must be deterministic; a second evaluation that differs bitwise from
/// the first is reported as a contract error (e.g. dropout left enabled).
pub fn grad_check<F>(params: &mut ParamSet, h: f64, mut f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var, AutodiffError>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(AutodiffError::Contract(format!("step h must be positive, got {h}")));
    }
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let base = tape.value(loss).data()[0];
    tape.backward(loss, params)?;
    drop(tape);
    if eval(&mut f, params)?.to_bits() != base.to_bits() {
        return Err(AutodiffError::Contract(
            "function is not deterministic (is dropout enabled?)".into(),
        ));
    }

    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for (id, analytic) in ids.into_iter().zip(&analytic) {
        for (j, &a) in analytic.iter().enumerate() {
            let orig = params.get(id).value.data()[j];
            params.get_mut(id).value.data_mut()[j] = orig + h;
            let up = eval(&mut f, params)?;
            params.get_mut(id).value.data_mut()[j] = orig - h;
            let down = eval(&mut f, params)?;
            params.get_mut(id).value.data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = params.get(id).name.clone();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}
