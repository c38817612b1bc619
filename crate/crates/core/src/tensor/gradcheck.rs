//! Central-difference gradient checking in `f64`.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` with the largest error.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

fn eval<F>(f: &mut F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("function value {v} is not finite")));
    }
    Ok(v)
}

/// Checks d`f`/d`inputs` against central differences.
///
/// `coords` restricts the check to `(input, element)` pairs; `None` checks
/// every element of every input.
pub fn grad_check_inputs<F>(
    mut f: F,
    inputs: &[Tensor<f64>],
    step: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("function value {v} is not finite")));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&var, t)| tape.grad(var).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j))).collect();
            &all
        }
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), coordinates: coords.len() };
    for &(i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + step;
        let plus = eval(&mut f, &work)?;
        work[i].data_mut()[j] = orig - step;
        let minus = eval(&mut f, &work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i].data()[j], numeric);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst = (i, j);
        }
    }
    Ok(report)
}

/// Max relative error of the gradient of scalar `f` at `x`.
pub fn grad_check<F>(mut f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let report = grad_check_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, None)?;
    Ok(report.max_rel_error)
}
