//! Central finite-difference gradient checking.

use crate::diffcore::params::{BoundParams, ParamStore};
use crate::diffcore::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Worst relative error per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<T, F>(params: &ParamStore<T>, f: &F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let loss = f(&mut tape, &bound)?;
    let v = tape.value(loss);
    if v.numel() != 1 {
        return Err(Error::InvalidArgument("objective must be scalar".into()));
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "objective" });
    }
    Ok(v)
}

/// Objective value and its tape gradient.
pub fn analytic_gradients<T, F>(params: &ParamStore<T>, f: &F) -> Result<(T, ParamStore<T>)>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let loss = f(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], params.gradients(&bound, &grads)))
}

/// `(f(θ + ε eₖ) − f(θ − ε eₖ)) / 2ε` for every coordinate.
pub fn numeric_gradients<T, F>(params: &ParamStore<T>, eps: T, f: &F) -> Result<ParamStore<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &BoundParams) -> Result<Var>,
{
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut out = params.zeros_like();
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in &names {
        let n = params.get(name).map_or(0, |t| t.numel());
        for k in 0..n {
            let orig = probe.get(name).expect("name from store").data()[k];
            probe.get_mut(name).expect("name").data_mut()[k] = orig + eps;
            let plus = evaluate(&probe, f)?;
            probe.get_mut(name).expect("name").data_mut()[k] = orig - eps;
            let minus = evaluate(&probe, f)?;
            probe.get_mut(name).expect("name").data_mut()[k] = orig;
            out.get_mut(name).expect("name").data_mut()[k] = (plus - minus) / (eps + eps);
        }
    }
    Ok(out)
}

pub fn compare_gradients<T: Scalar>(analytic: &ParamStore<T>, numeric: &ParamStore<T>) -> Result<GradCheckReport> {
    analytic.check_layout(numeric)?;
    let per_param: Vec<(String, f64)> = analytic
        .iter()
        .zip(numeric.iter())
        .map(|((name, a), (_, n))| {
            let worst = a
                .data()
                .iter()
                .zip(n.data())
                .map(|(&a, &n)| relative_error(a.as_f64(), n.as_f64()))
                .fold(0.0, f64::max);
            (name.to_owned(), worst)
        })
        .collect();
    let max_rel_err = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_err,
    })
}

/// Compares tape gradients of `f` against central differences with step `eps`.
pub fn finite_diff_check<T, F>(params: &ParamStore<T>, eps: T, f: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &BoundParams) -> Result<Var>,
{
    let (_, analytic) = analytic_gradients(params, &f)?;
    let numeric = numeric_gradients(params, eps, &f)?;
    compare_gradients(&analytic, &numeric)
}
