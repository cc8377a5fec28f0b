use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::Result;

/// Analytic gradient against central differences, element by element.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares the gradient of the scalar `f(x)` with a central difference of
/// step `eps` for every element of `x`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let eval = |t: Tensor<T>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        Ok(g.scalar(out).as_f64())
    };
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    g.backward(out)?;
    let analytic: Vec<f64> = match g.grad(v) {
        Some(gr) => gr.data().iter().map(|a| a.as_f64()).collect(),
        None => vec![0.0; x.len()],
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        let xi = x.data()[i].as_f64();
        plus.data_mut()[i] = T::from_f64(xi + eps);
        minus.data_mut()[i] = T::from_f64(xi - eps);
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * eps));
    }
    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .collect();
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
    })
}
