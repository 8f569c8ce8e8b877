//! Finite-difference helpers shared by unit tests.

use crate::models::{FactorModel, Gradients};

/// Parameters addressed as one flat vector: user rows, item rows, biases.
pub(crate) fn param_len(model: &FactorModel) -> usize {
    (model.n() + model.m()) * model.dim() + if model.has_bias() { model.m() } else { 0 }
}

pub(crate) fn perturb(model: &mut FactorModel, k: usize, delta: f64) {
    let d = model.dim();
    let nu = model.n() * d;
    let ni = model.m() * d;
    if k < nu {
        model.user_row_mut((k / d) as u32)[k % d] += delta;
    } else if k < nu + ni {
        let k = k - nu;
        model.item_row_mut((k / d) as u32)[k % d] += delta;
    } else {
        model.bias_mut().unwrap()[k - nu - ni] += delta;
    }
}

pub(crate) fn flat_gradient(model: &FactorModel, g: &Gradients) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_len(model));
    for u in 0..model.n() as u32 {
        out.extend_from_slice(g.user_grad(u));
    }
    for i in 0..model.m() as u32 {
        out.extend_from_slice(g.item_grad(i));
    }
    if model.has_bias() {
        out.extend((0..model.m() as u32).map(|i| g.bias_grad(i)));
    }
    out
}

pub(crate) fn central_difference(model: &FactorModel, h: f64, f: impl Fn(&FactorModel) -> f64) -> Vec<f64> {
    (0..param_len(model))
        .map(|k| {
            let mut plus = model.clone();
            perturb(&mut plus, k, h);
            let mut minus = model.clone();
            perturb(&mut minus, k, -h);
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

pub(crate) fn assert_grad_close(analytic: &[f64], numeric: &[f64], tol: f64) {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt())
        .max(1e-12);
    assert!(diff / scale < tol, "relative gradient error {}", diff / scale);
}
