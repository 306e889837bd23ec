//! Central finite-difference verification of graph gradients.

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` per input.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative L2 error between two gradient vectors, with an absolute floor so
/// that two vanishing gradients compare as equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `h`, for every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::shape("check_gradients", "objective must be scalar"));
    }
    let grads = g.backward(out)?;

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        let mut numeric = vec![0.0; inputs[i].numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        rel_errors.push(relative_error(analytic.data(), &numeric));
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        rel_errors,
        max_rel_error,
    })
}

/// Directional variant of [`check_gradients`] for large inputs: compares
/// `grad . u` with `(f(x + h u) - f(x - h u)) / 2h` for each random unit
/// direction `u` drawn over all inputs jointly. Returns one relative error
/// per direction.
pub fn check_directional<F>(
    inputs: &[Tensor],
    h: f64,
    directions: usize,
    rng: &mut super::RngStream,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();

    let mut rel_errors = Vec::with_capacity(directions);
    for _ in 0..directions {
        let mut dirs: Vec<Tensor> = inputs.iter().map(|t| rng.normal_tensor(t.shape())).collect();
        let total: f64 = dirs.iter().map(|d| d.data().iter().map(|v| v * v).sum::<f64>()).sum();
        let inv = 1.0 / total.sqrt().max(1e-300);
        for d in &mut dirs {
            for v in d.data_mut() {
                *v *= inv;
            }
        }
        let shifted = |sign: f64| -> Vec<Tensor> {
            inputs
                .iter()
                .zip(&dirs)
                .map(|(x, d)| x.zip_map(d, |a, b| a + sign * h * b).expect("same shape"))
                .collect()
        };
        let numeric = (eval(&shifted(1.0))? - eval(&shifted(-1.0))?) / (2.0 * h);
        let exact: f64 = analytic
            .iter()
            .zip(&dirs)
            .map(|(a, d)| a.data().iter().zip(d.data()).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        rel_errors.push(relative_error(&[exact], &[numeric]));
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        rel_errors,
        max_rel_error,
    })
}

/// Reduces any tensor to a scalar through a fixed random projection, so that
/// non-scalar operations can be checked with [`check_gradients`].
pub fn project(g: &mut Graph, x: Var, weights: &Tensor) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let w = g.constant(weights.clone().reshape(&shape)?);
    let prod = g.mul(x, w)?;
    Ok(g.sum(prod))
}
