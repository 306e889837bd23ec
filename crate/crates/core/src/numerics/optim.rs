//! Plain SGD and Adam over [`ParamSet`]s. Both use coupled weight decay: the
//! decay term is added to the gradient before the update rule.

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

fn check(params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    let same = params.len() == grads.len()
        && params
            .params()
            .zip(grads.params())
            .all(|((ka, a), (kb, b))| ka == kb && a.shape() == b.shape());
    if !same {
        return Err(Error::ParamMismatch("optimizer: params and grads disagree".into()));
    }
    Ok(())
}

/// `p <- p - lr * (g + weight_decay * p)`.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, lr: f64, weight_decay: f64) -> Result<()> {
    check(params, grads, lr)?;
    for ((_, p), (_, g)) in params.params_mut().zip(grads.params()) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * (gv + weight_decay * *pv);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn fresh() -> Self {
        Self::default()
    }
}

pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, cfg: &AdamConfig, state: &mut AdamState) -> Result<()> {
    check(params, grads, cfg.lr)?;
    if state.t == 0 || state.m.len() != params.len() {
        state.m = params.params().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        state.v = state.m.clone();
        state.t = 0;
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), (m, v)) in params.params_mut().zip(grads.params()).zip(moments) {
        for (((pv, gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let grad = gv + cfg.weight_decay * *pv;
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * grad;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
