//! Parameter initialization and graph binding helpers for the layer types
//! used by the models.

use std::collections::BTreeMap;

use super::graph::{BatchStats, Gradients, Graph, Var};
use super::{ParamSet, RngStream, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `{name}.weight: [out, in]` from uniform(+-1/sqrt(in)) and a zero `{name}.bias`.
pub fn init_linear(ps: &mut ParamSet, rng: &mut RngStream, name: &str, fan_in: usize, fan_out: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    ps.insert(format!("{name}.weight"), rng.uniform_tensor(&[fan_out, fan_in], -bound, bound));
    ps.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

/// `{name}.weight: [c_out, c_in, k, k]` with fan-in `c_in * k * k`.
pub fn init_conv(ps: &mut ParamSet, rng: &mut RngStream, name: &str, c_in: usize, c_out: usize, k: usize) {
    let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
    ps.insert(format!("{name}.weight"), rng.uniform_tensor(&[c_out, c_in, k, k], -bound, bound));
    ps.insert(format!("{name}.bias"), Tensor::zeros(&[c_out]));
}

/// Batch-norm scale 1, shift 0, running mean 0 and running variance 1.
pub fn init_batchnorm(ps: &mut ParamSet, name: &str, n: usize) {
    ps.insert(format!("{name}.weight"), Tensor::full(&[n], 1.0));
    ps.insert(format!("{name}.bias"), Tensor::zeros(&[n]));
    ps.insert_state(format!("{name}.running_mean"), Tensor::zeros(&[n]));
    ps.insert_state(format!("{name}.running_var"), Tensor::full(&[n], 1.0));
}

/// `running <- (1 - momentum) * running + momentum * batch`.
pub fn update_running_stats(ps: &mut ParamSet, name: &str, stats: &BatchStats) -> Result<()> {
    for (key, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var_unbiased)] {
        let t = ps.state_mut(&format!("{name}.{key}"))?;
        if t.numel() != batch.len() {
            return Err(Error::ParamMismatch(format!("{name}.{key} length")));
        }
        for (r, b) in t.data_mut().iter_mut().zip(batch) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
    Ok(())
}

/// A [`ParamSet`]'s trainable tensors placed on a graph as leaves.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Binds every trainable parameter. With `trainable = false` the leaves
    /// are constants and receive no gradient.
    pub fn bind(g: &mut Graph, ps: &ParamSet, trainable: bool) -> Bound {
        let vars = ps
            .params()
            .map(|(k, v)| (k.clone(), g.leaf(v.clone(), trainable)))
            .collect();
        Bound { vars }
    }

    /// Wraps existing graph nodes under parameter names.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Bound {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::ParamMismatch(format!("unbound parameter `{name}`")))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Subset whose names start with `prefix`, keeping full names.
    pub fn with_prefix(&self, prefix: &str) -> Bound {
        Bound {
            vars: self
                .vars
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Gradients of the bound leaves, keyed like the source set.
    pub fn grads(&self, grads: &Gradients) -> ParamSet {
        let mut out = ParamSet::new();
        for (k, v) in &self.vars {
            out.insert(k.clone(), grads.get(*v));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_init_respects_bound() {
        let mut ps = ParamSet::new();
        let mut rng = RngStream::new("init", 0);
        init_linear(&mut ps, &mut rng, "fc", 16, 4);
        let w = ps.get("fc.weight").unwrap();
        assert_eq!(w.shape(), &[4, 16]);
        assert!(w.data().iter().all(|v| v.abs() <= 0.25));
        assert!(ps.get("fc.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut ps = ParamSet::new();
        init_batchnorm(&mut ps, "bn", 2);
        let stats = BatchStats {
            mean: vec![1.0, 2.0],
            var_unbiased: vec![3.0, 5.0],
        };
        update_running_stats(&mut ps, "bn", &stats).unwrap();
        assert_eq!(ps.state("bn.running_mean").unwrap().data(), &[0.1, 0.2]);
        let rv = ps.state("bn.running_var").unwrap().data();
        assert!((rv[0] - 1.2).abs() < 1e-15 && (rv[1] - 1.4).abs() < 1e-15);
    }
}
