use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors plus non-trainable state (batch-norm running
/// statistics). Both maps iterate in lexicographic key order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
    state: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_state(&mut self, name: impl Into<String>, value: Tensor) {
        self.state.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter `{name}`")))
    }

    pub fn state(&self, name: &str) -> Result<&Tensor> {
        self.state
            .get(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing state `{name}`")))
    }

    pub fn state_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.state
            .get_mut(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing state `{name}`")))
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn states(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.state.iter()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.state.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Same parameter and state keys with the same shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        fn layout(m: &BTreeMap<String, Tensor>) -> Vec<(&String, &[usize])> {
            m.iter().map(|(k, v)| (k, v.shape())).collect()
        }
        layout(&self.params) == layout(&other.params) && layout(&self.state) == layout(&other.state)
    }

    pub fn check_layout(&self, other: &ParamSet, context: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::ParamMismatch(format!(
                "{context}: key or shape disagreement"
            )))
        }
    }

    /// Zero tensors shaped like the trainable parameters (no state).
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
            state: BTreeMap::new(),
        }
    }

    /// Copy with every key prefixed by `prefix`.
    pub fn prefixed(&self, prefix: &str) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
                .collect(),
            state: self
                .state
                .iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
                .collect(),
        }
    }

    /// Entries whose key starts with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet {
        let pick = |m: &BTreeMap<String, Tensor>| {
            m.iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect()
        };
        ParamSet {
            params: pick(&self.params),
            state: pick(&self.state),
        }
    }

    pub fn merge(&mut self, other: ParamSet) {
        self.params.extend(other.params);
        self.state.extend(other.state);
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().chain(self.state.values()).all(Tensor::is_finite)
    }

    /// Largest absolute element difference over params and state.
    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.params.values().zip(other.params.values()) {
            worst = worst.max(a.max_abs_diff(b));
        }
        for (a, b) in self.state.values().zip(other.state.values()) {
            worst = worst.max(a.max_abs_diff(b));
        }
        worst
    }

    /// SHA-256 over keys, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (tag, map) in [(b'p', &self.params), (b's', &self.state)] {
            for (k, v) in map {
                h.update([tag]);
                h.update(k.as_bytes());
                for d in v.shape() {
                    h.update((*d as u64).to_le_bytes());
                }
                for x in v.data() {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
