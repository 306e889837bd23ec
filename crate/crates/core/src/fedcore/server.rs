//! Uploads, weighted averaging and server-side distillation.

use super::client::ClientState;
use super::config::RunConfig;
use crate::datasets::{aggregate_label_distribution, LabelCounter, LabelDistribution};
use crate::error::{Error, Result};
use crate::losses::{server_distill_losses, server_objective, GenRef, Teacher};
use crate::models::{apply_bn_stats, deserialize_like, serialize_params, BnMode, GeneratorParams, ModelSpec};
use crate::numerics::{adam_step, AdamConfig, AdamState, Bound, Graph, ParamSet, RngStream, Tensor};

/// What a client sends to the server. The feature extractor never leaves
/// the client, so it has no field here.
#[derive(Clone, Debug, PartialEq)]
pub struct Upload {
    pub client: usize,
    pub generator: Vec<u8>,
    pub classifier: Vec<u8>,
    pub counter: LabelCounter,
}

impl Upload {
    pub fn new(state: &ClientState, counter: LabelCounter) -> Self {
        Upload {
            client: state.id,
            generator: serialize_params(&state.gen),
            classifier: serialize_params(&state.model.classifier),
            counter,
        }
    }

    /// Decodes `(generator, classifier)` against layout templates.
    pub fn decode(&self, gen: &ParamSet, classifier: &ParamSet) -> Result<(GeneratorParams, ParamSet)> {
        Ok((
            deserialize_like(&self.generator, gen)?,
            deserialize_like(&self.classifier, classifier)?,
        ))
    }
}

/// `sum_i (n_i / sum_j n_j) * items[i]`, over trainable parameters and
/// non-trainable state alike. Terms are added in the given order.
pub fn weighted_average(items: &[&ParamSet], weights: &[f64]) -> Result<ParamSet> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("weighted_average of nothing".into()))?;
    if items.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} items but {} weights",
            items.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("total weight is zero".into()));
    }
    let mut out = first.zeros_like();
    for (k, v) in first.states() {
        out.insert_state(k.clone(), Tensor::zeros(v.shape()));
    }
    for (item, &w) in items.iter().zip(weights) {
        item.check_layout(first, "weighted_average")?;
        let share = w / total;
        let names: Vec<String> = item.params().map(|(k, _)| k.clone()).collect();
        for k in names {
            add_scaled(out.get_mut(&k)?.data_mut(), item.get(&k)?.data(), share);
        }
        let states: Vec<String> = item.states().map(|(k, _)| k.clone()).collect();
        for k in states {
            add_scaled(out.state_mut(&k)?.data_mut(), item.state(&k)?.data(), share);
        }
    }
    Ok(out)
}

fn add_scaled(acc: &mut [f64], x: &[f64], s: f64) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += s * v;
    }
}

/// Server-held global generator, global classifier and label distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalState {
    pub gen: GeneratorParams,
    pub classifier: ParamSet,
    pub label_dist: LabelDistribution,
}

/// Aggregates one round of uploads into `global`. Uploads are processed in
/// ascending client id whatever their order in the slice. Returns the mean
/// distillation objective when the mode distills.
pub fn server_aggregate(
    global: &mut GlobalState,
    uploads: &[Upload],
    spec: &ModelSpec,
    cfg: &RunConfig,
    r: usize,
) -> Result<Option<f64>> {
    if uploads.is_empty() {
        return Err(Error::InvalidArgument("no uploads to aggregate".into()));
    }
    let mut sorted: Vec<&Upload> = uploads.iter().collect();
    sorted.sort_by_key(|u| u.client);
    let decoded: Vec<(GeneratorParams, ParamSet)> = sorted
        .iter()
        .map(|u| u.decode(&global.gen, &global.classifier))
        .collect::<Result<_>>()?;
    let counters: Vec<LabelCounter> = sorted.iter().map(|u| u.counter.clone()).collect();
    global.label_dist = aggregate_label_distribution(&counters);

    let weights: Vec<f64> = counters.iter().map(|c| c.total() as f64).collect();
    let gens: Vec<&ParamSet> = decoded.iter().map(|(g, _)| g).collect();
    let clss: Vec<&ParamSet> = decoded.iter().map(|(_, c)| c).collect();
    global.gen = weighted_average(&gens, &weights)?;
    global.classifier = weighted_average(&clss, &weights)?;

    let Some(which) = cfg.agg.server_terms() else {
        return Ok(None);
    };
    let teachers: Vec<Teacher> = decoded
        .iter()
        .zip(&counters)
        .map(|((g, c), counter)| Teacher {
            gen: g,
            classifier: c,
            counter,
        })
        .collect();
    let adam = AdamConfig::new(cfg.lr_server, cfg.weight_decay);
    let (mut gen_state, mut cls_state) = (AdamState::fresh(), AdamState::fresh());
    let mut rng = RngStream::keyed("server", cfg.seed, &[r as u64]);
    let mut total = 0.0;
    for step in 0..cfg.server_steps {
        let z = rng.normal_tensor(&[cfg.batch, spec.noise_dim]);
        let yhat = global.label_dist.sample(&mut rng, cfg.batch);
        let mut g = Graph::new();
        let gb = Bound::bind(&mut g, &global.gen, true);
        let cb = Bound::bind(&mut g, &global.classifier, true);
        let gen = GenRef {
            bound: &gb,
            params: &global.gen,
            mode: BnMode::Train,
        };
        let zv = g.constant(z);
        let losses = server_distill_losses(&mut g, gen, &cb, &teachers, zv, &yhat, spec.classes, which).map_err(|e| match e {
            Error::NonFinite(d) => Error::NonFinite(format!("server at round {r}, step {step}: {d}")),
            other => other,
        })?;
        let obj = server_objective(&mut g, &losses)?;
        let v = g.scalar(obj);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("server loss at round {r}, step {step}: {v}")));
        }
        total += v;
        let grads = g.backward(obj)?;
        adam_step(&mut global.gen, &gb.grads(&grads), &adam, &mut gen_state)?;
        adam_step(&mut global.classifier, &cb.grads(&grads), &adam, &mut cls_state)?;
        apply_bn_stats(&mut global.gen, &losses.stats)?;
    }
    Ok(Some(total / cfg.server_steps as f64))
}
