//! The two client stages: local model update, then local generator update.

use super::config::{ramp_lambda, AggMode, RunConfig};
use crate::datasets::{count_labels, Dataset, LabelCounter, LabelDistribution};
use crate::error::{Error, Result};
use crate::losses::{
    backward_kd_losses, local_generator_objective, local_model_objective, local_model_terms, ClientRef, GenRef,
    ModelWeights,
};
use crate::models::{apply_bn_stats, BnMode, ClientModel, GeneratorParams, ModelSpec};
use crate::numerics::{adam_step, sgd_step, AdamConfig, AdamState, Bound, Graph, ParamSet, RngStream, Tensor};

/// A client's private training data: indices into a shared dataset.
#[derive(Clone, Copy)]
pub struct ClientData<'a> {
    pub train: &'a Dataset,
    pub indices: &'a [usize],
}

impl ClientData<'_> {
    pub fn counter(&self) -> LabelCounter {
        count_labels(self.train, self.indices)
    }

    fn check(&self, id: usize) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::InvalidArgument(format!("client {id} has no training data")));
        }
        Ok(())
    }
}

/// Draws a batch of exactly `b` samples; see [`RngStream::batch_indices`].
pub fn sample_batch(rng: &mut RngStream, data: ClientData, b: usize) -> (Tensor, Vec<usize>) {
    let local = rng.batch_indices(data.indices.len(), b);
    let global: Vec<usize> = local.iter().map(|&i| data.indices[i]).collect();
    data.train.batch(&global)
}

/// Everything a client keeps between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub model: ClientModel,
    pub gen: GeneratorParams,
    pub gen_adam: AdamState,
}

/// What the server sends at the start of a round.
#[derive(Clone, Copy)]
pub struct Broadcast<'a> {
    pub gen: &'a GeneratorParams,
    pub classifier: &'a ParamSet,
    pub label_dist: &'a LabelDistribution,
}

/// Ramped weights for round `r`, with `AveStar` forcing `l1 = l3 = 0`.
pub fn model_weights(cfg: &RunConfig, r: usize) -> Result<ModelWeights> {
    let h = &cfg.hyper;
    let ramp = |pre| ramp_lambda(pre, r, cfg.rounds, h.ramp_exponent);
    let mut w = ModelWeights {
        lambda1: ramp(h.lambda1)?,
        lambda2: ramp(h.lambda2)?,
        lambda3: ramp(h.lambda3)?,
    };
    if cfg.agg == AggMode::AveStar {
        w.lambda1 = 0.0;
        w.lambda3 = 0.0;
    }
    Ok(w)
}

fn finite(v: f64, what: &str, id: usize, r: usize, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} of client {id} at round {r}, step {step}: {v}")))
    }
}

fn context(e: Error, id: usize, r: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(d) => Error::NonFinite(format!("client {id} at round {r}, step {step}: {d}")),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelUpdate {
    /// Mean objective over the local steps.
    pub mean_loss: f64,
    pub counter: LabelCounter,
}

/// Inputs of one local model step.
pub struct ModelBatch<'a> {
    pub x: Tensor,
    pub y: &'a [usize],
    pub z: Tensor,
    pub z2: Tensor,
    pub yhat: &'a [usize],
}

/// One SGD step on the local model objective; returns the objective before
/// the step. The objective is not checked for finiteness.
pub fn model_step(
    model: &mut ClientModel,
    spec: &ModelSpec,
    global_gen: &GeneratorParams,
    batch: ModelBatch,
    w: ModelWeights,
    cfg: &RunConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let fe = Bound::bind(&mut g, &model.extractor, true);
    let cl = Bound::bind(&mut g, &model.classifier, true);
    let gb = Bound::bind(&mut g, global_gen, false);
    let client = ClientRef {
        spec,
        extractor: &fe,
        classifier: &cl,
    };
    let gen = GenRef {
        bound: &gb,
        params: global_gen,
        mode: BnMode::Eval,
    };
    let (xv, zv, z2v) = (g.constant(batch.x), g.constant(batch.z), g.constant(batch.z2));
    let terms = local_model_terms(&mut g, client, gen, xv, batch.y, zv, z2v, batch.yhat, w, cfg.detach_teacher)?;
    let obj = local_model_objective(&mut g, &terms, w)?;
    let grads = g.backward(obj)?;
    sgd_step(&mut model.extractor, &fe.grads(&grads), cfg.lr_model, cfg.weight_decay)?;
    sgd_step(&mut model.classifier, &cl.grads(&grads), cfg.lr_model, cfg.weight_decay)?;
    Ok(g.scalar(obj))
}

/// Overwrites the local classifier with the broadcast one, then runs
/// `client_steps` SGD steps on the local model objective.
pub fn client_model_update(
    state: &mut ClientState,
    spec: &ModelSpec,
    bc: &Broadcast,
    data: ClientData,
    cfg: &RunConfig,
    r: usize,
) -> Result<ModelUpdate> {
    data.check(state.id)?;
    let w = model_weights(cfg, r)?;
    state.model.classifier = bc.classifier.clone();
    let id = state.id as u64;
    let mut batches = RngStream::keyed("model", cfg.seed, &[id, r as u64]);
    let mut noise = RngStream::keyed("model-noise", cfg.seed, &[id, r as u64]);
    let mut total = 0.0;
    for step in 0..cfg.client_steps {
        let (x, y) = sample_batch(&mut batches, data, cfg.batch);
        let z = noise.normal_tensor(&[cfg.batch, spec.noise_dim]);
        let z2 = noise.normal_tensor(&[cfg.batch, spec.noise_dim]);
        let yhat = bc.label_dist.sample(&mut noise, cfg.batch);
        let batch = ModelBatch {
            x,
            y: &y,
            z,
            z2,
            yhat: &yhat,
        };
        let v = model_step(&mut state.model, spec, bc.gen, batch, w, cfg).map_err(|e| context(e, state.id, r, step))?;
        total += finite(v, "model loss", state.id, r, step)?;
    }
    Ok(ModelUpdate {
        mean_loss: total / cfg.client_steps as f64,
        counter: data.counter(),
    })
}

/// One Adam step of the local generator against the frozen local model,
/// followed by a running-statistics update. Returns the objective before the
/// step.
pub fn generator_step(
    state: &mut ClientState,
    spec: &ModelSpec,
    x: Tensor,
    y: &[usize],
    z: Tensor,
    adam: &AdamConfig,
    cfg: &RunConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let fe = Bound::bind(&mut g, &state.model.extractor, false);
    let cl = Bound::bind(&mut g, &state.model.classifier, false);
    let gb = Bound::bind(&mut g, &state.gen, true);
    let client = ClientRef {
        spec,
        extractor: &fe,
        classifier: &cl,
    };
    let gen = GenRef {
        bound: &gb,
        params: &state.gen,
        mode: BnMode::Train,
    };
    let (xv, zv) = (g.constant(x), g.constant(z));
    let k = backward_kd_losses(&mut g, client, gen, xv, y, zv)?;
    let obj = local_generator_objective(&mut g, &k, zv, y, spec.classes, &cfg.hyper, cfg.diversity)?;
    let grads = g.backward(obj)?;
    adam_step(&mut state.gen, &gb.grads(&grads), adam, &mut state.gen_adam)?;
    apply_bn_stats(&mut state.gen, &k.stats)?;
    Ok(g.scalar(obj))
}

/// `client_steps` Adam steps on the local generator objective against the
/// frozen local model. The generator and its Adam state persist.
pub fn client_generator_update(
    state: &mut ClientState,
    spec: &ModelSpec,
    data: ClientData,
    cfg: &RunConfig,
    r: usize,
) -> Result<f64> {
    data.check(state.id)?;
    let mut rng = RngStream::keyed("gen", cfg.seed, &[state.id as u64, r as u64]);
    let adam = AdamConfig::new(cfg.lr_gen, cfg.weight_decay);
    let mut total = 0.0;
    for step in 0..cfg.client_steps {
        let (x, y) = sample_batch(&mut rng, data, cfg.batch);
        let z = rng.normal_tensor(&[cfg.batch, spec.noise_dim]);
        let v = generator_step(state, spec, x, &y, z, &adam, cfg).map_err(|e| context(e, state.id, r, step))?;
        total += finite(v, "generator loss", state.id, r, step)?;
    }
    Ok(total / cfg.client_steps as f64)
}
