//! Accuracy metrics, the generator/classifier consistency loss and the
//! per-round log.

use crate::datasets::{Dataset, LabelCounter, LabelDistribution};
use crate::error::{Error, Result};
use crate::fedcore::weighted_average;
use crate::losses::ce_loss;
use crate::models::{classifier_forward, generate, predict, BnMode, ClientModel, GeneratorParams, ModelSpec};
use crate::numerics::{Bound, Graph, ParamSet, RngStream};

/// Probe batch size of [`gd_consistency_loss`].
pub const PROBE_BATCH: usize = 256;

/// Fraction of `indices` of `ds` that `model` classifies correctly.
pub fn accuracy(spec: &ModelSpec, model: &ClientModel, ds: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("accuracy on an empty set".into()));
    }
    let (x, y) = ds.batch(indices);
    let pred = predict(spec, model, &x)?;
    let correct = pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / indices.len() as f64)
}

/// Mean over clients of each local model's accuracy on its own test shard.
pub fn local_test_accuracy(
    spec: &ModelSpec,
    models: &[&ClientModel],
    test: &Dataset,
    shards: &[Vec<usize>],
) -> Result<f64> {
    if models.is_empty() || models.len() != shards.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models for {} test shards",
            models.len(),
            shards.len()
        )));
    }
    let mut total = 0.0;
    for (m, shard) in models.iter().zip(shards) {
        total += accuracy(spec, m, test, shard)?;
    }
    Ok(total / models.len() as f64)
}

/// The `n_i`-weighted average of full local models (extractor and classifier).
pub fn virtual_global_model(models: &[&ClientModel], weights: &[f64]) -> Result<ClientModel> {
    let ext: Vec<&ParamSet> = models.iter().map(|m| &m.extractor).collect();
    let cls: Vec<&ParamSet> = models.iter().map(|m| &m.classifier).collect();
    Ok(ClientModel {
        extractor: weighted_average(&ext, weights)?,
        classifier: weighted_average(&cls, weights)?,
    })
}

/// Accuracy of [`virtual_global_model`] on the whole test set.
pub fn global_test_accuracy(spec: &ModelSpec, models: &[&ClientModel], weights: &[f64], test: &Dataset) -> Result<f64> {
    let global = virtual_global_model(models, weights)?;
    let all: Vec<usize> = (0..test.len()).collect();
    accuracy(spec, &global, test, &all)
}

/// Cross entropy of a client's classifier on its own generator's outputs,
/// over a fixed probe batch. Labels follow the client's label distribution;
/// the generator runs on running statistics.
pub fn gd_consistency_loss(
    spec: &ModelSpec,
    classifier: &ParamSet,
    gen: &GeneratorParams,
    counter: &LabelCounter,
    seed: u64,
    client: usize,
) -> Result<f64> {
    let total = counter.total();
    if total == 0 {
        return Err(Error::InvalidArgument("consistency probe needs a non-empty counter".into()));
    }
    let dist = LabelDistribution {
        probs: counter.counts.iter().map(|&n| n as f64 / total as f64).collect(),
    };
    let mut rng = RngStream::keyed("probe", seed, &[client as u64]);
    let z = rng.normal_tensor(&[PROBE_BATCH, spec.noise_dim]);
    let y = dist.sample(&mut rng, PROBE_BATCH);
    let fake = generate(gen, &z, &y, spec.classes, BnMode::Eval)?;
    let mut g = Graph::new();
    let cb = Bound::bind(&mut g, classifier, false);
    let f = g.constant(fake);
    let logits = classifier_forward(&mut g, &cb, f)?;
    let l = ce_loss(&mut g, logits, &y)?;
    Ok(g.scalar(l))
}

/// One completed round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub local_acc: f64,
    pub global_acc: f64,
    /// Mean over clients; absent for methods without generators.
    pub gd_loss: Option<f64>,
    /// Mean local model objective over clients and steps.
    pub model_loss: f64,
    pub gen_loss: Option<f64>,
    pub server_loss: Option<f64>,
    /// Wall-clock seconds; kept out of the deterministic CSV.
    pub seconds: f64,
}

/// Diagnostic for a run stopped by a non-finite value.
#[derive(Clone, Debug, PartialEq)]
pub struct AbortRecord {
    pub round: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<RoundMetrics>,
    pub abort: Option<AbortRecord>,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&RoundMetrics> {
        self.rows.last()
    }

    /// True when every deterministic field matches bit for bit.
    pub fn same_metrics(&self, other: &MetricsLog) -> bool {
        let key = |m: &RoundMetrics| {
            (
                m.round,
                m.local_acc.to_bits(),
                m.global_acc.to_bits(),
                m.gd_loss.map(f64::to_bits),
                m.model_loss.to_bits(),
                m.gen_loss.map(f64::to_bits),
                m.server_loss.map(f64::to_bits),
            )
        };
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| key(a) == key(b))
            && self.abort == other.abort
    }
}
