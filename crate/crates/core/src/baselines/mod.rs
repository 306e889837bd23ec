//! Comparison methods on the same data, streams and metrics as FedMD-CG:
//! FedAvg, local training (LT), FedPer and LG-FedAvg.
//!
//! Every method trains with plain cross entropy and differs only in which
//! model part the server averages.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::evalpriv::metrics::{global_test_accuracy, local_test_accuracy, AbortRecord, MetricsLog, RoundMetrics};
use crate::fedcore::{initial_parameters, sample_batch, weighted_average, ClientData, Federation, RunConfig};
use crate::losses::ce_loss;
use crate::models::{classifier_forward, extractor_forward, ClientModel, ModelSpec, CLASSIFIER_PREFIX, EXTRACTOR_PREFIX};
use crate::numerics::{sgd_step, Bound, Graph, ParamSet, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    FedAvg,
    Lt,
    FedPer,
    LgFedAvg,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FedAvg, Method::Lt, Method::FedPer, Method::LgFedAvg];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Method::FedAvg),
            "lt" => Ok(Method::Lt),
            "fedper" => Ok(Method::FedPer),
            "lgfedavg" => Ok(Method::LgFedAvg),
            other => Err(Error::Config(format!("unknown baseline `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::Lt => "lt",
            Method::FedPer => "fedper",
            Method::LgFedAvg => "lgfedavg",
        }
    }

    pub fn policy(self) -> SharingPolicy {
        let (extractor, classifier) = match self {
            Method::FedAvg => (true, true),
            Method::Lt => (false, false),
            Method::FedPer => (true, false),
            Method::LgFedAvg => (false, true),
        };
        SharingPolicy { extractor, classifier }
    }
}

/// Model parts a method sends to the server for weighted averaging.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SharingPolicy {
    pub extractor: bool,
    pub classifier: bool,
}

impl SharingPolicy {
    /// The shared parameters of `model`, prefixed by part.
    pub fn shared(&self, model: &ClientModel) -> ParamSet {
        let mut out = ParamSet::new();
        if self.extractor {
            out.merge(model.extractor.prefixed(EXTRACTOR_PREFIX));
        }
        if self.classifier {
            out.merge(model.classifier.prefixed(CLASSIFIER_PREFIX));
        }
        out
    }

    /// Overwrites the shared parts of `model` with `global`.
    pub fn install(&self, model: &mut ClientModel, global: &ParamSet) {
        let g = ClientModel::from_full(global);
        if self.extractor {
            model.extractor = g.extractor;
        }
        if self.classifier {
            model.classifier = g.classifier;
        }
    }
}

/// `client_steps` SGD steps of plain cross entropy, drawing batches from the
/// same "model" stream as the FedMD-CG client. Returns the mean loss.
pub fn local_ce_training(
    model: &mut ClientModel,
    spec: &ModelSpec,
    data: ClientData,
    id: usize,
    cfg: &RunConfig,
    r: usize,
) -> Result<f64> {
    if data.indices.is_empty() {
        return Err(Error::InvalidArgument(format!("client {id} has no training data")));
    }
    let mut rng = RngStream::keyed("model", cfg.seed, &[id as u64, r as u64]);
    let mut total = 0.0;
    for step in 0..cfg.client_steps {
        let (x, y) = sample_batch(&mut rng, data, cfg.batch);
        let mut g = Graph::new();
        let fe = Bound::bind(&mut g, &model.extractor, true);
        let cl = Bound::bind(&mut g, &model.classifier, true);
        let xv = g.constant(x);
        let f = extractor_forward(&mut g, spec, &fe, xv)?;
        let logits = classifier_forward(&mut g, &cl, f)?;
        let loss = ce_loss(&mut g, logits, &y).map_err(|e| match e {
            Error::NonFinite(d) => Error::NonFinite(format!("client {id} at round {r}, step {step}: {d}")),
            other => other,
        })?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss of client {id} at round {r}, step {step}: {v}")));
        }
        total += v;
        let grads = g.backward(loss)?;
        sgd_step(&mut model.extractor, &fe.grads(&grads), cfg.lr_model, cfg.weight_decay)?;
        sgd_step(&mut model.classifier, &cl.grads(&grads), cfg.lr_model, cfg.weight_decay)?;
    }
    Ok(total / cfg.client_steps as f64)
}

/// State of a baseline run between rounds.
#[derive(Clone, Debug)]
pub struct Baseline<'a> {
    fed: &'a Federation,
    cfg: RunConfig,
    method: Method,
    models: Vec<ClientModel>,
    /// Server copy of the shared parts; empty for LT.
    global: ParamSet,
    round: usize,
}

impl<'a> Baseline<'a> {
    pub fn new(method: Method, fed: &'a Federation, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.clients != fed.clients() {
            return Err(Error::Config(format!(
                "config has {} clients but the federation has {}",
                cfg.clients,
                fed.clients()
            )));
        }
        let (model, _) = initial_parameters(&fed.spec, cfg.seed);
        let global = method.policy().shared(&model);
        Ok(Baseline {
            fed,
            cfg,
            method,
            models: vec![model; fed.clients()],
            global,
            round: 0,
        })
    }

    pub fn models(&self) -> &[ClientModel] {
        &self.models
    }

    /// The server's averaged shared parameters.
    pub fn global_shared(&self) -> &ParamSet {
        &self.global
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        if self.round >= self.cfg.rounds {
            return Err(Error::InvalidArgument("all rounds already ran".into()));
        }
        let r = self.round + 1;
        let start = Instant::now();
        let policy = self.method.policy();
        let fed = self.fed;
        let mut model_loss = 0.0;
        for (id, model) in self.models.iter_mut().enumerate() {
            policy.install(model, &self.global);
            model_loss += local_ce_training(model, &fed.spec, fed.client_data(id), id, &self.cfg, r)?;
        }
        if !self.global.is_empty() {
            let shared: Vec<ParamSet> = self.models.iter().map(|m| policy.shared(m)).collect();
            let refs: Vec<&ParamSet> = shared.iter().collect();
            self.global = weighted_average(&refs, &fed.weights())?;
        }
        let models: Vec<&ClientModel> = self.models.iter().collect();
        let local_acc = local_test_accuracy(&fed.spec, &models, &fed.test, &fed.test_shards)?;
        let global_acc = global_test_accuracy(&fed.spec, &models, &fed.weights(), &fed.test)?;
        self.round = r;
        Ok(RoundMetrics {
            round: r,
            local_acc,
            global_acc,
            gd_loss: None,
            model_loss: model_loss / self.models.len() as f64,
            gen_loss: None,
            server_loss: None,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs the remaining rounds; a non-finite loss ends the log with an
    /// abort record.
    pub fn run(&mut self) -> Result<MetricsLog> {
        let mut log = MetricsLog::default();
        while self.round < self.cfg.rounds {
            match self.run_round() {
                Ok(m) => log.rows.push(m),
                Err(Error::NonFinite(detail)) => {
                    log.abort = Some(AbortRecord {
                        round: self.round + 1,
                        detail,
                    });
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(log)
    }
}

pub fn run_baseline(method: Method, fed: &Federation, cfg: &RunConfig) -> Result<MetricsLog> {
    Baseline::new(method, fed, cfg.clone())?.run()
}
