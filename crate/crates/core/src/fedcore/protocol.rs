//! Data placement and the full round loop.

use std::time::Instant;

use super::client::{client_generator_update, client_model_update, Broadcast, ClientData, ClientState};
use super::config::RunConfig;
use super::server::{server_aggregate, GlobalState, Upload};
use crate::datasets::{count_labels, dirichlet_partition_nonempty, split_test_evenly, Dataset, LabelCounter, LabelDistribution, PartitionSpec};
use crate::error::{Error, Result};
use crate::evalpriv::metrics::{gd_consistency_loss, global_test_accuracy, local_test_accuracy, AbortRecord, MetricsLog, RoundMetrics};
use crate::models::{init_generator, ClientModel, GeneratorParams, ModelSpec};
use crate::numerics::{AdamState, RngStream};

/// Datasets, model shape and the client split shared by every method.
#[derive(Clone, Debug)]
pub struct Federation {
    pub spec: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    /// Training indices per client, sorted.
    pub parts: Vec<Vec<usize>>,
    /// Even IID test shards for local accuracy.
    pub test_shards: Vec<Vec<usize>>,
    /// Redraws needed to give every client at least one sample.
    pub partition_attempt: u64,
}

impl Federation {
    pub fn new(spec: ModelSpec, train: Dataset, test: Dataset, clients: usize, omega: f64, seed: u64) -> Result<Self> {
        if train.classes != spec.classes || test.classes != spec.classes {
            return Err(Error::InvalidArgument("dataset and model class counts differ".into()));
        }
        if train.input_shape() != spec.input_shape || test.input_shape() != spec.input_shape {
            return Err(Error::InvalidArgument("dataset and model input shapes differ".into()));
        }
        let (parts, partition_attempt) = dirichlet_partition_nonempty(&train, &PartitionSpec { omega, clients, seed })?;
        let test_shards = split_test_evenly(&test, clients, seed)?;
        Ok(Federation {
            spec,
            train,
            test,
            parts,
            test_shards,
            partition_attempt,
        })
    }

    pub fn clients(&self) -> usize {
        self.parts.len()
    }

    pub fn client_data(&self, i: usize) -> ClientData<'_> {
        ClientData {
            train: &self.train,
            indices: &self.parts[i],
        }
    }

    pub fn counters(&self) -> Vec<LabelCounter> {
        self.parts.iter().map(|p| count_labels(&self.train, p)).collect()
    }

    /// Client sizes `n_i` as averaging weights.
    pub fn weights(&self) -> Vec<f64> {
        self.parts.iter().map(|p| p.len() as f64).collect()
    }

    pub(crate) fn check(&self, cfg: &RunConfig) -> Result<()> {
        cfg.validate()?;
        if cfg.clients != self.clients() {
            return Err(Error::Config(format!(
                "config has {} clients but the federation has {}",
                cfg.clients,
                self.clients()
            )));
        }
        Ok(())
    }
}

/// The common starting point of every client and of the server: one model
/// and one generator drawn from the "init" stream.
pub fn initial_parameters(spec: &ModelSpec, seed: u64) -> (ClientModel, GeneratorParams) {
    let mut rng = RngStream::new("init", seed);
    let model = ClientModel::init(spec, &mut rng);
    let gen = init_generator(spec, &mut rng);
    (model, gen)
}

/// FedMD-CG state between rounds.
#[derive(Clone, Debug)]
pub struct Protocol<'a> {
    fed: &'a Federation,
    cfg: RunConfig,
    clients: Vec<ClientState>,
    global: GlobalState,
    round: usize,
    /// Upload records of the last completed round.
    last_uploads: Vec<Upload>,
}

impl<'a> Protocol<'a> {
    pub fn new(fed: &'a Federation, cfg: RunConfig) -> Result<Self> {
        fed.check(&cfg)?;
        let (model, gen) = initial_parameters(&fed.spec, cfg.seed);
        let clients = (0..fed.clients())
            .map(|id| ClientState {
                id,
                model: model.clone(),
                gen: gen.clone(),
                gen_adam: AdamState::fresh(),
            })
            .collect();
        let global = GlobalState {
            gen,
            classifier: model.classifier,
            label_dist: LabelDistribution::uniform(fed.spec.classes),
        };
        Ok(Protocol {
            fed,
            cfg,
            clients,
            global,
            round: 0,
            last_uploads: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn global(&self) -> &GlobalState {
        &self.global
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    pub fn last_uploads(&self) -> &[Upload] {
        &self.last_uploads
    }

    /// Runs the next round: broadcast, both client stages, upload, server
    /// aggregation, evaluation.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        if self.round >= self.cfg.rounds {
            return Err(Error::InvalidArgument("all rounds already ran".into()));
        }
        let r = self.round + 1;
        let start = Instant::now();
        let fed = self.fed;
        let spec = &fed.spec;
        let snapshot = self.global.clone();
        let bc = Broadcast {
            gen: &snapshot.gen,
            classifier: &snapshot.classifier,
            label_dist: &snapshot.label_dist,
        };
        let mut uploads = Vec::with_capacity(self.clients.len());
        let (mut model_loss, mut gen_loss, mut gd_loss) = (0.0, 0.0, 0.0);
        for state in &mut self.clients {
            let data = fed.client_data(state.id);
            let upd = client_model_update(state, spec, &bc, data, &self.cfg, r)?;
            model_loss += upd.mean_loss;
            gen_loss += client_generator_update(state, spec, data, &self.cfg, r)?;
            gd_loss += gd_consistency_loss(spec, &state.model.classifier, &state.gen, &upd.counter, self.cfg.seed, state.id)?;
            uploads.push(Upload::new(state, upd.counter));
        }
        let server_loss = server_aggregate(&mut self.global, &uploads, spec, &self.cfg, r)?;
        self.last_uploads = uploads;

        let n = self.clients.len() as f64;
        let models: Vec<&ClientModel> = self.clients.iter().map(|c| &c.model).collect();
        let local_acc = local_test_accuracy(spec, &models, &fed.test, &fed.test_shards)?;
        let global_acc = global_test_accuracy(spec, &models, &fed.weights(), &fed.test)?;
        self.round = r;
        Ok(RoundMetrics {
            round: r,
            local_acc,
            global_acc,
            gd_loss: Some(gd_loss / n),
            model_loss: model_loss / n,
            gen_loss: Some(gen_loss / n),
            server_loss,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs the remaining rounds. A non-finite loss stops the run and is
    /// recorded in the log instead of being returned as an error.
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

/// Runs FedMD-CG for `cfg.rounds` rounds on `fed`.
pub fn run_protocol(fed: &Federation, cfg: &RunConfig) -> Result<MetricsLog> {
    Protocol::new(fed, cfg.clone())?.run()
}
