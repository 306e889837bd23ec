//! The four subcommands. Each reads an [`Experiment`] and writes only below
//! its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::{diversity_name, Experiment, MethodChoice};
use crate::baselines::Baseline;
use crate::datasets::{count_labels, dirichlet_partition_nonempty, PartitionSpec};
use crate::error::{Error, Result};
use crate::evalpriv::csvio::{self, AttackRow};
use crate::evalpriv::{audit_client, toy_divloss_pipeline, MetricsLog};
use crate::fedcore::{initial_parameters, Federation, Protocol};
use crate::models::{deserialize_like, serialize_params, ClientModel};
use crate::numerics::ParamSet;

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_blob(path: &Path, ps: &ParamSet) -> Result<()> {
    fs::write(path, serialize_params(ps)).map_err(|e| Error::io(path, e))
}

/// Outcome of one seed of `run`.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub log: MetricsLog,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub seeds: Vec<SeedRun>,
}

impl RunOutcome {
    pub fn aborted(&self) -> bool {
        self.seeds.iter().any(|s| s.log.abort.is_some())
    }
}

fn federation(exp: &Experiment, seed: u64) -> Result<Federation> {
    let (train, test) = exp.load_data()?;
    let cfg = exp.run_config(seed)?;
    let spec = exp.model_spec(train.input_shape(), train.classes)?;
    Federation::new(spec, train, test, cfg.clients, cfg.omega, seed)
}

/// Runs the method for every seed. Per seed: `metrics.csv`, `timing.csv` and
/// `checkpoints/`; across seeds: `summary.csv`.
pub fn cmd_run(exp: &Experiment) -> Result<RunOutcome> {
    let dir = exp.output_dir().join(exp.tag()?);
    mkdir(&dir)?;
    let mut seeds = Vec::new();
    for &seed in &exp.file.seeds {
        let fed = federation(exp, seed)?;
        let cfg = exp.run_config(seed)?;
        let sdir = dir.join(format!("seed_{seed}"));
        let ck = sdir.join("checkpoints");
        mkdir(&ck)?;
        let log = match exp.method {
            MethodChoice::FedMdCg => {
                let mut p = Protocol::new(&fed, cfg)?;
                let log = p.run()?;
                for c in p.clients() {
                    write_blob(&ck.join(format!("client_{}.bin", c.id)), &c.model.to_full())?;
                    write_blob(&ck.join(format!("generator_{}.bin", c.id)), &c.gen)?;
                }
                write_blob(&ck.join("global_generator.bin"), &p.global().gen)?;
                write_blob(&ck.join("global_classifier.bin"), &p.global().classifier)?;
                log
            }
            MethodChoice::Baseline(m) => {
                let mut b = Baseline::new(m, &fed, cfg)?;
                let log = b.run()?;
                for (i, model) in b.models().iter().enumerate() {
                    write_blob(&ck.join(format!("client_{i}.bin")), &model.to_full())?;
                }
                if !b.global_shared().is_empty() {
                    write_blob(&ck.join("global_shared.bin"), b.global_shared())?;
                }
                log
            }
        };
        csvio::write_metrics(&log, csvio::create(&sdir.join("metrics.csv"))?)?;
        csvio::write_timing(&log, csvio::create(&sdir.join("timing.csv"))?)?;
        seeds.push(SeedRun { seed, dir: sdir, log });
    }
    let logs: Vec<MetricsLog> = seeds.iter().map(|s| s.log.clone()).collect();
    csvio::write_summary(&csvio::summarize(&logs), csvio::create(&dir.join("summary.csv"))?)?;
    Ok(RunOutcome { dir, seeds })
}

/// Per-client label counts of the training partition, one file per seed.
pub fn cmd_partition_stats(exp: &Experiment) -> Result<Vec<(PathBuf, Vec<Vec<usize>>)>> {
    let (train, _) = exp.load_data()?;
    let dir = exp.output_dir().join("partition");
    mkdir(&dir)?;
    let mut out = Vec::new();
    for &seed in &exp.file.seeds {
        let cfg = exp.run_config(seed)?;
        let spec = PartitionSpec {
            omega: cfg.omega,
            clients: cfg.clients,
            seed,
        };
        let (parts, _) = dirichlet_partition_nonempty(&train, &spec)?;
        let counts: Vec<Vec<usize>> = parts.iter().map(|p| count_labels(&train, p).counts).collect();
        let path = dir.join(format!("seed_{seed}.csv"));
        csvio::write_partition(&counts, csvio::create(&path)?)?;
        out.push((path, counts));
    }
    Ok(out)
}

/// DLG against one client's checkpoint, on the first `attack.samples`
/// samples of its training partition under the first seed.
pub fn cmd_attack(exp: &Experiment, checkpoint: &Path, client: usize) -> Result<(PathBuf, AttackRow)> {
    let bytes = fs::read(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let seed = exp.file.seeds[0];
    let fed = federation(exp, seed)?;
    if client >= fed.clients() {
        return Err(Error::Config(format!("client {client} out of range (0..{})", fed.clients())));
    }
    let (template, _) = initial_parameters(&fed.spec, seed);
    let model = ClientModel::from_full(&deserialize_like(&bytes, &template.to_full())?);
    let cfg = exp.attack_config(exp.method)?;
    let samples = exp.file.attack.samples.unwrap_or(1);
    let part = &fed.parts[client];
    if part.len() < samples {
        return Err(Error::Config(format!(
            "client {client} holds {} samples, fewer than attack.samples = {samples}",
            part.len()
        )));
    }
    let (x, y) = fed.train.batch(&part[..samples]);
    let report = audit_client(&fed.spec, &model, &x, &y, &cfg)?;
    let row = AttackRow {
        client,
        psnr: report.psnr,
        match_loss: report.result.match_loss,
    };
    let dir = exp.output_dir().join("attack");
    mkdir(&dir)?;
    let path = dir.join(format!("{}_client_{client}.csv", exp.tag()?));
    csvio::write_attack(std::slice::from_ref(&row), csvio::create(&path)?)?;
    Ok((path, row))
}

/// One toy CSV per seed and diversity setting; returns
/// `(path, variant name, seed, within-class spread)`.
pub fn cmd_toyviz(exp: &Experiment) -> Result<Vec<(PathBuf, &'static str, u64, f64)>> {
    let (train, view) = exp.load_data()?;
    let spec = exp.toy_spec(train.input_shape(), train.classes)?;
    let dir = exp.output_dir().join("toyviz");
    mkdir(&dir)?;
    let mut out = Vec::new();
    for &seed in &exp.file.seeds {
        let cfg = exp.toy_config(seed)?;
        for variant in exp.toy_variants()? {
            let res = toy_divloss_pipeline(&spec, &train, &view, variant, &cfg)?;
            let name = diversity_name(variant);
            let path = dir.join(format!("{name}_seed_{seed}.csv"));
            csvio::write_toy(&res.points, csvio::create(&path)?)?;
            out.push((path, name, seed, res.generated_spread()));
        }
    }
    Ok(out)
}
