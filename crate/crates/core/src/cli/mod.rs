//! Command-line front end: `run`, `partition-stats`, `attack` and `toyviz`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_attack, cmd_partition_stats, cmd_run, cmd_toyviz, RunOutcome, SeedRun};
pub use config::{apply_override, Experiment, ExperimentFile, MethodChoice, DATA_DIR_ENV};

use crate::error::Result;

/// Exit status for a run that stopped on a non-finite value.
pub const EXIT_ABORTED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fedmdcg", version, about = "Federated learning with model decoupling and conditional generators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// `key=value`; dotted keys address a section, bare keys go to [run].
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// fedmdcg, fedavg, lt, fedper or lgfedavg.
    #[arg(long)]
    pub method: Option<String>,
    /// ave_star, ave, kd or kdc.
    #[arg(long)]
    pub agg: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

impl Common {
    pub fn experiment(&self) -> Result<Experiment> {
        let mut overrides = self.overrides.clone();
        if let Some(m) = &self.method {
            overrides.push(format!("method=\"{m}\""));
        }
        if let Some(a) = &self.agg {
            overrides.push(format!("run.agg=\"{a}\""));
        }
        if let Some(s) = &self.seeds {
            let list: Vec<String> = s.iter().map(u64::to_string).collect();
            overrides.push(format!("seeds=[{}]", list.join(",")));
        }
        Experiment::load(&self.config, &overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train over all seeds; write metrics, timings, a summary and checkpoints.
    Run(Common),
    /// Per-client label counts of the Dirichlet split.
    PartitionStats(Common),
    /// Gradient inversion against one client checkpoint.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        client: usize,
    },
    /// Generator output visualization with and without diversity.
    Toyviz(Common),
}

fn execute(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Run(c) => {
            let out = cmd_run(&c.experiment()?)?;
            for s in &out.seeds {
                match (s.log.last(), &s.log.abort) {
                    (_, Some(a)) => println!("seed {}: aborted at round {}: {}", s.seed, a.round, a.detail),
                    (Some(m), None) => println!(
                        "seed {}: round {} local_acc {:.4} global_acc {:.4}",
                        s.seed, m.round, m.local_acc, m.global_acc
                    ),
                    (None, None) => println!("seed {}: no rounds", s.seed),
                }
            }
            println!("wrote {}", out.dir.display());
            Ok(if out.aborted() { EXIT_ABORTED } else { 0 })
        }
        Command::PartitionStats(c) => {
            for (path, counts) in cmd_partition_stats(&c.experiment()?)? {
                let sizes: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
                println!("{}: client sizes {:?}", path.display(), sizes);
            }
            Ok(0)
        }
        Command::Attack {
            common,
            checkpoint,
            client,
        } => {
            let (path, row) = cmd_attack(&common.experiment()?, checkpoint, *client)?;
            println!("client {} psnr {:.2} dB match_loss {:.3e}", row.client, row.psnr, row.match_loss);
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Toyviz(c) => {
            for (path, variant, seed, spread) in cmd_toyviz(&c.experiment()?)? {
                println!("seed {seed} {variant:<4} spread {spread:.4}  {}", path.display());
            }
            Ok(0)
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
