//! Runs FedMD-CG on synthetic Gaussian blobs and prints per-round metrics.
//!
//! `cargo run --release --example quickstart_blobs [seed]`

use fedmdcg::datasets::BlobSpec;
use fedmdcg::fedcore::{run_protocol, Federation, RunConfig};
use fedmdcg::models::{Backbone, ModelSpec};

fn main() -> fedmdcg::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let blobs = BlobSpec {
        classes: 4,
        dim: 8,
        separation: 5.0,
        seed,
    };
    let train = blobs.sample(250, 0)?;
    let test = blobs.sample(100, 1)?;
    let spec = ModelSpec::new(Backbone::Mlp, train.input_shape(), 4)?;
    let cfg = RunConfig {
        rounds: 30,
        clients: 5,
        lr_model: 0.05,
        omega: 1.0,
        seed,
        ..RunConfig::default()
    };
    let fed = Federation::new(spec, train, test, cfg.clients, cfg.omega, seed)?;
    let log = run_protocol(&fed, &cfg)?;
    println!("round  local_acc  global_acc  gd_loss  seconds");
    for m in &log.rows {
        println!(
            "{:>5}  {:>9.4}  {:>10.4}  {:>7.4}  {:>7.2}",
            m.round,
            m.local_acc,
            m.global_acc,
            m.gd_loss.unwrap_or(f64::NAN),
            m.seconds
        );
    }
    if let Some(a) = &log.abort {
        println!("aborted at round {}: {}", a.round, a.detail);
    }
    Ok(())
}
