//! The four server aggregation modes on the blobs setup, one seed.
//!
//! `cargo run --release --example aggregation_ablation [seed] [rounds]`

use fedmdcg::datasets::BlobSpec;
use fedmdcg::fedcore::{run_protocol, AggMode, Federation, RunConfig};
use fedmdcg::models::{Backbone, ModelSpec};

fn main() -> fedmdcg::Result<()> {
    let arg = |i: usize, d: u64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (seed, rounds) = (arg(1, 0), arg(2, 30) as usize);
    let blobs = BlobSpec {
        classes: 4,
        dim: 8,
        separation: 5.0,
        seed,
    };
    let spec = ModelSpec::new(Backbone::Mlp, [1, 1, 8], 4)?;
    let fed = Federation::new(spec, blobs.sample(250, 0)?, blobs.sample(100, 1)?, 5, 1.0, seed)?;
    println!("agg       global_acc  local_acc  gd_loss  server_loss");
    for agg in AggMode::ALL {
        let cfg = RunConfig {
            rounds,
            clients: 5,
            lr_model: 0.05,
            agg,
            seed,
            ..RunConfig::default()
        };
        let log = run_protocol(&fed, &cfg)?;
        let m = log.last().expect("rounds > 0");
        println!(
            "{:<8}  {:>10.4}  {:>9.4}  {:>7.4}  {:>11}",
            agg.name(),
            m.global_acc,
            m.local_acc,
            m.gd_loss.unwrap_or(f64::NAN),
            m.server_loss.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}
