//! FedMD-CG against FedAvg, LT, FedPer and LG-FedAvg on skewed blobs.
//!
//! `cargo run --release --example baselines_compare [seed] [omega] [rounds]`

use fedmdcg::baselines::{run_baseline, Method};
use fedmdcg::datasets::BlobSpec;
use fedmdcg::fedcore::{run_protocol, Federation, RunConfig};
use fedmdcg::models::{Backbone, ModelSpec};

fn main() -> fedmdcg::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let omega: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let rounds: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(30);
    let blobs = BlobSpec {
        classes: 4,
        dim: 8,
        separation: 5.0,
        seed,
    };
    let train = blobs.sample(150, 0)?;
    let test = blobs.sample(100, 1)?;
    let spec = ModelSpec::new(Backbone::Mlp, train.input_shape(), 4)?;
    let cfg = RunConfig {
        rounds,
        clients: 5,
        omega,
        lr_model: 0.05,
        seed,
        ..RunConfig::default()
    };
    let fed = Federation::new(spec, train, test, cfg.clients, omega, seed)?;
    println!("method     local_acc  global_acc");
    let log = run_protocol(&fed, &cfg)?;
    let m = log.last().expect("rounds > 0");
    println!("{:<9}  {:>9.4}  {:>10.4}", "fedmdcg", m.local_acc, m.global_acc);
    for method in Method::ALL {
        let log = run_baseline(method, &fed, &cfg)?;
        let m = log.last().expect("rounds > 0");
        println!("{:<9}  {:>9.4}  {:>10.4}", method.name(), m.local_acc, m.global_acc);
    }
    Ok(())
}
