//! FedMD-CG against local training on a Fashion-MNIST subset with strong
//! label skew. Reads the four idx files from `dir` (default `data/fmnist`).
//!
//! `cargo run --release --example fmnist_trend [dir] [rounds] [seed]`

use std::path::PathBuf;

use fedmdcg::baselines::{run_baseline, Method};
use fedmdcg::datasets::{load_idx, Split};
use fedmdcg::fedcore::{run_protocol, Federation, RunConfig};
use fedmdcg::losses::HyperParams;
use fedmdcg::models::{Backbone, ModelSpec};

fn main() -> fedmdcg::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = PathBuf::from(args.get(1).map_or("data/fmnist", String::as_str));
    let rounds: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let train = load_idx(&dir, Split::Train, 10)?.stratified_subset(1000, seed);
    let test = load_idx(&dir, Split::Test, 10)?.stratified_subset(200, seed);
    let spec = ModelSpec::new(Backbone::Lenet5, train.input_shape(), 10)?;
    let cfg = RunConfig {
        rounds,
        clients: 10,
        omega: 0.1,
        seed,
        lr_model: 0.05,
        // the LeNet-5 latent has 256 dims and the latent MSE sums over them
        hyper: HyperParams {
            lambda2: 1.0 / 256.0,
            lambda4: 1.0 / 256.0,
            ..HyperParams::default()
        },
        ..RunConfig::default()
    };
    let fed = Federation::new(spec, train, test, cfg.clients, cfg.omega, seed)?;
    let ours = run_protocol(&fed, &cfg)?;
    let lt = run_baseline(Method::Lt, &fed, &cfg)?;
    println!("round  fedmdcg_local  lt_local  fedmdcg_global  lt_global");
    for (a, b) in ours.rows.iter().zip(&lt.rows) {
        println!(
            "{:>5}  {:>13.4}  {:>8.4}  {:>14.4}  {:>9.4}",
            a.round, a.local_acc, b.local_acc, a.global_acc, b.global_acc
        );
    }
    Ok(())
}
