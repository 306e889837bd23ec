//! Dirichlet label skew at several concentrations: per-client label counts
//! and the mean client label entropy.
//!
//! `cargo run --release --example partition_stats [clients] [seed]`

use fedmdcg::datasets::{count_labels, dirichlet_partition_nonempty, make_blobs, PartitionSpec};

fn main() -> fedmdcg::Result<()> {
    let arg = |i: usize, d: u64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (clients, seed) = (arg(1, 5) as usize, arg(2, 0));
    let ds = make_blobs(10, 2, 100, 3.0, seed)?;
    for omega in [0.1, 1.0, 10.0, 1e4] {
        let spec = PartitionSpec { omega, clients, seed };
        let (parts, attempt) = dirichlet_partition_nonempty(&ds, &spec)?;
        let counters: Vec<_> = parts.iter().map(|p| count_labels(&ds, p)).collect();
        let entropy = counters.iter().map(|c| c.entropy()).sum::<f64>() / clients as f64;
        println!("omega {omega}  (attempt {attempt}, mean entropy {entropy:.3} nats, max {:.3})", 10f64.ln());
        for (i, c) in counters.iter().enumerate() {
            println!("  client {i}: {:?}  total {}", c.counts, c.total());
        }
    }
    Ok(())
}
