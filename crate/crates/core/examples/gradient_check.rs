//! Finite-difference check of every loss term; prints the worst relative
//! error and the largest gradient leaking into frozen parameters per term.
//!
//! `cargo run --release --example gradient_check [configs]`

use std::collections::BTreeMap;

use fedmdcg::losses::suite;

fn main() -> fedmdcg::Result<()> {
    let configs: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let mut worst: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for c in suite::run(configs)? {
        let e = worst.entry(c.term).or_insert((0.0, 0.0));
        e.0 = e.0.max(c.max_rel_error);
        e.1 = e.1.max(c.frozen_max_abs);
    }
    println!("term                         max_rel_err  frozen_max");
    for (term, (rel, frozen)) in worst {
        println!("{term:<28} {rel:>11.2e}  {frozen:>10.1e}");
    }
    Ok(())
}
