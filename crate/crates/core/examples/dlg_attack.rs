//! DLG gradient inversion against a tiny MLP under the four sharing
//! policies; prints the reconstruction PSNR for each.
//!
//! `cargo run --release --example dlg_attack [seed] [steps] [lr]`

use fedmdcg::baselines::Method;
use fedmdcg::evalpriv::{audit_client, AttackConfig};
use fedmdcg::models::{Backbone, ClientModel, ModelSpec};
use fedmdcg::numerics::RngStream;

fn main() -> fedmdcg::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let arg = |i: usize| std::env::args().nth(i);
    let defaults = AttackConfig::default();
    let steps = arg(2).and_then(|s| s.parse().ok()).unwrap_or(defaults.steps);
    let lr = arg(3).and_then(|s| s.parse().ok()).unwrap_or(defaults.lr);
    let spec = ModelSpec::new(Backbone::Mlp, [1, 4, 4], 4)?.with_mlp_widths(16, 8)?;
    let model = ClientModel::init(&spec, &mut RngStream::new("init", seed));
    let x = RngStream::new("secret", seed).uniform_tensor(&[1, 1, 4, 4], 0.0, 1.0);
    let y = [(seed % 4) as usize];
    println!("method     psnr_db  match_loss  label");
    for m in [Method::FedAvg, Method::FedPer, Method::LgFedAvg] {
        let cfg = AttackConfig {
            target: m.policy(),
            steps,
            lr,
            seed,
            ..AttackConfig::default()
        };
        let rep = audit_client(&spec, &model, &x, &y, &cfg)?;
        println!(
            "{:<9}  {:>7.2}  {:>10.3e}  {}",
            m.name(),
            rep.psnr,
            rep.result.match_loss,
            rep.result.labels()[0]
        );
    }
    Ok(())
}
