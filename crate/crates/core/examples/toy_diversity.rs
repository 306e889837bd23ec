//! Generator outputs with and without the diversity constraint on blobs.
//! Prints the within-class spread of each variant.
//!
//! `cargo run --release --example toy_diversity [seed] [noise_dim] [latent_dim]`

use fedmdcg::datasets::BlobSpec;
use fedmdcg::evalpriv::{toy_divloss_pipeline, ToyConfig};
use fedmdcg::losses::Diversity;
use fedmdcg::models::{Backbone, ModelSpec};

fn main() -> fedmdcg::Result<()> {
    let arg = |i: usize, d: usize| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = arg(1, 0) as u64;
    let (noise, latent) = (arg(2, 1), arg(3, 4));
    let blobs = BlobSpec {
        classes: 4,
        dim: 8,
        separation: 5.0,
        seed,
    };
    let train = blobs.sample(100, 0)?;
    let view = blobs.sample(50, 1)?;
    let spec = ModelSpec::new(Backbone::Mlp, train.input_shape(), 4)?
        .with_mlp_widths(32, latent)?
        .with_noise_dim(noise)
        .with_gen_hidden(32);
    let cfg = ToyConfig {
        seed,
        ..ToyConfig::default()
    };
    for (name, variant) in [("none", None), ("v0", Some(Diversity::V0)), ("v1", Some(Diversity::V1)), ("v2", Some(Diversity::V2))] {
        let res = toy_divloss_pipeline(&spec, &train, &view, variant, &cfg)?;
        println!("{name:<5} spread {:.4}", res.generated_spread());
    }
    Ok(())
}
