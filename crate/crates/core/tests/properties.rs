//! Property tests over the public API.

use proptest::prelude::*;

use fedmdcg::datasets::{
    aggregate_label_distribution, count_labels, dirichlet_partition, make_blobs, split_test_evenly, LabelCounter,
    PartitionSpec,
};
use fedmdcg::evalpriv::{cosine_similarity, pca_2d, psnr, PSNR_CAP};
use fedmdcg::fedcore::{ramp_lambda, weighted_average};
use fedmdcg::losses::{ce_loss, diversity_loss, kl_loss, Diversity};
use fedmdcg::models::{deserialize_params, serialize_params};
use fedmdcg::numerics::{Graph, ParamSet, RngStream, Tensor};

fn scalar(f: impl FnOnce(&mut Graph) -> fedmdcg::Result<fedmdcg::numerics::Var>) -> f64 {
    let mut g = Graph::new();
    let v = f(&mut g).unwrap();
    g.scalar(v)
}

fn param_set(values: &[f64]) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
    p.insert_state("running", Tensor::new(vec![1], vec![values[0] * 0.5]).unwrap());
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_an_exact_disjoint_cover(
        omega in prop_oneof![0.05f64..1.0, 1.0f64..1e4],
        clients in 1usize..9,
        classes in 1usize..6,
        per_class in 1usize..30,
        seed in any::<u64>(),
    ) {
        let ds = make_blobs(classes, 2, per_class, 3.0, seed % 7).unwrap();
        let parts = dirichlet_partition(&ds, &PartitionSpec { omega, clients, seed }).unwrap();
        prop_assert_eq!(parts.len(), clients);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for p in &parts {
            prop_assert!(p.windows(2).all(|w| w[0] < w[1]));
        }
        let per_class_total: Vec<usize> = (0..classes)
            .map(|c| parts.iter().map(|p| count_labels(&ds, p).counts[c]).sum())
            .collect();
        prop_assert!(per_class_total.iter().all(|&n| n == per_class));
    }

    #[test]
    fn even_test_split_sizes_differ_by_at_most_one(n in 1usize..60, clients in 1usize..12, seed in any::<u64>()) {
        let ds = make_blobs(1, 2, n, 1.0, 0).unwrap();
        let parts = split_test_evenly(&ds, clients, seed).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn aggregated_label_distribution_is_a_distribution(counts in prop::collection::vec(prop::collection::vec(0usize..20, 4), 1..6)) {
        prop_assume!(counts.iter().flatten().sum::<usize>() > 0);
        let counters: Vec<LabelCounter> = counts.iter().map(|c| LabelCounter { counts: c.clone() }).collect();
        let d = aggregate_label_distribution(&counters);
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let total = counts.iter().flatten().sum::<usize>() as f64;
        for (c, p) in d.probs.iter().enumerate() {
            let n: usize = counts.iter().map(|row| row[c]).sum();
            prop_assert!((p - n as f64 / total).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_average_is_a_convex_combination(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..5),
        raw in prop::collection::vec(0.1f64..10.0, 5),
    ) {
        let sets: Vec<ParamSet> = rows.iter().map(|r| param_set(r)).collect();
        let refs: Vec<&ParamSet> = sets.iter().collect();
        let weights = &raw[..rows.len()];
        let avg = weighted_average(&refs, weights).unwrap();
        let total: f64 = weights.iter().sum();
        let w = avg.get("w").unwrap().data();
        for k in 0..3 {
            let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(w[k] >= lo - 1e-12 && w[k] <= hi + 1e-12);
            let expected: f64 = rows.iter().zip(weights).map(|(r, wt)| r[k] * wt).sum::<f64>() / total;
            prop_assert!((w[k] - expected).abs() < 1e-9);
        }
        // scaling every weight leaves the average unchanged
        let scaled: Vec<f64> = weights.iter().map(|v| v * 3.5).collect();
        let again = weighted_average(&refs, &scaled).unwrap();
        prop_assert!(avg.max_abs_diff(&again) < 1e-12);
    }

    #[test]
    fn ramp_is_bounded_and_non_decreasing(pre in 0.0f64..5.0, rounds in 1usize..50, d in 0.1f64..4.0) {
        prop_assert_eq!(ramp_lambda(pre, 1, rounds, d).unwrap(), 0.0);
        let vals: Vec<f64> = (1..=rounds).map(|r| ramp_lambda(pre, r, rounds, d).unwrap()).collect();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(vals.iter().all(|&v| (0.0..=pre).contains(&v)));
        prop_assert!(ramp_lambda(pre, 0, rounds, d).is_err());
        prop_assert!(ramp_lambda(pre, rounds + 1, rounds, d).is_err());
    }

    #[test]
    fn psnr_is_symmetric_and_capped(seed in any::<u64>(), n in 1usize..40, noise in 1e-6f64..0.5) {
        let mut rng = RngStream::new("prop-psnr", seed);
        let a = rng.uniform_tensor(&[n], 0.0, 1.0);
        let b = a.zip_map(&rng.uniform_tensor(&[n], -noise, noise), |x, e| x + e).unwrap();
        let ab = psnr(&a, &b, 1.0).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a, 1.0).unwrap());
        prop_assert!(ab <= PSNR_CAP);
        prop_assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        // all errors within `noise` bound the mse by noise^2
        prop_assert!(ab >= -20.0 * noise.log10() - 1e-9);
    }

    #[test]
    fn cosine_is_bounded_and_scale_free(v in prop::collection::vec(-3.0f64..3.0, 2..10), s in 0.1f64..10.0) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let w: Vec<f64> = v.iter().map(|x| x * s).collect();
        prop_assert!((cosine_similarity(&v, &w) - 1.0).abs() < 1e-12);
        let u: Vec<f64> = v.iter().rev().cloned().collect();
        let c = cosine_similarity(&v, &u);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
    }

    #[test]
    fn kl_and_ce_are_non_negative(seed in any::<u64>(), b in 1usize..5, c in 2usize..6) {
        let mut rng = RngStream::new("prop-kl", seed);
        let p = rng.normal_tensor(&[b, c]).map(|v| 3.0 * v);
        let q = rng.normal_tensor(&[b, c]).map(|v| 3.0 * v);
        let labels: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
        let kl = scalar(|g| { let (pv, qv) = (g.constant(p.clone()), g.constant(q.clone())); kl_loss(g, pv, qv) });
        let self_kl = scalar(|g| { let (pv, qv) = (g.constant(p.clone()), g.constant(p.clone())); kl_loss(g, pv, qv) });
        let ce = scalar(|g| { let pv = g.constant(p.clone()); ce_loss(g, pv, &labels) });
        prop_assert!(kl >= -1e-12);
        prop_assert!(self_kl.abs() < 1e-12);
        prop_assert!(ce >= 0.0);
    }

    #[test]
    fn diversity_lies_in_unit_interval_and_v2_never_exceeds_v0(seed in any::<u64>(), b in 1usize..6) {
        let mut rng = RngStream::new("prop-div", seed);
        let z = rng.normal_tensor(&[b, 2]);
        let f = rng.normal_tensor(&[b, 3]);
        let labels: Vec<usize> = (0..b).map(|_| rng.below(3)).collect();
        let y = Tensor::one_hot(&labels, 3).unwrap();
        let div = |v| scalar(|g| {
            let (zv, yv, fv) = (g.constant(z.clone()), g.constant(y.clone()), g.constant(f.clone()));
            diversity_loss(g, v, zv, yv, fv)
        });
        let (d0, d1, d2) = (div(Diversity::V0), div(Diversity::V1), div(Diversity::V2));
        for d in [d0, d1, d2] {
            prop_assert!((0.0..=1.0).contains(&d));
        }
        prop_assert!(d2 <= d0);
        if labels.iter().all(|&l| l == labels[0]) {
            prop_assert!((d2 - d0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoints_round_trip(values in prop::collection::vec(prop::num::f64::ANY, 1..20)) {
        let ps = param_set(&values);
        let back = deserialize_params(&serialize_params(&ps)).unwrap();
        let bits = |p: &ParamSet| p.params().chain(p.states())
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        prop_assert_eq!(bits(&ps), bits(&back));
    }

    #[test]
    fn named_streams_are_reproducible_and_key_sensitive(seed in any::<u64>(), key in any::<u64>()) {
        let draw = |k: u64| {
            let mut r = RngStream::keyed("prop", seed, &[k]);
            (0..8).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(key), draw(key));
        prop_assert_ne!(draw(key), draw(key.wrapping_add(1)));
    }

    #[test]
    fn pca_projection_is_centered_and_ordered(seed in any::<u64>(), n in 3usize..30, p in 2usize..6) {
        let mut rng = RngStream::new("prop-pca", seed);
        let x = rng.normal_tensor(&[n, p]);
        let y = pca_2d(&x).unwrap();
        prop_assert_eq!(y.shape(), &[n, 2]);
        let col = |j: usize| (0..n).map(|i| y.row(i)[j]).collect::<Vec<_>>();
        let (c1, c2) = (col(0), col(1));
        prop_assert!(c1.iter().sum::<f64>().abs() < 1e-9);
        prop_assert!(c2.iter().sum::<f64>().abs() < 1e-9);
        let var = |c: &[f64]| c.iter().map(|v| v * v).sum::<f64>();
        prop_assert!(var(&c1) >= var(&c2) - 1e-9);
        let cross: f64 = c1.iter().zip(&c2).map(|(a, b)| a * b).sum();
        prop_assert!(cross.abs() < 1e-8 * (1.0 + var(&c1)));
    }
}
