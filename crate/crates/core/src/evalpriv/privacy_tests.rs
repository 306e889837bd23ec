use super::*;
use crate::models::Backbone;

fn victim(seed: u64) -> (ModelSpec, ClientModel, Tensor, Vec<usize>) {
    let spec = ModelSpec::new(Backbone::Mlp, [1, 4, 4], 4)
        .unwrap()
        .with_mlp_widths(16, 8)
        .unwrap();
    let model = ClientModel::init(&spec, &mut RngStream::new("init", seed));
    let x = RngStream::new("secret", seed).uniform_tensor(&[1, 1, 4, 4], 0.0, 1.0);
    (spec, model, x, vec![(seed % 4) as usize])
}

fn classifier_only() -> SharingPolicy {
    SharingPolicy {
        extractor: false,
        classifier: true,
    }
}

#[test]
fn psnr_closed_forms() {
    let a = Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    let zero = Tensor::zeros(&[3]);
    let full = Tensor::full(&[3], 255.0);
    assert!(psnr(&zero, &full, 255.0).unwrap().abs() < 1e-12);
    assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    assert!(psnr(&a, &zero, 1.0).is_err());
}

#[test]
fn linear_layer_input_is_recovered_in_closed_form() {
    let mut rng = RngStream::new("linear", 3);
    let w = rng.normal_tensor(&[5, 12]);
    let b = rng.normal_tensor(&[5]);
    let x = rng.uniform_tensor(&[1, 12], 0.0, 1.0);
    let mut g = Graph::new();
    let wv = g.param(w);
    let bv = g.param(b);
    let xv = g.constant(x.clone());
    let logits = g.linear(xv, wv, Some(bv)).unwrap();
    let loss = g.cross_entropy(logits, &[2]).unwrap();
    let grads = g.backward(loss).unwrap();
    let (gw, gb) = (grads.get(wv), grads.get(bv));

    let exact = recover_linear_input(&gw, Some(&gb)).unwrap();
    let err = exact.iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12, "{err}");
    let scaled = recover_linear_input(&gw, None).unwrap();
    assert!(cosine_similarity(&scaled, x.data()).abs() > 0.99);
}

#[test]
fn dlg_recovers_a_linear_layer_input() {
    let mut rng = RngStream::new("linear", 4);
    let w = rng.normal_tensor(&[5, 12]);
    let b = rng.normal_tensor(&[5]);
    let x = rng.uniform_tensor(&[1, 12], 0.0, 1.0);
    let mut g = Graph::new();
    let wv = g.param(w.clone());
    let bv = g.param(b.clone());
    let xv = g.constant(x.clone());
    let logits = g.linear(xv, wv, Some(bv)).unwrap();
    let loss = g.cross_entropy(logits, &[1]).unwrap();
    let grads = g.backward(loss).unwrap();
    let observed = [grads.get(wv), grads.get(bv)];

    let res = match_gradients(&[1, 12], 5, &observed, &AttackConfig::default(), |g, x| {
        let wv = g.param(w.clone());
        let bv = g.param(b.clone());
        Ok((g.linear(x, wv, Some(bv))?, vec![wv, bv]))
    })
    .unwrap();
    let cos = cosine_similarity(res.x.data(), x.data());
    assert!(cos > 0.99, "cosine {cos}");
    assert_eq!(res.labels(), vec![1]);
}

#[test]
fn full_sharing_matching_loss_drops_by_ninety_percent() {
    let (spec, model, x, y) = victim(0);
    let rep = audit_client(&spec, &model, &x, &y, &AttackConfig::default()).unwrap();
    let r = &rep.result;
    assert!(!r.diverged);
    assert_eq!(r.trace.len(), 301);
    assert!(r.match_loss <= 0.1 * r.initial_loss(), "{} -> {}", r.initial_loss(), r.match_loss);
    assert!(r.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn classifier_only_sharing_leaks_less() {
    let (spec, model, x, y) = victim(1);
    let full = audit_client(&spec, &model, &x, &y, &AttackConfig::default()).unwrap();
    let cls = AttackConfig {
        target: classifier_only(),
        ..AttackConfig::default()
    };
    let part = audit_client(&spec, &model, &x, &y, &cls).unwrap();
    assert!(part.psnr < full.psnr, "{} vs {}", part.psnr, full.psnr);
}

#[test]
fn attack_is_deterministic_per_seed() {
    let (spec, model, x, y) = victim(2);
    let cfg = AttackConfig {
        steps: 20,
        seed: 7,
        ..AttackConfig::default()
    };
    let a = audit_client(&spec, &model, &x, &y, &cfg).unwrap();
    let b = audit_client(&spec, &model, &x, &y, &cfg).unwrap();
    assert_eq!(a.result.x, b.result.x);
    assert_eq!(a.psnr.to_bits(), b.psnr.to_bits());
    let c = audit_client(&spec, &model, &x, &y, &AttackConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.result.trace[0], c.result.trace[0]);
}

#[test]
fn observed_gradients_follow_the_target() {
    let (spec, model, x, y) = victim(3);
    let part = observed_gradients(&spec, &model, classifier_only(), &x, &y).unwrap();
    assert!(part.param_names().all(|k| k.starts_with(CLASSIFIER_PREFIX)));
    let full = observed_gradients(&spec, &model, AttackConfig::default().target, &x, &y).unwrap();
    assert_eq!(full.len(), model.extractor.len() + model.classifier.len());
    // Layout must agree with the attack target.
    assert!(dlg_attack(&spec, &model, &part, 1, &AttackConfig::default()).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let (spec, model, x, y) = victim(0);
    for cfg in [
        AttackConfig {
            steps: 0,
            ..AttackConfig::default()
        },
        AttackConfig {
            lr: 0.0,
            ..AttackConfig::default()
        },
        AttackConfig {
            target: SharingPolicy {
                extractor: false,
                classifier: false,
            },
            ..AttackConfig::default()
        },
    ] {
        assert!(audit_client(&spec, &model, &x, &y, &cfg).is_err());
    }
}

#[test]
fn non_finite_matching_loss_returns_best_so_far() {
    let observed = [Tensor::full(&[2, 3], f64::NAN)];
    let w = Tensor::full(&[2, 3], 0.5);
    let res = match_gradients(&[1, 3], 2, &observed, &AttackConfig::default(), |g, x| {
        let wv = g.param(w.clone());
        Ok((g.linear(x, wv, None)?, vec![wv]))
    })
    .unwrap();
    assert!(res.diverged);
    assert!(res.trace.is_empty());
    assert_eq!(res.x.shape(), &[1, 3]);
}
