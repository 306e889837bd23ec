use super::*;
use crate::models::{features, init_classifier, init_extractor, init_generator, Backbone};
use crate::numerics::RngStream;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn scalar_of(f: impl FnOnce(&mut Graph) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let v = f(&mut g).unwrap();
    g.scalar(v)
}

#[test]
fn ce_values() {
    let v = scalar_of(|g| {
        let l = g.constant(Tensor::zeros(&[3, 10]));
        ce_loss(g, l, &[0, 4, 9])
    });
    assert!((v - 10f64.ln()).abs() < 1e-12);

    let mut sat = vec![0.0; 10];
    sat[3] = 30.0;
    let v = scalar_of(|g| {
        let l = g.constant(t(&[1, 10], &sat));
        ce_loss(g, l, &[3])
    });
    assert!(v < 1e-12);

    let v = scalar_of(|g| {
        let l = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        ce_loss(g, l, &[2])
    });
    let oracle = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
    assert!((v - oracle).abs() < 1e-12);
    assert!((v - 0.407606).abs() < 1e-6);

    let mut g = Graph::new();
    let l = g.constant(Tensor::zeros(&[1, 3]));
    assert!(ce_loss(&mut g, l, &[3]).is_err());
}

#[test]
fn kl_values_and_gibbs() {
    let v = scalar_of(|g| {
        let p = g.constant(t(&[1, 2], &[3f64.ln(), 0.0]));
        let q = g.constant(t(&[1, 2], &[0.0, 0.0]));
        kl_loss(g, p, q)
    });
    let oracle = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
    assert!((v - oracle).abs() < 1e-12);
    assert!((v - 0.130812).abs() < 1e-6);

    let mut rng = RngStream::new("gibbs", 0);
    for _ in 0..1000 {
        let a = rng.normal_tensor(&[1, 4]).map(|x| 3.0 * x);
        let b = rng.normal_tensor(&[1, 4]).map(|x| 3.0 * x);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a), g.constant(b));
        let kl = kl_loss(&mut g, av, bv).unwrap();
        let same = kl_loss(&mut g, av, av).unwrap();
        assert!(g.scalar(kl) >= 0.0);
        assert_eq!(g.scalar(same), 0.0);
    }

    let mut g = Graph::new();
    let p = g.constant(t(&[1, 2], &[f64::NAN, 0.0]));
    let q = g.constant(t(&[1, 2], &[0.0, 0.0]));
    assert!(matches!(kl_loss(&mut g, p, q), Err(Error::NonFinite(_))));
}

#[test]
fn mse_values() {
    let v = scalar_of(|g| {
        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(Tensor::zeros(&[1, 2]));
        mse_latent(g, a, b)
    });
    assert_eq!(v, 5.0);
    let v = scalar_of(|g| {
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        mse_latent(g, a, a)
    });
    assert_eq!(v, 0.0);
}

fn div(variant: Diversity, z: &[f64], f: &[f64], labels: &[usize], classes: usize) -> f64 {
    let b = labels.len();
    scalar_of(|g| {
        let zv = g.constant(t(&[b, z.len() / b], z));
        let fv = g.constant(t(&[b, f.len() / b], f));
        let yv = g.constant(Tensor::one_hot(labels, classes).unwrap());
        diversity_loss(g, variant, zv, yv, fv)
    })
}

#[test]
fn diversity_values() {
    for v in [Diversity::V0, Diversity::V1, Diversity::V2] {
        assert_eq!(div(v, &[0.3, -1.0], &[2.0, 5.0], &[1], 3), 1.0);
    }
    // Hand expansion: pairs (0,1) and (1,0) each contribute -|0-2| * |0-1|.
    let v0 = div(Diversity::V0, &[0.0, 1.0], &[0.0, 2.0], &[0, 0], 2);
    assert!((v0 - (-1f64).exp()).abs() < 1e-12);
    assert!((v0 - 0.367879).abs() < 1e-6);
    let v2 = div(Diversity::V2, &[0.0, 1.0], &[0.0, 2.0], &[0, 1], 2);
    let e2 = 1f64.exp().powi(2);
    assert!((v2 - (-e2).exp()).abs() < 1e-12);
    assert!((v2 - 0.000618).abs() < 1e-6);

    let mut g = Graph::new();
    let e = g.constant(Tensor::zeros(&[0, 2]));
    assert!(diversity_loss(&mut g, Diversity::V0, e, e, e).is_err());
}

#[test]
fn diversity_properties() {
    let mut rng = RngStream::new("div", 1);
    for _ in 0..200 {
        let b = 2 + rng.below(5);
        let z = rng.normal_tensor(&[b, 3]);
        let f = rng.uniform_tensor(&[b, 4], 0.0, 1.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.below(3)).collect();
        for v in [Diversity::V0, Diversity::V1, Diversity::V2] {
            let d = div(v, z.data(), f.data(), &labels, 3);
            assert!(d > 0.0 && d <= 1.0);
        }
        let same = vec![labels[0]; b];
        let d0 = div(Diversity::V0, z.data(), f.data(), &same, 3);
        let d2 = div(Diversity::V2, z.data(), f.data(), &same, 3);
        assert!((d0 - d2).abs() < 1e-12);

        let pair_z = &z.data()[..6];
        let pair_f = &f.data()[..8];
        let alike = div(Diversity::V2, pair_z, pair_f, &[1, 1], 3);
        let differ = div(Diversity::V2, pair_z, pair_f, &[1, 2], 3);
        assert!(differ < alike);
    }
    // Value 1 exactly when every weighted pair vanishes.
    assert_eq!(div(Diversity::V0, &[1.0, 1.0], &[0.0, 3.0], &[0, 1], 2), 1.0);
}

struct Setup {
    spec: ModelSpec,
    extractor: ParamSet,
    classifier: ParamSet,
    gen: ParamSet,
    x: Tensor,
    y: Vec<usize>,
    z: Tensor,
}

fn setup(seed: u64) -> Setup {
    let spec = ModelSpec::new(Backbone::Mlp, [1, 1, 3], 2)
        .unwrap()
        .with_mlp_widths(4, 3)
        .unwrap()
        .with_noise_dim(2)
        .with_gen_hidden(5);
    let mut rng = RngStream::new("loss-test", seed);
    let extractor = init_extractor(&spec, &mut rng);
    let classifier = init_classifier(&spec, &mut rng);
    let gen = init_generator(&spec, &mut rng);
    // Identical rows, so a constant generator can reproduce the latents.
    let row = rng.uniform_tensor(&[1, 1, 1, 3], 0.0, 1.0);
    let x = row.select_rows(&[0, 0, 0, 0]);
    let z = rng.normal_tensor(&[4, 2]);
    Setup {
        spec,
        extractor,
        classifier,
        gen,
        x,
        y: vec![0, 1, 1, 0],
        z,
    }
}

/// Generator whose output is the constant vector `target`.
fn constant_generator(gen: &ParamSet, target: &[f64]) -> ParamSet {
    let mut g = gen.clone();
    g.get_mut("fc3.weight").unwrap().data_mut().fill(0.0);
    g.get_mut("fc3.bias").unwrap().data_mut().copy_from_slice(target);
    g
}

#[test]
fn forward_terms_vanish_when_generator_matches_features() {
    let s = setup(0);
    let f = features(&s.spec, &s.extractor, &s.x).unwrap();
    let gen = constant_generator(&s.gen, f.row(0));
    let mut g = Graph::new();
    let fe = Bound::bind(&mut g, &s.extractor, true);
    let cl = Bound::bind(&mut g, &s.classifier, true);
    let gb = Bound::bind(&mut g, &gen, true);
    let client = ClientRef {
        spec: &s.spec,
        extractor: &fe,
        classifier: &cl,
    };
    let gr = GenRef {
        bound: &gb,
        params: &gen,
        mode: BnMode::Eval,
    };
    let x = g.constant(s.x.clone());
    let z = g.constant(s.z.clone());
    let k = forward_kd_losses(&mut g, client, gr, x, &s.y, z, false).unwrap();
    assert_eq!(g.scalar(k.mse), 0.0);
    assert_eq!(g.scalar(k.kl), 0.0);
    let total = g.add(k.mse, k.kl).unwrap();
    let total = g.add(total, k.ce).unwrap();
    let grads = g.backward(total).unwrap();
    for (_, v) in gb.vars() {
        assert!(grads.get(*v).data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn backward_terms_vanish_when_generator_matches_features() {
    let s = setup(1);
    let f = features(&s.spec, &s.extractor, &s.x).unwrap();
    let gen = constant_generator(&s.gen, f.row(0));
    let mut g = Graph::new();
    let fe = Bound::bind(&mut g, &s.extractor, true);
    let cl = Bound::bind(&mut g, &s.classifier, true);
    let gb = Bound::bind(&mut g, &gen, true);
    let client = ClientRef {
        spec: &s.spec,
        extractor: &fe,
        classifier: &cl,
    };
    let gr = GenRef {
        bound: &gb,
        params: &gen,
        mode: BnMode::Train,
    };
    let x = g.constant(s.x.clone());
    let z = g.constant(s.z.clone());
    let k = backward_kd_losses(&mut g, client, gr, x, &s.y, z).unwrap();
    assert_eq!(g.scalar(k.mse), 0.0);
    assert_eq!(g.scalar(k.kl), 0.0);
    let total = local_generator_objective(&mut g, &k, z, &s.y, 2, &HyperParams::default(), Some(Diversity::V2)).unwrap();
    let grads = g.backward(total).unwrap();
    for b in [&fe, &cl] {
        for (_, v) in b.vars() {
            assert!(grads.get(*v).data().iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn generated_ce_with_zero_classifier_is_ln_c() {
    let s = setup(2);
    let mut cls = s.classifier.clone();
    for (_, p) in cls.params_mut() {
        p.data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let fe = Bound::bind(&mut g, &s.extractor, true);
    let cl = Bound::bind(&mut g, &cls, true);
    let gb = Bound::bind(&mut g, &s.gen, false);
    let client = ClientRef {
        spec: &s.spec,
        extractor: &fe,
        classifier: &cl,
    };
    let gr = GenRef {
        bound: &gb,
        params: &s.gen,
        mode: BnMode::Eval,
    };
    let z = g.constant(s.z.clone());
    let l = forward_ce_on_generated(&mut g, client, gr, z, &[0, 1, 0, 0]).unwrap();
    assert!((g.scalar(l) - 2f64.ln()).abs() < 1e-12);
    let grads = g.backward(l).unwrap();
    for (_, v) in fe.vars() {
        assert!(grads.get(*v).data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn objectives_reduce_at_zero_weights() {
    let s = setup(3);
    let mut g = Graph::new();
    let fe = Bound::bind(&mut g, &s.extractor, true);
    let cl = Bound::bind(&mut g, &s.classifier, true);
    let gb = Bound::bind(&mut g, &s.gen, false);
    let client = ClientRef {
        spec: &s.spec,
        extractor: &fe,
        classifier: &cl,
    };
    let gr = GenRef {
        bound: &gb,
        params: &s.gen,
        mode: BnMode::Eval,
    };
    let x = g.constant(s.x.clone());
    let z = g.constant(s.z.clone());
    let zero = ModelWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
    };
    let terms = local_model_terms(&mut g, client, gr, x, &s.y, z, z, &[0, 0, 1, 1], zero, false).unwrap();
    assert!(terms.gen_ce.is_none() && terms.mse.is_none() && terms.kl.is_none());
    let obj = local_model_objective(&mut g, &terms, zero).unwrap();
    let plain = {
        let f = extractor_forward(&mut g, &s.spec, &fe, x).unwrap();
        let l = classifier_forward(&mut g, &cl, f).unwrap();
        ce_loss(&mut g, l, &s.y).unwrap()
    };
    assert_eq!(g.scalar(obj).to_bits(), g.scalar(plain).to_bits());

    // Composition oracle with non-zero weights.
    let w = ModelWeights {
        lambda1: 0.2,
        lambda2: 0.3,
        lambda3: 0.4,
    };
    let terms = local_model_terms(&mut g, client, gr, x, &s.y, z, z, &[0, 0, 1, 1], w, false).unwrap();
    let obj = local_model_objective(&mut g, &terms, w).unwrap();
    let hand = g.scalar(terms.ce)
        + 0.2 * g.scalar(terms.gen_ce.unwrap())
        + 0.3 * g.scalar(terms.mse.unwrap())
        + 0.4 * g.scalar(terms.kl.unwrap());
    assert!((g.scalar(obj) - hand).abs() < 1e-12);
    assert!(g.scalar(obj).is_finite());

    let gb2 = Bound::bind(&mut g, &s.gen, true);
    let gr2 = GenRef {
        bound: &gb2,
        params: &s.gen,
        mode: BnMode::Train,
    };
    let k = backward_kd_losses(&mut g, client, gr2, x, &s.y, z).unwrap();
    let obj = local_generator_objective(&mut g, &k, z, &s.y, 2, &HyperParams::zeros(), Some(Diversity::V2)).unwrap();
    assert_eq!(g.scalar(obj).to_bits(), g.scalar(k.kl).to_bits());
    let hp = HyperParams::default();
    let obj = local_generator_objective(&mut g, &k, z, &s.y, 2, &hp, Some(Diversity::V0)).unwrap();
    assert!(g.scalar(obj) >= 0.0);
}

#[test]
fn tau_weights_examples() {
    let a = LabelCounter { counts: vec![3, 0] };
    let b = LabelCounter { counts: vec![1, 5] };
    let tau = tau_weights(&[&a, &b], &[0, 1, 0]).unwrap();
    assert_eq!(tau[0], vec![0.75, 0.0, 0.75]);
    assert_eq!(tau[1], vec![0.25, 1.0, 0.25]);
    for bidx in 0..3 {
        assert_eq!(tau[0][bidx] + tau[1][bidx], 1.0);
    }
    let empty = LabelCounter { counts: vec![0, 1] };
    assert!(tau_weights(&[&empty], &[0]).is_err());
}

fn server_value(
    s: &Setup,
    gen: &ParamSet,
    cls: &ParamSet,
    teachers: &[(ParamSet, ParamSet, LabelCounter)],
    yhat: &[usize],
) -> (Vec<f64>, f64) {
    let mut g = Graph::new();
    let gb = Bound::bind(&mut g, gen, true);
    let cb = Bound::bind(&mut g, cls, true);
    let tr: Vec<Teacher> = teachers
        .iter()
        .map(|(tg, tc, cnt)| Teacher {
            gen: tg,
            classifier: tc,
            counter: cnt,
        })
        .collect();
    let gr = GenRef {
        bound: &gb,
        params: gen,
        mode: BnMode::Train,
    };
    let z = g.constant(s.z.clone());
    let all = ServerTerms {
        kl1: true,
        kl2: true,
        kl3: true,
    };
    let l = server_distill_losses(&mut g, gr, &cb, &tr, z, yhat, 2, all).unwrap();
    let obj = server_objective(&mut g, &l).unwrap();
    let grads = g.backward(obj).unwrap();
    let gmax = gb
        .vars()
        .chain(cb.vars())
        .map(|(_, v)| grads.get(*v).data().iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .fold(0.0, f64::max);
    (
        vec![g.scalar(l.kl1.unwrap()), g.scalar(l.kl2.unwrap()), g.scalar(l.kl3.unwrap())],
        gmax,
    )
}

#[test]
fn server_self_distillation_is_a_fixed_point() {
    let s = setup(4);
    let teachers = vec![(s.gen.clone(), s.classifier.clone(), LabelCounter { counts: vec![5, 2] })];
    let (vals, gmax) = server_value(&s, &s.gen, &s.classifier, &teachers, &[0, 1, 1, 0]);
    assert_eq!(vals, vec![0.0, 0.0, 0.0]);
    assert_eq!(gmax, 0.0);
}

#[test]
fn server_losses_ignore_client_order() {
    let s = setup(5);
    let mut rng = RngStream::new("perm", 0);
    let mut teachers = Vec::new();
    for k in 0..3 {
        let mut gen = s.gen.clone();
        let mut cls = s.classifier.clone();
        for (_, p) in gen.params_mut().chain(cls.params_mut()) {
            for v in p.data_mut() {
                *v += 0.2 * rng.normal();
            }
        }
        teachers.push((gen, cls, LabelCounter { counts: vec![k + 1, 3 - k] }));
    }
    let (a, _) = server_value(&s, &s.gen, &s.classifier, &teachers, &[0, 1, 1, 0]);
    teachers.rotate_left(1);
    teachers.swap(0, 1);
    let (b, _) = server_value(&s, &s.gen, &s.classifier, &teachers, &[0, 1, 1, 0]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
        assert!(*x > 0.0);
    }
}

#[test]
fn gradient_suite_passes() {
    let checks = suite::run(20).unwrap();
    let mut terms: Vec<&str> = checks.iter().map(|c| c.term).collect();
    terms.dedup();
    assert!(terms.len() >= 16);
    for c in &checks {
        assert!(c.max_rel_error < 1e-4, "{c:?}");
        assert_eq!(c.frozen_max_abs, 0.0, "{c:?}");
    }
}
