//! Finite-difference verification of every loss term on a small random
//! model, plus exact-zero checks for parameters each term must not train.

use super::*;
use crate::models::{init_classifier, init_extractor, init_generator, Backbone};
use crate::numerics::gradcheck::{self, check_directional, check_gradients, GradCheckReport};
use crate::numerics::RngStream;

pub const FD_STEP: f64 = 1e-5;
const DIRECTIONS: usize = 4;
const BATCH: usize = 4;

/// Outcome of one term on one random configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TermCheck {
    pub term: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
    /// Largest gradient magnitude on parameters the term must not train.
    pub frozen_max_abs: f64,
}

struct Toy {
    spec: ModelSpec,
    extractor: ParamSet,
    classifier: ParamSet,
    gen: ParamSet,
    x: Tensor,
    y: Vec<usize>,
    z: Tensor,
    z2: Tensor,
    yhat: Vec<usize>,
}

fn toy(seed: u64) -> Result<Toy> {
    let spec = ModelSpec::new(Backbone::Mlp, [1, 1, 3], 2)?
        .with_mlp_widths(4, 3)?
        .with_noise_dim(2)
        .with_gen_hidden(5);
    let mut rng = RngStream::new("loss-suite", seed);
    let mut extractor = init_extractor(&spec, &mut rng);
    let mut classifier = init_classifier(&spec, &mut rng);
    let mut gen = init_generator(&spec, &mut rng);
    // Zero biases put ReLU inputs exactly on the kink for all-zero latents.
    for ps in [&mut extractor, &mut classifier] {
        for (k, t) in ps.params_mut() {
            if k.ends_with("bias") {
                for v in t.data_mut() {
                    *v = 0.1 * rng.normal();
                }
            }
        }
    }
    // Move batch-norm parameters away from their defaults so every path is exercised.
    for (k, t) in gen.params_mut() {
        if k.starts_with("bn") || k.ends_with("bias") {
            for v in t.data_mut() {
                *v += 0.3 * rng.normal();
            }
        }
    }
    let x = rng.uniform_tensor(&[BATCH, 1, 1, 3], 0.0, 1.0);
    let y = (0..BATCH).map(|i| i % 2).collect();
    let z = rng.normal_tensor(&[BATCH, 2]);
    let z2 = rng.normal_tensor(&[BATCH, 2]);
    let yhat = (0..BATCH).map(|_| rng.below(2)).collect();
    Ok(Toy {
        spec,
        extractor,
        classifier,
        gen,
        x,
        y,
        z,
        z2,
        yhat,
    })
}

/// Trainable inputs for a directional check: names and tensors per set.
struct Wrt {
    names: Vec<Vec<String>>,
    tensors: Vec<Tensor>,
}

impl Wrt {
    fn new(sets: &[&ParamSet]) -> Self {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for s in sets {
            let mut n = Vec::new();
            for (k, t) in s.params() {
                n.push(k.clone());
                tensors.push(t.clone());
            }
            names.push(n);
        }
        Wrt { names, tensors }
    }

    /// Rebuilds one [`Bound`] per set from the checker's leaf variables.
    fn bounds(&self, vars: &[Var]) -> Vec<Bound> {
        let mut it = vars.iter();
        self.names
            .iter()
            .map(|ns| Bound::from_vars(ns.iter().map(|n| (n.clone(), *it.next().expect("var count")))))
            .collect()
    }
}

fn max_abs(grads: &crate::numerics::Gradients, b: &Bound) -> f64 {
    b.vars()
        .map(|(_, v)| grads.get(*v).data().iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .fold(0.0, f64::max)
}

/// Evaluates `f` once with the `frozen` sets bound as trainable leaves and
/// returns the largest gradient that reached them.
fn frozen_leak<F>(trained: &[&ParamSet], frozen: &[&ParamSet], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Bound], &[Bound]) -> Result<Var>,
{
    let mut g = Graph::new();
    let tb: Vec<Bound> = trained.iter().map(|p| Bound::bind(&mut g, p, true)).collect();
    let fb: Vec<Bound> = frozen.iter().map(|p| Bound::bind(&mut g, p, true)).collect();
    let out = f(&mut g, &tb, &fb)?;
    let grads = g.backward(out)?;
    Ok(fb.iter().map(|b| max_abs(&grads, b)).fold(0.0, f64::max))
}

fn primitive_checks(seed: u64, out: &mut Vec<TermCheck>) -> Result<()> {
    let mut rng = RngStream::new("loss-suite-prim", seed);
    let logits = rng.normal_tensor(&[BATCH, 5]);
    let other = rng.normal_tensor(&[BATCH, 5]);
    let labels: Vec<usize> = (0..BATCH).map(|_| rng.below(5)).collect();
    let mut push = |term, report: GradCheckReport| {
        out.push(TermCheck {
            term,
            seed,
            max_rel_error: report.max_rel_error,
            frozen_max_abs: 0.0,
        })
    };
    push("ce", check_gradients(&[logits.clone()], FD_STEP, |g, v| ce_loss(g, v[0], &labels))?);
    push("kl", check_gradients(&[logits.clone(), other.clone()], FD_STEP, |g, v| kl_loss(g, v[0], v[1]))?);
    push("mse", check_gradients(&[logits, other], FD_STEP, |g, v| mse_latent(g, v[0], v[1]))?);

    let f = rng.uniform_tensor(&[BATCH, 3], 0.0, 0.5);
    let z = rng.normal_tensor(&[BATCH, 2]).map(|v| 0.3 * v);
    let ys: Vec<usize> = (0..BATCH).map(|_| rng.below(3)).collect();
    let yo = Tensor::one_hot(&ys, 3)?;
    for (term, variant) in [("div_v0", Diversity::V0), ("div_v1", Diversity::V1), ("div_v2", Diversity::V2)] {
        let report = check_gradients(&[f.clone(), z.clone()], FD_STEP, |g, v| {
            let y = g.constant(yo.clone());
            diversity_loss(g, variant, v[1], y, v[0])
        })?;
        push(term, report);
    }
    Ok(())
}

/// With a detached teacher branch the objective's gradient is that of
/// `CE + KL(local || fixed teacher logits)`, where the teacher logits are
/// taken at the unperturbed classifier. Checks that reference by finite
/// differences and compares the detached gradient to its exact gradient.
fn detached_teacher_check<F>(t: &Toy, sets: &Wrt, rng: &mut RngStream, detached: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Bound], &Bound) -> Result<Var>,
{
    let teacher = {
        let mut g = Graph::new();
        let cl = Bound::bind(&mut g, &t.classifier, false);
        let gb = Bound::bind(&mut g, &t.gen, false);
        let z = g.constant(t.z.clone());
        let y = g.constant(Tensor::one_hot(&t.y, t.spec.classes)?);
        let fake = generator_forward(&mut g, &gb, &t.gen, z, y, BnMode::Eval)?.features;
        let l = classifier_forward(&mut g, &cl, fake)?;
        g.value(l).clone()
    };
    let reference = |g: &mut Graph, b: &[Bound]| -> Result<Var> {
        let x = g.constant(t.x.clone());
        let f = extractor_forward(g, &t.spec, &b[0], x)?;
        let logits = classifier_forward(g, &b[1], f)?;
        let ce = ce_loss(g, logits, &t.y)?;
        let q = g.constant(teacher.clone());
        let kl = kl_loss(g, logits, q)?;
        g.add(ce, kl)
    };
    let mut report = check_directional(&sets.tensors, FD_STEP, DIRECTIONS, rng, |g, v| reference(g, &sets.bounds(v)))?;

    let grads_of = |build: &dyn Fn(&mut Graph, &[Bound]) -> Result<Var>| -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = sets.tensors.iter().map(|x| g.param(x.clone())).collect();
        let b = sets.bounds(&vars);
        let out = build(&mut g, &b)?;
        let grads = g.backward(out)?;
        Ok(vars.iter().flat_map(|v| grads.get(*v).data().to_vec()).collect())
    };
    let a = grads_of(&|g, b| {
        let gb = Bound::bind(g, &t.gen, false);
        detached(g, b, &gb)
    })?;
    let r = grads_of(&|g, b| reference(g, b))?;
    let exact = gradcheck::relative_error(&a, &r);
    report.rel_errors.push(exact);
    report.max_rel_error = report.max_rel_error.max(exact);
    Ok(report)
}

fn model_checks(seed: u64, out: &mut Vec<TermCheck>) -> Result<()> {
    let t = toy(seed)?;
    let mut rng = RngStream::new("loss-suite-dir", seed);
    let w = ModelWeights {
        lambda1: 0.3,
        lambda2: 0.5,
        lambda3: 0.7,
    };

    // Local model side: train extractor + classifier, global generator frozen.
    let model_sets = Wrt::new(&[&t.extractor, &t.classifier]);
    let build_model = |g: &mut Graph, b: &[Bound], gen_bound: &Bound, which: &str| -> Result<Var> {
        let client = ClientRef {
            spec: &t.spec,
            extractor: &b[0],
            classifier: &b[1],
        };
        let gen = GenRef {
            bound: gen_bound,
            params: &t.gen,
            mode: BnMode::Eval,
        };
        let x = g.constant(t.x.clone());
        let z = g.constant(t.z.clone());
        let z2 = g.constant(t.z2.clone());
        match which {
            "forward_kd" => {
                let k = forward_kd_losses(g, client, gen, x, &t.y, z, false)?;
                let a = g.scale(k.mse, 0.7);
                let b2 = g.scale(k.kl, 1.3);
                let s = g.add(k.ce, a)?;
                g.add(s, b2)
            }
            "forward_kd_detached" => {
                let k = forward_kd_losses(g, client, gen, x, &t.y, z, true)?;
                g.add(k.ce, k.kl)
            }
            "forward_ce_generated" => forward_ce_on_generated(g, client, gen, z2, &t.yhat),
            _ => {
                let terms = local_model_terms(g, client, gen, x, &t.y, z, z2, &t.yhat, w, false)?;
                local_model_objective(g, &terms, w)
            }
        }
    };
    for term in ["forward_kd", "forward_kd_detached", "forward_ce_generated", "local_model_objective"] {
        let report = if term == "forward_kd_detached" {
            detached_teacher_check(&t, &model_sets, &mut rng, |g, b, gb| build_model(g, b, gb, term))?
        } else {
            check_directional(&model_sets.tensors, FD_STEP, DIRECTIONS, &mut rng, |g, v| {
                let b = model_sets.bounds(v);
                let gb = Bound::bind(g, &t.gen, false);
                build_model(g, &b, &gb, term)
            })?
        };
        let mut leak = frozen_leak(&[&t.extractor, &t.classifier], &[&t.gen], |g, tb, fb| {
            build_model(g, tb, &fb[0], term)
        })?;
        if term == "forward_ce_generated" {
            // The generated path never reaches the extractor.
            leak = leak.max(frozen_leak(&[&t.classifier], &[&t.extractor, &t.gen], |g, tb, fb| {
                let bs = [fb[0].clone(), tb[0].clone()];
                build_model(g, &bs, &fb[1], term)
            })?);
        }
        out.push(TermCheck {
            term,
            seed,
            max_rel_error: report.max_rel_error,
            frozen_max_abs: leak,
        });
    }

    // Local generator side: train the generator, client frozen.
    let gen_set = Wrt::new(&[&t.gen]);
    let hp = HyperParams {
        lambda4: 0.6,
        lambda5: 0.8,
        lambda6: 1.1,
        ..HyperParams::default()
    };
    let build_gen = |g: &mut Graph, gen_bound: &Bound, fe: &Bound, cl: &Bound, div: Option<Diversity>| -> Result<Var> {
        let client = ClientRef {
            spec: &t.spec,
            extractor: fe,
            classifier: cl,
        };
        let gen = GenRef {
            bound: gen_bound,
            params: &t.gen,
            mode: BnMode::Train,
        };
        let x = g.constant(t.x.clone());
        let z = g.constant(t.z.clone());
        let k = backward_kd_losses(g, client, gen, x, &t.y, z)?;
        local_generator_objective(g, &k, z, &t.y, t.spec.classes, &hp, div)
    };
    for (term, div) in [
        ("generator_objective_nodiv", None),
        ("generator_objective_v0", Some(Diversity::V0)),
        ("generator_objective_v1", Some(Diversity::V1)),
        ("generator_objective_v2", Some(Diversity::V2)),
    ] {
        let report = check_directional(&gen_set.tensors, FD_STEP, DIRECTIONS, &mut rng, |g, v| {
            let b = gen_set.bounds(v);
            let fe = Bound::bind(g, &t.extractor, false);
            let cl = Bound::bind(g, &t.classifier, false);
            build_gen(g, &b[0], &fe, &cl, div)
        })?;
        let leak = frozen_leak(&[&t.gen], &[&t.extractor, &t.classifier], |g, tb, fb| {
            build_gen(g, &tb[0], &fb[0], &fb[1], div)
        })?;
        out.push(TermCheck {
            term,
            seed,
            max_rel_error: report.max_rel_error,
            frozen_max_abs: leak,
        });
    }

    // Server side: train the global generator + classifier against two
    // perturbed copies of the toy client.
    let mut teachers_gen = Vec::new();
    let mut teachers_cls = Vec::new();
    for k in 0..2 {
        let mut r = RngStream::keyed("loss-suite-teacher", seed, &[k]);
        teachers_gen.push(t.gen.clone());
        let mut cls = t.classifier.clone();
        for (_, p) in cls.params_mut() {
            for v in p.data_mut() {
                *v += 0.1 * r.normal();
            }
        }
        teachers_cls.push(cls);
    }
    let counters = [
        LabelCounter { counts: vec![3, 1] },
        LabelCounter { counts: vec![1, 2] },
    ];
    let server_set = Wrt::new(&[&t.gen, &t.classifier]);
    let all = ServerTerms {
        kl1: true,
        kl2: true,
        kl3: true,
    };
    let report = check_directional(&server_set.tensors, FD_STEP, DIRECTIONS, &mut rng, |g, v| {
        let b = server_set.bounds(v);
        let teachers: Vec<Teacher> = (0..2)
            .map(|i| Teacher {
                gen: &teachers_gen[i],
                classifier: &teachers_cls[i],
                counter: &counters[i],
            })
            .collect();
        let gen = GenRef {
            bound: &b[0],
            params: &t.gen,
            mode: BnMode::Train,
        };
        let z = g.constant(t.z.clone());
        let l = server_distill_losses(g, gen, &b[1], &teachers, z, &t.yhat, 2, all)?;
        server_objective(g, &l)
    })?;
    out.push(TermCheck {
        term: "server_kl123",
        seed,
        max_rel_error: report.max_rel_error,
        frozen_max_abs: 0.0,
    });
    Ok(())
}

/// Runs every check for seeds `0..seeds`.
pub fn run(seeds: u64) -> Result<Vec<TermCheck>> {
    let mut out = Vec::new();
    for seed in 0..seeds {
        primitive_checks(seed, &mut out)?;
        model_checks(seed, &mut out)?;
    }
    Ok(out)
}

