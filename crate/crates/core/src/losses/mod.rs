//! Loss terms of the client and server objectives, built on the autodiff graph.
//!
//! All terms are batch means. Arrows in names follow the direction of
//! knowledge transfer: `forward_*` moves knowledge from the global generator
//! into the local model, `backward_*` from the local model into the local
//! generator.

pub mod suite;

use crate::datasets::LabelCounter;
use crate::error::{Error, Result};
use crate::models::{classifier_forward, extractor_forward, generator_forward, BnMode, GeneratorParams, ModelSpec};
use crate::numerics::{BatchStats, Bound, Graph, ParamSet, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    pub ramp_exponent: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
            lambda5: 1.0,
            lambda6: 1.0,
            ramp_exponent: 1.0,
        }
    }
}

impl HyperParams {
    pub fn zeros() -> Self {
        HyperParams {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            lambda6: 0.0,
            ramp_exponent: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5, self.lambda6];
        if l.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("lambda values must be finite and >= 0".into()));
        }
        if !(self.ramp_exponent > 0.0) {
            return Err(Error::Config("ramp exponent must be > 0".into()));
        }
        Ok(())
    }
}

/// Pairwise weighting used by the diversity term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diversity {
    /// `||z_j - z_k||`.
    V0,
    /// `||[z_j; y_j] - [z_k; y_k]||`.
    V1,
    /// `||z_j - z_k|| * exp(||y_j - y_k||_1)`.
    V2,
}

pub fn ce_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.cross_entropy(logits, labels)
}

/// Batch mean of `KL(softmax(p) || softmax(q))`.
pub fn kl_loss(g: &mut Graph, p_logits: Var, q_logits: Var) -> Result<Var> {
    g.kl_div(p_logits, q_logits, None)
}

/// Batch mean of per-row squared L2 distance.
pub fn mse_latent(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    g.mse_rows(a, b)
}

/// `exp(-(1/B^2) * sum_{j,k} ||f_j - f_k|| * W_jk)` with `W` set by `variant`.
pub fn diversity_loss(g: &mut Graph, variant: Diversity, z: Var, y_onehot: Var, f: Var) -> Result<Var> {
    let b = g.value(f).shape().first().copied().unwrap_or(0);
    if b == 0 {
        return Err(Error::InvalidBatch {
            op: "diversity_loss",
            detail: "empty batch".into(),
        });
    }
    let df = g.pairwise_dist(f)?;
    let w = match variant {
        Diversity::V0 => g.pairwise_dist(z)?,
        Diversity::V1 => {
            let zy = g.concat_cols(z, y_onehot)?;
            g.pairwise_dist(zy)?
        }
        Diversity::V2 => {
            let dz = g.pairwise_dist(z)?;
            let (_, c) = g.value(y_onehot).dims2("diversity_loss")?;
            let y = g.value(y_onehot).data();
            let mut factor = vec![0.0; b * b];
            for j in 0..b {
                for k in 0..b {
                    let l1: f64 = (0..c).map(|t| (y[j * c + t] - y[k * c + t]).abs()).sum();
                    factor[j * b + k] = l1.exp();
                }
            }
            let fv = g.constant(Tensor::new(vec![b, b], factor)?);
            g.mul(dz, fv)?
        }
    };
    let prod = g.mul(df, w)?;
    let total = g.sum(prod);
    let exponent = g.scale(total, -1.0 / (b * b) as f64);
    Ok(g.exp(exponent))
}

/// A generator placed on a graph with the batch-norm mode to run it in.
#[derive(Clone, Copy)]
pub struct GenRef<'a> {
    pub bound: &'a Bound,
    pub params: &'a GeneratorParams,
    pub mode: BnMode,
}

impl GenRef<'_> {
    fn run(&self, g: &mut Graph, z: Var, y_onehot: Var) -> Result<(Var, Vec<(String, BatchStats)>)> {
        let out = generator_forward(g, self.bound, self.params, z, y_onehot, self.mode)?;
        Ok((out.features, out.stats))
    }
}

/// A client model placed on a graph.
#[derive(Clone, Copy)]
pub struct ClientRef<'a> {
    pub spec: &'a ModelSpec,
    pub extractor: &'a Bound,
    pub classifier: &'a Bound,
}

fn one_hot(g: &mut Graph, labels: &[usize], classes: usize) -> Result<Var> {
    Ok(g.constant(Tensor::one_hot(labels, classes)?))
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardKd {
    pub ce: Var,
    pub mse: Var,
    pub kl: Var,
}

/// Plain cross entropy plus latent- and logit-level transfer from the frozen
/// global generator. With `detach_teacher` the generated branch of the KL is
/// treated as a constant.
#[allow(clippy::too_many_arguments)]
pub fn forward_kd_losses(
    g: &mut Graph,
    client: ClientRef,
    gen: GenRef,
    x: Var,
    y: &[usize],
    z: Var,
    detach_teacher: bool,
) -> Result<ForwardKd> {
    let f = extractor_forward(g, client.spec, client.extractor, x)?;
    let logits = classifier_forward(g, client.classifier, f)?;
    let ce = ce_loss(g, logits, y)?;
    let yv = one_hot(g, y, client.spec.classes)?;
    let (fake, _) = gen.run(g, z, yv)?;
    let fake = g.detach(fake);
    let mse = mse_latent(g, f, fake)?;
    let fake_logits = classifier_forward(g, client.classifier, fake)?;
    let fake_logits = if detach_teacher { g.detach(fake_logits) } else { fake_logits };
    let kl = kl_loss(g, logits, fake_logits)?;
    Ok(ForwardKd { ce, mse, kl })
}

/// Cross entropy of the local classifier on generated latents for resampled
/// labels.
pub fn forward_ce_on_generated(g: &mut Graph, client: ClientRef, gen: GenRef, z2: Var, yhat: &[usize]) -> Result<Var> {
    let yv = one_hot(g, yhat, client.spec.classes)?;
    let (fake, _) = gen.run(g, z2, yv)?;
    let fake = g.detach(fake);
    let logits = classifier_forward(g, client.classifier, fake)?;
    ce_loss(g, logits, yhat)
}

/// Terms of the local model objective; absent terms carry zero weight.
#[derive(Clone, Copy, Debug)]
pub struct LocalModelTerms {
    pub ce: Var,
    pub gen_ce: Option<Var>,
    pub mse: Option<Var>,
    pub kl: Option<Var>,
}

/// Effective (already ramped) weights of the generator-guided terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

/// Builds only the terms with a non-zero weight, so a zero-weight objective
/// is exactly plain cross entropy.
#[allow(clippy::too_many_arguments)]
pub fn local_model_terms(
    g: &mut Graph,
    client: ClientRef,
    gen: GenRef,
    x: Var,
    y: &[usize],
    z: Var,
    z2: Var,
    yhat: &[usize],
    w: ModelWeights,
    detach_teacher: bool,
) -> Result<LocalModelTerms> {
    let f = extractor_forward(g, client.spec, client.extractor, x)?;
    let logits = classifier_forward(g, client.classifier, f)?;
    let ce = ce_loss(g, logits, y)?;
    let gen_ce = if w.lambda1 != 0.0 {
        Some(forward_ce_on_generated(g, client, gen, z2, yhat)?)
    } else {
        None
    };
    let (mut mse, mut kl) = (None, None);
    if w.lambda2 != 0.0 || w.lambda3 != 0.0 {
        let yv = one_hot(g, y, client.spec.classes)?;
        let (fake, _) = gen.run(g, z, yv)?;
        let fake = g.detach(fake);
        if w.lambda2 != 0.0 {
            mse = Some(mse_latent(g, f, fake)?);
        }
        if w.lambda3 != 0.0 {
            let fl = classifier_forward(g, client.classifier, fake)?;
            let fl = if detach_teacher { g.detach(fl) } else { fl };
            kl = Some(kl_loss(g, logits, fl)?);
        }
    }
    Ok(LocalModelTerms { ce, gen_ce, mse, kl })
}

/// `L_ce + l1 * L_ce(generated) + l2 * L_mse + l3 * L_kl`.
pub fn local_model_objective(g: &mut Graph, t: &LocalModelTerms, w: ModelWeights) -> Result<Var> {
    let mut total = t.ce;
    for (term, lambda) in [(t.gen_ce, w.lambda1), (t.mse, w.lambda2), (t.kl, w.lambda3)] {
        if let Some(v) = term {
            if lambda != 0.0 {
                let s = g.scale(v, lambda);
                total = g.add(total, s)?;
            }
        }
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct BackwardKd {
    pub mse: Var,
    pub kl: Var,
    pub ce: Var,
    /// Generator output `G_i(z, y)`.
    pub fake: Var,
    pub stats: Vec<(String, BatchStats)>,
}

/// The same nodes cut from the gradient path.
fn detached(g: &mut Graph, b: &Bound) -> Bound {
    let vars: Vec<(String, Var)> = b.vars().map(|(k, v)| (k.clone(), *v)).collect();
    Bound::from_vars(vars.into_iter().map(|(k, v)| (k, g.detach(v))))
}

/// Transfer from the frozen local model into the local generator.
pub fn backward_kd_losses(g: &mut Graph, client: ClientRef, gen: GenRef, x: Var, y: &[usize], z: Var) -> Result<BackwardKd> {
    let f = extractor_forward(g, client.spec, client.extractor, x)?;
    let f = g.detach(f);
    let classifier = detached(g, client.classifier);
    let teacher = classifier_forward(g, &classifier, f)?;
    let yv = one_hot(g, y, client.spec.classes)?;
    let (fake, stats) = gen.run(g, z, yv)?;
    let mse = mse_latent(g, fake, f)?;
    let student = classifier_forward(g, &classifier, fake)?;
    let kl = kl_loss(g, student, teacher)?;
    let ce = ce_loss(g, student, y)?;
    Ok(BackwardKd {
        mse,
        kl,
        ce,
        fake,
        stats,
    })
}

/// `L_kl + l4 * L_mse + l5 * L_ce + l6 * L_div`. Zero-weight terms are
/// skipped; the diversity term is skipped when `diversity` is `None`.
#[allow(clippy::too_many_arguments)]
pub fn local_generator_objective(
    g: &mut Graph,
    t: &BackwardKd,
    z: Var,
    y: &[usize],
    classes: usize,
    hp: &HyperParams,
    diversity: Option<Diversity>,
) -> Result<Var> {
    let mut total = t.kl;
    for (term, lambda) in [(t.mse, hp.lambda4), (t.ce, hp.lambda5)] {
        if lambda != 0.0 {
            let s = g.scale(term, lambda);
            total = g.add(total, s)?;
        }
    }
    if let Some(variant) = diversity {
        if hp.lambda6 != 0.0 {
            let yv = one_hot(g, y, classes)?;
            let d = diversity_loss(g, variant, z, yv, t.fake)?;
            let s = g.scale(d, hp.lambda6);
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// A client's uploaded generator and classifier, used as a frozen teacher.
#[derive(Clone, Copy)]
pub struct Teacher<'a> {
    pub gen: &'a GeneratorParams,
    pub classifier: &'a ParamSet,
    pub counter: &'a LabelCounter,
}

/// `tau[i][b] = n_i^{yhat_b} / sum_j n_j^{yhat_b}`.
pub fn tau_weights(counters: &[&LabelCounter], yhat: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut tau = vec![vec![0.0; yhat.len()]; counters.len()];
    for (b, &y) in yhat.iter().enumerate() {
        let total: usize = counters
            .iter()
            .map(|c| c.counts.get(y).copied().unwrap_or(0))
            .sum();
        if total == 0 {
            return Err(Error::InvalidArgument(format!("sampled label {y} has zero total count")));
        }
        for (i, c) in counters.iter().enumerate() {
            tau[i][b] = c.counts[y] as f64 / total as f64;
        }
    }
    Ok(tau)
}

/// Which server terms to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ServerTerms {
    pub kl1: bool,
    pub kl2: bool,
    pub kl3: bool,
}

#[derive(Clone, Debug)]
pub struct ServerLosses {
    pub kl1: Option<Var>,
    pub kl2: Option<Var>,
    pub kl3: Option<Var>,
    /// Batch statistics of the global generator pass.
    pub stats: Vec<(String, BatchStats)>,
}

/// Crossed distillation from the frozen local teachers into the global
/// generator and classifier.
///
/// Teachers' generators normalize with their own batch statistics (their
/// running statistics are not touched).
#[allow(clippy::too_many_arguments)]
pub fn server_distill_losses(
    g: &mut Graph,
    global_gen: GenRef,
    global_cls: &Bound,
    teachers: &[Teacher],
    z: Var,
    yhat: &[usize],
    classes: usize,
    which: ServerTerms,
) -> Result<ServerLosses> {
    let counters: Vec<&LabelCounter> = teachers.iter().map(|t| t.counter).collect();
    let tau = tau_weights(&counters, yhat)?;
    let yv = one_hot(g, yhat, classes)?;
    let (fake_g, stats) = global_gen.run(g, z, yv)?;
    let rho_g = classifier_forward(g, global_cls, fake_g)?;

    let mut acc: [Option<Var>; 3] = [None, None, None];
    let mut push = |g: &mut Graph, slot: usize, v: Var| -> Result<()> {
        acc[slot] = Some(match acc[slot] {
            Some(prev) => g.add(prev, v)?,
            None => v,
        });
        Ok(())
    };
    for (t, w) in teachers.iter().zip(tau) {
        let gb = Bound::bind(g, t.gen, false);
        let cb = Bound::bind(g, t.classifier, false);
        let teacher_gen = GenRef {
            bound: &gb,
            params: t.gen,
            mode: BnMode::Train,
        };
        let (fake_i, _) = teacher_gen.run(g, z, yv)?;
        let fake_i = g.detach(fake_i);
        let rho_i = classifier_forward(g, &cb, fake_i)?;
        let rho_i = g.detach(rho_i);
        if which.kl1 {
            let v = g.kl_div(rho_g, rho_i, Some(w.clone()))?;
            push(g, 0, v)?;
        }
        if which.kl2 {
            let rho_ig = classifier_forward(g, global_cls, fake_i)?;
            let v = g.kl_div(rho_ig, rho_i, Some(w.clone()))?;
            push(g, 1, v)?;
        }
        if which.kl3 {
            let rho_gi = classifier_forward(g, &cb, fake_g)?;
            let v = g.kl_div(rho_gi, rho_i, Some(w))?;
            push(g, 2, v)?;
        }
    }
    let [kl1, kl2, kl3] = acc;
    Ok(ServerLosses { kl1, kl2, kl3, stats })
}

/// Sum of the built server terms.
pub fn server_objective(g: &mut Graph, l: &ServerLosses) -> Result<Var> {
    let terms: Vec<Var> = [l.kl1, l.kl2, l.kl3].into_iter().flatten().collect();
    let (first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("no server term selected".into()))?;
    let mut total = *first;
    for &t in rest {
        total = g.add(total, t)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
