//! Gradient-inversion auditing: a DLG attacker that matches the gradients
//! of the shared parameters on a secret batch, PSNR scoring and the
//! closed-form input recovery for a single linear layer.

use crate::baselines::SharingPolicy;
use crate::error::{Error, Result};
use crate::models::{classifier_forward, extractor_forward, ClientModel, ModelSpec, CLASSIFIER_PREFIX, EXTRACTOR_PREFIX};
use crate::numerics::{adam_step, AdamConfig, AdamState, Bound, Graph, ParamSet, RngStream, Tensor, Var};

/// Returned by [`psnr`] when the two images are identical.
pub const PSNR_CAP: f64 = 100.0;

/// `10 log10(max^2 / MSE)` in dB, capped at [`PSNR_CAP`].
pub fn psnr(original: &Tensor, reconstructed: &Tensor, max_value: f64) -> Result<f64> {
    if original.shape() != reconstructed.shape() {
        return Err(Error::shape(
            "psnr",
            format!("{:?} vs {:?}", original.shape(), reconstructed.shape()),
        ));
    }
    if original.numel() == 0 {
        return Err(Error::InvalidArgument("psnr of empty images".into()));
    }
    let mse = original
        .data()
        .iter()
        .zip(reconstructed.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / original.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Input of a single-sample linear layer `W x + b` from its cross-entropy
/// gradients. Each row of `grad_W` is `(p_k - y_k) x`, so any row with a
/// nonzero bias gradient gives `x` exactly; without the bias the largest row
/// gives `x` up to scale.
pub fn recover_linear_input(grad_w: &Tensor, grad_b: Option<&Tensor>) -> Result<Vec<f64>> {
    let (rows, _) = grad_w.dims2("recover_linear_input")?;
    if rows == 0 {
        return Err(Error::InvalidArgument("empty weight gradient".into()));
    }
    let norm = |k: usize| grad_w.row(k).iter().map(|v| v * v).sum::<f64>();
    match grad_b {
        Some(gb) => {
            if gb.numel() != rows {
                return Err(Error::shape("recover_linear_input", "bias gradient length"));
            }
            let k = (0..rows)
                .max_by(|&a, &b| gb.data()[a].abs().total_cmp(&gb.data()[b].abs()))
                .unwrap_or(0);
            let s = gb.data()[k];
            if s == 0.0 {
                return Err(Error::InvalidArgument("all bias gradients are zero".into()));
            }
            Ok(grad_w.row(k).iter().map(|v| v / s).collect())
        }
        None => {
            let k = (0..rows).max_by(|&a, &b| norm(a).total_cmp(&norm(b))).unwrap_or(0);
            if norm(k) == 0.0 {
                return Err(Error::InvalidArgument("all weight gradients are zero".into()));
            }
            Ok(grad_w.row(k).to_vec())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub steps: usize,
    pub lr: f64,
    /// Box the dummy input is clamped to after every step.
    pub bounds: (f64, f64),
    /// Parameters whose gradients the attacker observes.
    pub target: SharingPolicy,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            steps: 300,
            lr: 0.1,
            bounds: (0.0, 1.0),
            target: SharingPolicy {
                extractor: true,
                classifier: true,
            },
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("attack needs at least one step".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("attack lr must be > 0, got {}", self.lr)));
        }
        if !(self.bounds.0 < self.bounds.1) {
            return Err(Error::Config(format!("empty image bounds {:?}", self.bounds)));
        }
        if !self.target.extractor && !self.target.classifier {
            return Err(Error::Config("attack target observes no parameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    /// Best dummy input found.
    pub x: Tensor,
    /// Soft-label logits of the best iterate.
    pub label_logits: Tensor,
    /// Matching loss of the best iterate.
    pub match_loss: f64,
    /// Matching loss at every evaluated iterate, starting with the initial one.
    pub trace: Vec<f64>,
    /// Set when a non-finite loss or gradient stopped the optimization.
    pub diverged: bool,
}

impl AttackResult {
    pub fn labels(&self) -> Vec<usize> {
        self.label_logits.argmax_rows()
    }

    pub fn initial_loss(&self) -> f64 {
        self.trace.first().copied().unwrap_or(f64::NAN)
    }
}

/// `-mean_b sum_k softmax(l)_bk log_softmax(logits)_bk`, built from
/// primitives so that it can be differentiated twice.
fn soft_cross_entropy(g: &mut Graph, logits: Var, label_logits: Var) -> Result<Var> {
    let b = g.value(logits).shape()[0] as f64;
    let p = g.softmax(label_logits)?;
    let lp = g.log_softmax(logits)?;
    let m = g.mul(p, lp)?;
    let s = g.sum(m);
    Ok(g.scale(s, -1.0 / b))
}

/// Gradient matching against `observed`, generic over the victim network.
/// `forward` maps the dummy input to logits and returns the graph leaves of
/// the observed parameters, in the order of `observed`.
pub fn match_gradients<F>(
    input_shape: &[usize],
    classes: usize,
    observed: &[Tensor],
    cfg: &AttackConfig,
    forward: F,
) -> Result<AttackResult>
where
    F: Fn(&mut Graph, Var) -> Result<(Var, Vec<Var>)>,
{
    cfg.validate()?;
    let batch = *input_shape
        .first()
        .ok_or_else(|| Error::InvalidArgument("input shape without batch axis".into()))?;
    let mut rng = RngStream::keyed("dlg", cfg.seed, &[]);
    let (lo, hi) = cfg.bounds;
    let mut dummy = ParamSet::new();
    dummy.insert("label", Tensor::zeros(&[batch, classes]));
    dummy.insert("x", rng.uniform_tensor(input_shape, lo, hi));

    let evaluate = |dummy: &ParamSet| -> Result<(f64, ParamSet)> {
        let mut g = Graph::new();
        let xv = g.param(dummy.get("x")?.clone());
        let lv = g.param(dummy.get("label")?.clone());
        let (logits, params) = forward(&mut g, xv)?;
        if params.len() != observed.len() {
            return Err(Error::ParamMismatch(format!(
                "{} observed gradients for {} parameters",
                observed.len(),
                params.len()
            )));
        }
        let loss = soft_cross_entropy(&mut g, logits, lv)?;
        let grads = g.grad_graph(loss, &params)?;
        let mut total: Option<Var> = None;
        for (gv, obs) in grads.into_iter().zip(observed) {
            let o = g.constant(obs.clone());
            let d = g.sub(gv, o)?;
            let sq = g.mul(d, d)?;
            let s = g.sum(sq);
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        let total = total.ok_or_else(|| Error::InvalidArgument("no observed gradients".into()))?;
        let back = g.backward(total)?;
        let mut out = ParamSet::new();
        out.insert("label", back.get(lv));
        out.insert("x", back.get(xv));
        Ok((g.scalar(total), out))
    };

    let adam = AdamConfig::new(cfg.lr, 0.0);
    let mut state = AdamState::fresh();
    let mut best = (f64::INFINITY, dummy.clone());
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut diverged = false;
    for step in 0..=cfg.steps {
        let (loss, grads) = evaluate(&dummy)?;
        if !loss.is_finite() || !grads.is_finite() {
            diverged = true;
            break;
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, dummy.clone());
        }
        if step == cfg.steps {
            break;
        }
        adam_step(&mut dummy, &grads, &adam, &mut state)?;
        for v in dummy.get_mut("x")?.data_mut() {
            *v = v.clamp(lo, hi);
        }
    }
    let (match_loss, best) = best;
    Ok(AttackResult {
        x: best.get("x")?.clone(),
        label_logits: best.get("label")?.clone(),
        match_loss,
        trace,
        diverged,
    })
}

/// Binds `model` with only the parts in `target` as differentiable leaves;
/// returns the full-name binding and the observed leaves in name order.
fn bind_victim(g: &mut Graph, model: &ClientModel, target: SharingPolicy) -> (Bound, Bound, Vec<Var>) {
    let fe = Bound::bind(g, &model.extractor, target.extractor);
    let cl = Bound::bind(g, &model.classifier, target.classifier);
    let full = Bound::from_vars(
        fe.vars()
            .map(|(k, v)| (format!("{EXTRACTOR_PREFIX}{k}"), *v))
            .chain(cl.vars().map(|(k, v)| (format!("{CLASSIFIER_PREFIX}{k}"), *v))),
    );
    let observed: Vec<Var> = full
        .vars()
        .filter(|(k, _)| {
            (target.extractor && k.starts_with(EXTRACTOR_PREFIX)) || (target.classifier && k.starts_with(CLASSIFIER_PREFIX))
        })
        .map(|(_, v)| *v)
        .collect();
    (fe, cl, observed)
}

/// The victim's mean cross-entropy gradient on the secret batch, restricted
/// to the shared parts and keyed like [`SharingPolicy::shared`].
pub fn observed_gradients(
    spec: &ModelSpec,
    model: &ClientModel,
    target: SharingPolicy,
    x: &Tensor,
    y: &[usize],
) -> Result<ParamSet> {
    let mut g = Graph::new();
    let fe = Bound::bind(&mut g, &model.extractor, target.extractor);
    let cl = Bound::bind(&mut g, &model.classifier, target.classifier);
    let xv = g.constant(x.clone());
    let f = extractor_forward(&mut g, spec, &fe, xv)?;
    let logits = classifier_forward(&mut g, &cl, f)?;
    let loss = g.cross_entropy(logits, y)?;
    let grads = g.backward(loss)?;
    let mut out = ParamSet::new();
    if target.extractor {
        out.merge(fe.grads(&grads).prefixed(EXTRACTOR_PREFIX));
    }
    if target.classifier {
        out.merge(cl.grads(&grads).prefixed(CLASSIFIER_PREFIX));
    }
    Ok(out)
}

/// DLG against a decoupled model that shares `cfg.target`.
pub fn dlg_attack(
    spec: &ModelSpec,
    model: &ClientModel,
    observed: &ParamSet,
    batch: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let expected = cfg.target.shared(model);
    if !observed.same_layout(&expected) {
        return Err(Error::ParamMismatch(
            "observed gradients do not match the attack target".into(),
        ));
    }
    let obs: Vec<Tensor> = observed.params().map(|(_, t)| t.clone()).collect();
    let [c, h, w] = spec.input_shape;
    match_gradients(&[batch, c, h, w], spec.classes, &obs, cfg, |g, x| {
        let (fe, cl, params) = bind_victim(g, model, cfg.target);
        let f = extractor_forward(g, spec, &fe, x)?;
        let logits = classifier_forward(g, &cl, f)?;
        Ok((logits, params))
    })
}

#[derive(Clone, Debug)]
pub struct AttackReport {
    pub result: AttackResult,
    pub psnr: f64,
}

/// Observes the victim's gradient on `(x, y)`, attacks it and scores the
/// reconstruction against `x`.
pub fn audit_client(
    spec: &ModelSpec,
    model: &ClientModel,
    x: &Tensor,
    y: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    let observed = observed_gradients(spec, model, cfg.target, x, y)?;
    let result = dlg_attack(spec, model, &observed, y.len(), cfg)?;
    let psnr = psnr(x, &result.x, cfg.bounds.1 - cfg.bounds.0)?;
    Ok(AttackReport { result, psnr })
}

#[cfg(test)]
#[path = "privacy_tests.rs"]
mod tests;
