//! Feature extractor, classifier and conditional generator.

mod serialize;

pub use serialize::{deserialize_like, deserialize_params, serialize_params, FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::numerics::layers::{init_batchnorm, init_conv, init_linear, update_running_stats, BN_EPS};
use crate::numerics::{BatchStats, Bound, Graph, ParamSet, RngStream, Tensor, Var};

/// Generator parameters, batch-norm running statistics included.
pub type GeneratorParams = ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    Lenet5,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; the pass reports them for a running-stat update.
    Train,
    /// Stored running statistics.
    Eval,
}

const MLP_HIDDEN: usize = 256;
const MLP_LATENT: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub backbone: Backbone,
    /// `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub noise_dim: usize,
    pub gen_hidden: usize,
    mlp_hidden: usize,
    latent_dim: usize,
}

impl ModelSpec {
    pub fn new(backbone: Backbone, input_shape: [usize; 3], classes: usize) -> Result<Self> {
        let latent_dim = match backbone {
            Backbone::Mlp => MLP_LATENT,
            Backbone::Lenet5 => {
                let [_, h, w] = input_shape;
                let side = |s: usize| -> Result<usize> {
                    let a = s.checked_sub(4).map(|v| v / 2).unwrap_or(0);
                    let b = a.checked_sub(4).map(|v| v / 2).unwrap_or(0);
                    if b == 0 {
                        return Err(Error::shape("lenet5", format!("input side {s} too small")));
                    }
                    Ok(b)
                };
                16 * side(h)? * side(w)?
            }
        };
        if classes < 2 || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("need >= 2 classes and a non-empty input".into()));
        }
        Ok(ModelSpec {
            backbone,
            input_shape,
            classes,
            noise_dim: 128,
            gen_hidden: 256,
            mlp_hidden: MLP_HIDDEN,
            latent_dim,
        })
    }

    /// Hidden and latent widths of the MLP backbone (default 256 and 128).
    pub fn with_mlp_widths(mut self, hidden: usize, latent: usize) -> Result<Self> {
        if self.backbone != Backbone::Mlp || hidden == 0 || latent == 0 {
            return Err(Error::InvalidArgument("MLP widths need the mlp backbone and non-zero sizes".into()));
        }
        self.mlp_hidden = hidden;
        self.latent_dim = latent;
        Ok(self)
    }

    pub fn with_noise_dim(mut self, q: usize) -> Self {
        self.noise_dim = q;
        self
    }

    pub fn with_gen_hidden(mut self, h: usize) -> Self {
        self.gen_hidden = h;
        self
    }

    /// Width `p` of the latent features.
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

/// Feature extractor and classifier of one client.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientModel {
    pub extractor: ParamSet,
    pub classifier: ParamSet,
}

pub const EXTRACTOR_PREFIX: &str = "extractor.";
pub const CLASSIFIER_PREFIX: &str = "classifier.";

impl ClientModel {
    pub fn init(spec: &ModelSpec, rng: &mut RngStream) -> Self {
        ClientModel {
            extractor: init_extractor(spec, rng),
            classifier: init_classifier(spec, rng),
        }
    }

    /// Both parts in one set under `extractor.` / `classifier.` prefixes.
    pub fn to_full(&self) -> ParamSet {
        let mut full = self.extractor.prefixed(EXTRACTOR_PREFIX);
        full.merge(self.classifier.prefixed(CLASSIFIER_PREFIX));
        full
    }

    pub fn from_full(full: &ParamSet) -> Self {
        ClientModel {
            extractor: full.strip_prefix(EXTRACTOR_PREFIX),
            classifier: full.strip_prefix(CLASSIFIER_PREFIX),
        }
    }
}

pub fn init_extractor(spec: &ModelSpec, rng: &mut RngStream) -> ParamSet {
    let mut ps = ParamSet::new();
    match spec.backbone {
        Backbone::Lenet5 => {
            init_conv(&mut ps, rng, "conv1", spec.input_shape[0], 6, 5);
            init_conv(&mut ps, rng, "conv2", 6, 16, 5);
        }
        Backbone::Mlp => {
            init_linear(&mut ps, rng, "fc1", spec.input_len(), spec.mlp_hidden);
            init_linear(&mut ps, rng, "fc2", spec.mlp_hidden, spec.latent_dim);
        }
    }
    ps
}

pub fn init_classifier(spec: &ModelSpec, rng: &mut RngStream) -> ParamSet {
    let mut ps = ParamSet::new();
    init_linear(&mut ps, rng, "fc1", spec.latent_dim, 120);
    init_linear(&mut ps, rng, "fc2", 120, 84);
    init_linear(&mut ps, rng, "fc3", 84, spec.classes);
    ps
}

pub fn init_generator(spec: &ModelSpec, rng: &mut RngStream) -> GeneratorParams {
    let h = spec.gen_hidden;
    let mut ps = ParamSet::new();
    init_linear(&mut ps, rng, "fc1", spec.noise_dim + spec.classes, h);
    init_batchnorm(&mut ps, "bn1", h);
    init_linear(&mut ps, rng, "fc2", h, h);
    init_batchnorm(&mut ps, "bn2", h);
    init_linear(&mut ps, rng, "fc3", h, spec.latent_dim);
    ps
}

fn lin(g: &mut Graph, b: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = b.var(&format!("{name}.weight"))?;
    let bias = b.var(&format!("{name}.bias"))?;
    g.linear(x, w, Some(bias))
}

/// `x: [B, C, H, W]` to latent features `[B, p]`.
pub fn extractor_forward(g: &mut Graph, spec: &ModelSpec, b: &Bound, x: Var) -> Result<Var> {
    let shape = g.value(x).shape();
    if shape.len() != 4 || shape[1..] != spec.input_shape {
        return Err(Error::shape(
            "extractor",
            format!("input {shape:?} for spec {:?}", spec.input_shape),
        ));
    }
    match spec.backbone {
        Backbone::Lenet5 => {
            let mut h = x;
            for layer in ["conv1", "conv2"] {
                let k = b.var(&format!("{layer}.weight"))?;
                let bias = b.var(&format!("{layer}.bias"))?;
                h = g.conv2d(h, k, bias)?;
                h = g.relu(h);
                h = g.maxpool2(h)?;
            }
            g.flatten(h)
        }
        Backbone::Mlp => {
            let h = g.flatten(x)?;
            let h = lin(g, b, "fc1", h)?;
            let h = g.relu(h);
            let h = lin(g, b, "fc2", h)?;
            Ok(g.relu(h))
        }
    }
}

/// Latent features `[B, p]` to logits `[B, c]`.
pub fn classifier_forward(g: &mut Graph, b: &Bound, f: Var) -> Result<Var> {
    let h = lin(g, b, "fc1", f)?;
    let h = g.relu(h);
    let h = lin(g, b, "fc2", h)?;
    let h = g.relu(h);
    lin(g, b, "fc3", h)
}

/// Output of a generator pass.
#[derive(Debug)]
pub struct GenOutput {
    pub features: Var,
    /// Batch statistics per batch-norm layer (train mode only).
    pub stats: Vec<(String, BatchStats)>,
}

/// `concat[z; y]` through two batch-normalized hidden layers to a
/// non-negative pseudo latent `[B, p]`.
pub fn generator_forward(
    g: &mut Graph,
    b: &Bound,
    state: &GeneratorParams,
    z: Var,
    y_onehot: Var,
    mode: BnMode,
) -> Result<GenOutput> {
    let mut h = g.concat_cols(z, y_onehot)?;
    let mut stats = Vec::new();
    for (fc, bn) in [("fc1", "bn1"), ("fc2", "bn2")] {
        h = lin(g, b, fc, h)?;
        let gamma = b.var(&format!("{bn}.weight"))?;
        let beta = b.var(&format!("{bn}.bias"))?;
        h = match mode {
            BnMode::Train => {
                let (out, s) = g.batchnorm_train(h, gamma, beta, BN_EPS)?;
                stats.push((bn.to_string(), s));
                out
            }
            BnMode::Eval => {
                let rm = state.state(&format!("{bn}.running_mean"))?.data().to_vec();
                let rv = state.state(&format!("{bn}.running_var"))?.data().to_vec();
                g.batchnorm_eval(h, gamma, beta, &rm, &rv, BN_EPS)?
            }
        };
        h = g.relu(h);
    }
    let out = lin(g, b, "fc3", h)?;
    Ok(GenOutput {
        features: g.relu(out),
        stats,
    })
}

/// Folds train-mode batch statistics into the running statistics.
pub fn apply_bn_stats(params: &mut GeneratorParams, stats: &[(String, BatchStats)]) -> Result<()> {
    for (name, s) in stats {
        update_running_stats(params, name, s)?;
    }
    Ok(())
}

/// One-shot generator evaluation outside a training graph.
pub fn generate(params: &GeneratorParams, z: &Tensor, y: &[usize], classes: usize, mode: BnMode) -> Result<Tensor> {
    let mut g = Graph::new();
    let b = Bound::bind(&mut g, params, false);
    let zv = g.constant(z.clone());
    let yv = g.constant(Tensor::one_hot(y, classes)?);
    let out = generator_forward(&mut g, &b, params, zv, yv, mode)?;
    Ok(g.value(out.features).clone())
}

const EVAL_CHUNK: usize = 500;

/// Logits of `model` on `images`, evaluated in chunks.
pub fn logits(spec: &ModelSpec, model: &ClientModel, images: &Tensor) -> Result<Tensor> {
    let n = images.shape().first().copied().unwrap_or(0);
    let mut data = Vec::with_capacity(n * spec.classes);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let mut g = Graph::new();
        let fb = Bound::bind(&mut g, &model.extractor, false);
        let cb = Bound::bind(&mut g, &model.classifier, false);
        let x = g.constant(images.select_rows(&idx));
        let f = extractor_forward(&mut g, spec, &fb, x)?;
        let out = classifier_forward(&mut g, &cb, f)?;
        data.extend_from_slice(g.value(out).data());
        start = end;
    }
    Tensor::new(vec![n, spec.classes], data)
}

pub fn predict(spec: &ModelSpec, model: &ClientModel, images: &Tensor) -> Result<Vec<usize>> {
    Ok(logits(spec, model, images)?.argmax_rows())
}

/// Latent features of `model` on `images`.
pub fn features(spec: &ModelSpec, extractor: &ParamSet, images: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let fb = Bound::bind(&mut g, extractor, false);
    let x = g.constant(images.clone());
    let f = extractor_forward(&mut g, spec, &fb, x)?;
    Ok(g.value(f).clone())
}
