//! Toy generator visualization: a teacher trained on labeled data guides a
//! generator through the local generator objective, and both the teacher's
//! latent features and the generator's outputs are projected to 2-D.

use crate::baselines::local_ce_training;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::fedcore::{client_generator_update, initial_parameters, ClientData, ClientState, RunConfig};
use crate::losses::{Diversity, HyperParams};
use crate::models::{features, generate, BnMode, ClientModel, GeneratorParams, ModelSpec};
use crate::numerics::{AdamState, RngStream, Tensor};

use super::pca::Pca2;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub teacher_steps: usize,
    pub teacher_lr: f64,
    pub gen_steps: usize,
    pub gen_lr: f64,
    pub batch: usize,
    pub hyper: HyperParams,
    /// Generated points per class.
    pub per_class: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            teacher_steps: 300,
            teacher_lr: 0.05,
            gen_steps: 300,
            gen_lr: 3e-3,
            batch: 64,
            hyper: HyperParams::default(),
            per_class: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointKind {
    Teacher,
    Generated,
}

impl PointKind {
    pub fn name(self) -> &'static str {
        match self {
            PointKind::Teacher => "teacher",
            PointKind::Generated => "generated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(PointKind::Teacher),
            "generated" => Ok(PointKind::Generated),
            other => Err(Error::format("toyviz csv", format!("unknown point kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyPoint {
    pub kind: PointKind,
    pub label: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Clone, Debug)]
pub struct ToyResult {
    /// Teacher latents of the view set, then generated outputs.
    pub points: Vec<ToyPoint>,
    /// Raw generator outputs `[classes * per_class, p]`.
    pub generated: Tensor,
    pub generated_labels: Vec<usize>,
    pub teacher: ClientModel,
    pub generator: GeneratorParams,
}

impl ToyResult {
    /// Mean within-class pairwise distance of the raw generator outputs.
    pub fn generated_spread(&self) -> f64 {
        within_class_spread(&self.generated, &self.generated_labels)
    }
}

/// Mean over classes of the mean pairwise Euclidean distance between the
/// rows of `points` carrying that label. Classes with fewer than two rows
/// are skipped.
pub fn within_class_spread(points: &Tensor, labels: &[usize]) -> f64 {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..classes {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if rows.len() < 2 {
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0;
        for (a, &i) in rows.iter().enumerate() {
            for &j in &rows[a + 1..] {
                let d: f64 = points.row(i).iter().zip(points.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                sum += d.sqrt();
                pairs += 1;
            }
        }
        total += sum / pairs as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Trains a teacher on `train`, trains a generator against the frozen
/// teacher with the given diversity variant (or none), and projects the
/// teacher latents of `view` and the generated outputs onto the principal
/// axes of the teacher latents.
pub fn toy_divloss_pipeline(
    spec: &ModelSpec,
    train: &Dataset,
    view: &Dataset,
    diversity: Option<Diversity>,
    cfg: &ToyConfig,
) -> Result<ToyResult> {
    if cfg.per_class == 0 || cfg.teacher_steps == 0 || cfg.gen_steps == 0 {
        return Err(Error::Config("toyviz needs nonzero steps and per_class".into()));
    }
    let run = RunConfig {
        rounds: 1,
        clients: 1,
        client_steps: cfg.teacher_steps,
        batch: cfg.batch,
        lr_model: cfg.teacher_lr,
        lr_gen: cfg.gen_lr,
        weight_decay: 0.0,
        hyper: cfg.hyper.clone(),
        diversity,
        seed: cfg.seed,
        ..RunConfig::default()
    };
    run.validate()?;
    let all: Vec<usize> = (0..train.len()).collect();
    let data = ClientData {
        train,
        indices: &all,
    };
    let (mut teacher, gen) = initial_parameters(spec, cfg.seed);
    local_ce_training(&mut teacher, spec, data, 0, &run, 1)?;

    let mut state = ClientState {
        id: 0,
        gen,
        model: teacher,
        gen_adam: AdamState::fresh(),
    };
    let gen_run = RunConfig {
        client_steps: cfg.gen_steps,
        ..run
    };
    client_generator_update(&mut state, spec, data, &gen_run, 1)?;

    let latents = features(spec, &state.model.extractor, &view.images)?;
    let labels: Vec<usize> = (0..spec.classes).flat_map(|c| std::iter::repeat_n(c, cfg.per_class)).collect();
    let mut rng = RngStream::new("toy-noise", cfg.seed);
    let z = rng.normal_tensor(&[labels.len(), spec.noise_dim]);
    let generated = generate(&state.gen, &z, &labels, spec.classes, BnMode::Eval)?;

    let pca = Pca2::fit(&latents)?;
    let mut points = Vec::with_capacity(view.len() + labels.len());
    for (kind, coords, ls) in [
        (PointKind::Teacher, pca.project(&latents)?, &view.labels),
        (PointKind::Generated, pca.project(&generated)?, &labels),
    ] {
        for (i, &label) in ls.iter().enumerate() {
            points.push(ToyPoint {
                kind,
                label,
                pc1: coords.row(i)[0],
                pc2: coords.row(i)[1],
            });
        }
    }
    Ok(ToyResult {
        points,
        generated,
        generated_labels: labels,
        teacher: state.model,
        generator: state.gen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::BlobSpec;
    use crate::models::Backbone;

    fn setup(seed: u64) -> (ModelSpec, Dataset, Dataset) {
        let blobs = BlobSpec {
            classes: 3,
            dim: 4,
            separation: 5.0,
            seed,
        };
        let spec = ModelSpec::new(Backbone::Mlp, [1, 1, 4], 3)
            .unwrap()
            .with_mlp_widths(16, 4)
            .unwrap()
            .with_noise_dim(1)
            .with_gen_hidden(16);
        (spec, blobs.sample(30, 0).unwrap(), blobs.sample(10, 1).unwrap())
    }

    fn quick(seed: u64) -> ToyConfig {
        ToyConfig {
            teacher_steps: 30,
            gen_steps: 30,
            batch: 16,
            per_class: 7,
            seed,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn spread_matches_brute_force() {
        let pts = Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![1.0, 1.0], vec![0.0, 6.0], vec![9.0, 9.0]]).unwrap();
        let labels = [0, 0, 1, 0, 2];
        // class 0: pairs (0,1)=5, (0,3)=6, (1,3)=sqrt(9+4); class 1 and 2 skipped
        let expected = (5.0 + 6.0 + 13f64.sqrt()) / 3.0;
        assert!((within_class_spread(&pts, &labels) - expected).abs() < 1e-12);
        assert_eq!(within_class_spread(&pts, &[0, 1, 2, 3, 4]), 0.0);
    }

    #[test]
    fn rows_cover_view_and_generated_points() {
        let (spec, train, view) = setup(0);
        let res = toy_divloss_pipeline(&spec, &train, &view, Some(Diversity::V2), &quick(0)).unwrap();
        assert_eq!(res.points.len(), view.len() + 3 * 7);
        let teacher = res.points.iter().filter(|p| p.kind == PointKind::Teacher).count();
        assert_eq!(teacher, view.len());
        assert!(res.points.iter().all(|p| p.pc1.is_finite() && p.pc2.is_finite() && p.label < 3));
        assert_eq!(res.generated.shape(), &[21, 4]);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let (spec, train, view) = setup(1);
        let a = toy_divloss_pipeline(&spec, &train, &view, None, &quick(1)).unwrap();
        let b = toy_divloss_pipeline(&spec, &train, &view, None, &quick(1)).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [PointKind::Teacher, PointKind::Generated] {
            assert_eq!(PointKind::parse(k.name()).unwrap(), k);
        }
        assert!(PointKind::parse("real").is_err());
    }
}
