//! Experiment files: one TOML document per experiment plus `key=value`
//! overrides from the command line.
//!
//! ```toml
//! output = "out/blobs"
//! method = "fedmdcg"        # fedmdcg | fedavg | lt | fedper | lgfedavg
//! seeds = [0, 1, 2]
//!
//! [data]
//! kind = "blobs"            # blobs | idx | cifar10
//! train_per_class = 250
//!
//! [run]
//! rounds = 30
//! clients = 5
//! agg = "kdc"
//! ```

use std::path::{Component, Path, PathBuf};

use serde::Deserialize;

use crate::baselines::{Method, SharingPolicy};
use crate::datasets::{load_cifar10, load_idx, BlobSpec, Dataset, Split};
use crate::error::{Error, Result};
use crate::evalpriv::{AttackConfig, ToyConfig};
use crate::fedcore::{AggMode, RunConfig};
use crate::losses::{Diversity, HyperParams};
use crate::models::{Backbone, ModelSpec};

/// Environment variable consulted for relative dataset paths that do not
/// resolve against the config file's directory.
pub const DATA_DIR_ENV: &str = "FEDMDCG_DATA_DIR";

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub output: PathBuf,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub toyviz: ToySection,
}

fn default_method() -> String {
    "fedmdcg".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Blobs,
    Idx,
    Cifar10,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    /// Directory of the idx or cifar10 files.
    pub path: Option<PathBuf>,
    /// Class count (blobs and idx; cifar10 is always 10).
    pub classes: Option<usize>,
    /// Blob dimension.
    pub dim: Option<usize>,
    /// Blob mean separation.
    pub separation: Option<f64>,
    /// Samples per class; a stratified subset for file datasets.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    /// Blob draw and subset selection seed.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: Option<String>,
    pub mlp_hidden: Option<usize>,
    pub mlp_latent: Option<usize>,
    pub noise_dim: Option<usize>,
    pub gen_hidden: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub rounds: Option<usize>,
    pub clients: Option<usize>,
    pub client_steps: Option<usize>,
    pub server_steps: Option<usize>,
    pub batch: Option<usize>,
    pub lr_model: Option<f64>,
    pub lr_gen: Option<f64>,
    pub lr_server: Option<f64>,
    pub weight_decay: Option<f64>,
    pub omega: Option<f64>,
    pub agg: Option<String>,
    /// "v0", "v1", "v2" or "none".
    pub diversity: Option<String>,
    pub detach_teacher: Option<bool>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub lambda4: Option<f64>,
    pub lambda5: Option<f64>,
    pub lambda6: Option<f64>,
    pub ramp_exponent: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    /// "full", "extractor" or "classifier"; defaults to what the method shares.
    pub target: Option<String>,
    /// Secret batch size.
    pub samples: Option<usize>,
    pub bounds: Option<[f64; 2]>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ToySection {
    pub teacher_steps: Option<usize>,
    pub teacher_lr: Option<f64>,
    pub gen_steps: Option<usize>,
    pub gen_lr: Option<f64>,
    pub batch: Option<usize>,
    pub per_class: Option<usize>,
    pub noise_dim: Option<usize>,
    pub latent_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub gen_hidden: Option<usize>,
    /// Diversity settings to compare; default `["none", "v2"]`.
    pub variants: Option<Vec<String>>,
}

pub fn parse_diversity(s: &str) -> Result<Option<Diversity>> {
    match s {
        "none" => Ok(None),
        "v0" => Ok(Some(Diversity::V0)),
        "v1" => Ok(Some(Diversity::V1)),
        "v2" => Ok(Some(Diversity::V2)),
        other => Err(Error::Config(format!(
            "unknown diversity `{other}` (expected none, v0, v1 or v2)"
        ))),
    }
}

pub fn diversity_name(d: Option<Diversity>) -> &'static str {
    match d {
        None => "none",
        Some(Diversity::V0) => "v0",
        Some(Diversity::V1) => "v1",
        Some(Diversity::V2) => "v2",
    }
}

/// The method an experiment runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodChoice {
    FedMdCg,
    Baseline(Method),
}

impl MethodChoice {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "fedmdcg" {
            return Ok(MethodChoice::FedMdCg);
        }
        Method::parse(s).map(MethodChoice::Baseline).map_err(|_| {
            Error::Config(format!(
                "unknown method `{s}` (expected fedmdcg, fedavg, lt, fedper or lgfedavg)"
            ))
        })
    }

    /// What the server observes from a client.
    pub fn shared(self) -> SharingPolicy {
        match self {
            MethodChoice::FedMdCg => SharingPolicy {
                extractor: false,
                classifier: true,
            },
            MethodChoice::Baseline(m) => m.policy(),
        }
    }
}

/// A validated experiment: the file after overrides, with its location for
/// resolving relative paths.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub file: ExperimentFile,
    pub base_dir: PathBuf,
    pub method: MethodChoice,
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<()> {
    let (last, parents) = path
        .split_last()
        .ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{}` crosses a non-table", path.join("."))))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

const TOP_LEVEL: [&str; 3] = ["output", "method", "seeds"];

/// Applies `key=value` to the raw document. Dotted keys address a section
/// (`attack.steps=50`); bare keys other than `output`, `method` and `seeds`
/// go to `[run]`.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let mut path: Vec<&str> = key.split('.').collect();
    if path.len() == 1 && !TOP_LEVEL.contains(&key) {
        path.insert(0, "run");
    }
    set_path(table, &path, override_value(raw.trim()))
}

fn diagnostic(origin: &str, e: toml::de::Error) -> Error {
    Error::Config(format!("{origin}: {e}"))
}

impl Experiment {
    /// Parses `text` (with line-level diagnostics), applies `overrides`
    /// and validates everything that can be checked without data.
    pub fn from_str(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let origin = base_dir.display().to_string();
        toml::from_str::<ExperimentFile>(text).map_err(|e| diagnostic(&origin, e))?;
        let mut table: toml::Table = text.parse().map_err(|e| diagnostic(&origin, e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let file: ExperimentFile = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("after overrides: {e}")))?;
        let exp = Experiment {
            method: MethodChoice::parse(&file.method)?,
            file,
            base_dir: base_dir.to_path_buf(),
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str(&text, base, overrides).map_err(|e| match e {
            Error::Config(m) if m.starts_with(&base.display().to_string()) => {
                Error::Config(format!("{}{}", path.display(), &m[base.display().to_string().len()..]))
            }
            other => other,
        })
    }

    fn validate(&self) -> Result<()> {
        let f = &self.file;
        if f.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let d = &f.data;
        match d.kind {
            DataKind::Blobs => {
                if d.path.is_some() {
                    return Err(Error::Config("data.path does not apply to blobs".into()));
                }
            }
            DataKind::Idx | DataKind::Cifar10 => {
                if d.path.is_none() {
                    return Err(Error::Config("data.path is required for idx and cifar10".into()));
                }
                if d.dim.is_some() || d.separation.is_some() {
                    return Err(Error::Config("data.dim and data.separation only apply to blobs".into()));
                }
                if d.kind == DataKind::Cifar10 && d.classes.is_some_and(|c| c != 10) {
                    return Err(Error::Config("cifar10 has 10 classes".into()));
                }
            }
        }
        for s in &f.seeds {
            self.run_config(*s)?;
        }
        self.backbone()?;
        self.attack_config(self.method)?;
        self.toy_variants()?;
        self.toy_config(0)?;
        Ok(())
    }

    pub fn backbone(&self) -> Result<Backbone> {
        match self.file.model.backbone.as_deref().unwrap_or("mlp") {
            "mlp" => Ok(Backbone::Mlp),
            "lenet5" => Ok(Backbone::Lenet5),
            other => Err(Error::Config(format!("unknown backbone `{other}` (expected mlp or lenet5)"))),
        }
    }

    pub fn run_config(&self, seed: u64) -> Result<RunConfig> {
        let r = &self.file.run;
        let d = RunConfig::default();
        let h = HyperParams::default();
        let cfg = RunConfig {
            rounds: r.rounds.unwrap_or(d.rounds),
            clients: r.clients.unwrap_or(d.clients),
            client_steps: r.client_steps.unwrap_or(d.client_steps),
            server_steps: r.server_steps.unwrap_or(d.server_steps),
            batch: r.batch.unwrap_or(d.batch),
            lr_model: r.lr_model.unwrap_or(d.lr_model),
            lr_gen: r.lr_gen.unwrap_or(d.lr_gen),
            lr_server: r.lr_server.unwrap_or(d.lr_server),
            weight_decay: r.weight_decay.unwrap_or(d.weight_decay),
            hyper: HyperParams {
                lambda1: r.lambda1.unwrap_or(h.lambda1),
                lambda2: r.lambda2.unwrap_or(h.lambda2),
                lambda3: r.lambda3.unwrap_or(h.lambda3),
                lambda4: r.lambda4.unwrap_or(h.lambda4),
                lambda5: r.lambda5.unwrap_or(h.lambda5),
                lambda6: r.lambda6.unwrap_or(h.lambda6),
                ramp_exponent: r.ramp_exponent.unwrap_or(h.ramp_exponent),
            },
            diversity: match &r.diversity {
                Some(s) => parse_diversity(s)?,
                None => d.diversity,
            },
            agg: match &r.agg {
                Some(s) => AggMode::parse(s)?,
                None => d.agg,
            },
            detach_teacher: r.detach_teacher.unwrap_or(d.detach_teacher),
            omega: r.omega.unwrap_or(d.omega),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Output sub-directory of the method: `fedmdcg_<agg>` or the baseline name.
    pub fn tag(&self) -> Result<String> {
        Ok(match self.method {
            MethodChoice::FedMdCg => format!("fedmdcg_{}", self.run_config(self.file.seeds[0])?.agg.name()),
            MethodChoice::Baseline(m) => m.name().to_string(),
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        let out = &self.file.output;
        if out.is_absolute() {
            out.clone()
        } else {
            self.base_dir.join(out)
        }
    }

    /// Resolves a dataset path against the config directory, then
    /// [`DATA_DIR_ENV`].
    pub fn resolve_data_path(&self, p: &Path) -> Result<PathBuf> {
        if p.is_absolute() {
            return Ok(p.to_path_buf());
        }
        let local = self.base_dir.join(p);
        if local.exists() {
            return Ok(local);
        }
        if let Some(root) = std::env::var_os(DATA_DIR_ENV) {
            // `../data/fmnist` is looked up as `$DIR/data/fmnist`, then `$DIR/fmnist`
            let root = PathBuf::from(root);
            let inner: PathBuf = p.components().skip_while(|c| matches!(c, Component::ParentDir | Component::CurDir)).collect();
            let candidates = [Some(root.join(&inner)), p.file_name().map(|n| root.join(n))];
            if let Some(found) = candidates.into_iter().flatten().find(|c| c.exists()) {
                return Ok(found);
            }
        }
        Err(Error::Config(format!(
            "dataset directory `{}` not found next to the config or under ${DATA_DIR_ENV}",
            p.display()
        )))
    }

    /// Train and test sets.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.file.data;
        let (train, test) = match d.kind {
            DataKind::Blobs => {
                let blobs = BlobSpec {
                    classes: d.classes.unwrap_or(4),
                    dim: d.dim.unwrap_or(8),
                    separation: d.separation.unwrap_or(5.0),
                    seed: d.seed,
                };
                return Ok((
                    blobs.sample(d.train_per_class.unwrap_or(250), 0)?,
                    blobs.sample(d.test_per_class.unwrap_or(100), 1)?,
                ));
            }
            DataKind::Idx => {
                let dir = self.resolve_data_path(d.path.as_deref().unwrap_or(Path::new("")))?;
                let classes = d.classes.unwrap_or(10);
                (load_idx(&dir, Split::Train, classes)?, load_idx(&dir, Split::Test, classes)?)
            }
            DataKind::Cifar10 => {
                let dir = self.resolve_data_path(d.path.as_deref().unwrap_or(Path::new("")))?;
                (load_cifar10(&dir, Split::Train)?, load_cifar10(&dir, Split::Test)?)
            }
        };
        let cut = |ds: Dataset, pc: Option<usize>| match pc {
            Some(pc) => ds.stratified_subset(pc, d.seed),
            None => ds,
        };
        Ok((cut(train, d.train_per_class), cut(test, d.test_per_class)))
    }

    pub fn model_spec(&self, input_shape: [usize; 3], classes: usize) -> Result<ModelSpec> {
        let m = &self.file.model;
        let backbone = self.backbone()?;
        let mut spec = ModelSpec::new(backbone, input_shape, classes)?;
        if m.mlp_hidden.is_some() || m.mlp_latent.is_some() {
            let hidden = m.mlp_hidden.unwrap_or(256);
            let latent = m.mlp_latent.unwrap_or(128);
            spec = spec.with_mlp_widths(hidden, latent)?;
        }
        if let Some(q) = m.noise_dim {
            spec = spec.with_noise_dim(q);
        }
        if let Some(h) = m.gen_hidden {
            spec = spec.with_gen_hidden(h);
        }
        Ok(spec)
    }

    /// The attack target from `attack.target`, or what `method` shares.
    pub fn attack_config(&self, method: MethodChoice) -> Result<AttackConfig> {
        let a = &self.file.attack;
        let d = AttackConfig::default();
        let target = match a.target.as_deref() {
            None => method.shared(),
            Some("full") => SharingPolicy {
                extractor: true,
                classifier: true,
            },
            Some("extractor") => SharingPolicy {
                extractor: true,
                classifier: false,
            },
            Some("classifier") => SharingPolicy {
                extractor: false,
                classifier: true,
            },
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown attack target `{other}` (expected full, extractor or classifier)"
                )))
            }
        };
        if a.samples == Some(0) {
            return Err(Error::Config("attack.samples must be >= 1".into()));
        }
        let cfg = AttackConfig {
            steps: a.steps.unwrap_or(d.steps),
            lr: a.lr.unwrap_or(d.lr),
            bounds: a.bounds.map_or(d.bounds, |[lo, hi]| (lo, hi)),
            target,
            seed: a.seed,
        };
        // LT shares nothing; the attack itself rejects that target.
        if target.extractor || target.classifier {
            cfg.validate()?;
        }
        Ok(cfg)
    }

    pub fn toy_variants(&self) -> Result<Vec<Option<Diversity>>> {
        match &self.file.toyviz.variants {
            None => Ok(vec![None, Some(Diversity::V2)]),
            Some(v) if v.is_empty() => Err(Error::Config("toyviz.variants is empty".into())),
            Some(v) => v.iter().map(|s| parse_diversity(s)).collect(),
        }
    }

    pub fn toy_config(&self, seed: u64) -> Result<ToyConfig> {
        let t = &self.file.toyviz;
        let d = ToyConfig::default();
        let cfg = ToyConfig {
            teacher_steps: t.teacher_steps.unwrap_or(d.teacher_steps),
            teacher_lr: t.teacher_lr.unwrap_or(d.teacher_lr),
            gen_steps: t.gen_steps.unwrap_or(d.gen_steps),
            gen_lr: t.gen_lr.unwrap_or(d.gen_lr),
            batch: t.batch.unwrap_or(d.batch),
            per_class: t.per_class.unwrap_or(d.per_class),
            seed,
            ..d
        };
        if cfg.batch < 2 || cfg.per_class == 0 || cfg.teacher_steps == 0 || cfg.gen_steps == 0 {
            return Err(Error::Config("toyviz needs batch >= 2 and nonzero steps and per_class".into()));
        }
        Ok(cfg)
    }

    /// Toy model: the experiment backbone with the toyviz widths. The MLP
    /// defaults (noise 1, latent 4) keep the diversity exponent of order one.
    pub fn toy_spec(&self, input_shape: [usize; 3], classes: usize) -> Result<ModelSpec> {
        let t = &self.file.toyviz;
        let mut spec = ModelSpec::new(self.backbone()?, input_shape, classes)?;
        if spec.backbone == Backbone::Mlp {
            spec = spec.with_mlp_widths(t.hidden.unwrap_or(32), t.latent_dim.unwrap_or(4))?;
        }
        Ok(spec.with_noise_dim(t.noise_dim.unwrap_or(1)).with_gen_hidden(t.gen_hidden.unwrap_or(32)))
    }
}
