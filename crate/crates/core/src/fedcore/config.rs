use crate::error::{Error, Result};
use crate::losses::{Diversity, HyperParams, ServerTerms};

/// Server-side aggregation manner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggMode {
    /// Weighted average; clients use latent-level transfer only (`l1 = l3 = 0`).
    AveStar,
    /// Weighted average.
    Ave,
    /// Weighted average, then distillation on `L_kl1` alone.
    Kd,
    /// Weighted average, then crossed distillation on `L_kl1 + L_kl2 + L_kl3`.
    Kdc,
}

impl AggMode {
    pub const ALL: [AggMode; 4] = [AggMode::Kdc, AggMode::Kd, AggMode::Ave, AggMode::AveStar];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ave_star" => Ok(AggMode::AveStar),
            "ave" => Ok(AggMode::Ave),
            "kd" => Ok(AggMode::Kd),
            "kdc" => Ok(AggMode::Kdc),
            other => Err(Error::Config(format!(
                "unknown aggregation `{other}` (expected ave_star, ave, kd or kdc)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AggMode::AveStar => "ave_star",
            AggMode::Ave => "ave",
            AggMode::Kd => "kd",
            AggMode::Kdc => "kdc",
        }
    }

    /// Distillation terms run after averaging, if any.
    pub fn server_terms(self) -> Option<ServerTerms> {
        match self {
            AggMode::AveStar | AggMode::Ave => None,
            AggMode::Kd => Some(ServerTerms {
                kl1: true,
                kl2: false,
                kl3: false,
            }),
            AggMode::Kdc => Some(ServerTerms {
                kl1: true,
                kl2: true,
                kl3: true,
            }),
        }
    }
}

/// Protocol hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub rounds: usize,
    pub clients: usize,
    /// Local steps per round, used by both client stages.
    pub client_steps: usize,
    pub server_steps: usize,
    pub batch: usize,
    pub lr_model: f64,
    pub lr_gen: f64,
    pub lr_server: f64,
    pub weight_decay: f64,
    pub hyper: HyperParams,
    /// `None` drops the diversity term from the generator objective.
    pub diversity: Option<Diversity>,
    pub agg: AggMode,
    /// Stop gradients through `D_i(G(z, y))` in the forward KL term.
    pub detach_teacher: bool,
    pub omega: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rounds: 30,
            clients: 10,
            client_steps: 20,
            server_steps: 50,
            batch: 64,
            lr_model: 0.01,
            lr_gen: 3e-4,
            lr_server: 3e-4,
            weight_decay: 1e-4,
            hyper: HyperParams::default(),
            diversity: Some(Diversity::V2),
            agg: AggMode::Kdc,
            detach_teacher: false,
            omega: 1.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("rounds", self.rounds),
            ("clients", self.clients),
            ("client_steps", self.client_steps),
            ("server_steps", self.server_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.batch < 2 {
            return Err(Error::Config("batch must be >= 2 (generator batch norm)".into()));
        }
        for (name, v) in [("lr_model", self.lr_model), ("lr_gen", self.lr_gen), ("lr_server", self.lr_server)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::Config("omega must be > 0".into()));
        }
        self.hyper.validate()
    }
}

/// `pre * ((r - 1) / R)^d` for `1 <= r <= R`.
pub fn ramp_lambda(pre: f64, r: usize, rounds: usize, d: f64) -> Result<f64> {
    if r == 0 || r > rounds {
        return Err(Error::InvalidArgument(format!("round {r} outside 1..={rounds}")));
    }
    Ok(pre * ((r - 1) as f64 / rounds as f64).powf(d))
}
