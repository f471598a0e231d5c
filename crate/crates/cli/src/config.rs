//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pkinns::pk::{PkParameters, StateVector};
use pkinns::sr::{DiscoverySettings, GpConfig, Method, StlsqConfig, TargetSource};
use pkinns::trainer::{LossWeights, Mode, TrainConfig, F_NET_HIDDEN, X_NET_HIDDEN};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseLevel {
    Low,
    Medium,
    High,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 3] = [NoiseLevel::Low, NoiseLevel::Medium, NoiseLevel::High];

    pub fn name(self) -> &'static str {
        match self {
            NoiseLevel::Low => "low",
            NoiseLevel::Medium => "medium",
            NoiseLevel::High => "high",
        }
    }

    /// The configured noise strength (standard deviation unless the config
    /// says the value is a variance).
    pub fn value(self) -> f64 {
        match self {
            NoiseLevel::Low => 0.005,
            NoiseLevel::Medium => 0.01,
            NoiseLevel::High => 0.02,
        }
    }

    pub fn index(self) -> u64 {
        match self {
            NoiseLevel::Low => 0,
            NoiseLevel::Medium => 1,
            NoiseLevel::High => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSelection {
    One(NoiseLevel),
    All,
}

impl NoiseSelection {
    pub fn levels(self) -> Vec<NoiseLevel> {
        match self {
            NoiseSelection::One(l) => vec![l],
            NoiseSelection::All => NoiseLevel::ALL.to_vec(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            NoiseSelection::One(l) => l.name(),
            NoiseSelection::All => "all",
        }
    }
}

impl FromStr for NoiseSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "low" => Ok(NoiseSelection::One(NoiseLevel::Low)),
            "medium" => Ok(NoiseSelection::One(NoiseLevel::Medium)),
            "high" => Ok(NoiseSelection::One(NoiseLevel::High)),
            "all" => Ok(NoiseSelection::All),
            other => Err(format!("unknown noise level '{other}' (expected low, medium, high or all)")),
        }
    }
}

/// Whether the noise level value is a standard deviation or a variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    StdDev,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSelection {
    One(Method),
    Both,
}

impl MethodSelection {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodSelection::One(m) => vec![m],
            MethodSelection::Both => vec![Method::Stlsq, Method::Gp],
        }
    }

    fn name(self) -> &'static str {
        match self {
            MethodSelection::One(m) => m.name(),
            MethodSelection::Both => "both",
        }
    }
}

/// Seed offsets for the pipeline stages; each noise level adds a further
/// `100 * level index` so levels never share a stream.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Simulate = 1,
    Train = 2,
    Discover = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: PkParameters,
    pub x_init: [f64; 3],
    pub t_start: f64,
    pub t_end: f64,
    pub n_points: usize,
    pub substeps: usize,
    pub t_split: f64,
    pub noise: NoiseSelection,
    pub noise_kind: NoiseKind,
    pub mode: Mode,
    pub epochs: usize,
    pub lr: f64,
    pub loss_weights: LossWeights,
    pub x_hidden: Vec<usize>,
    pub f_hidden: Vec<usize>,
    pub method: MethodSelection,
    pub target: TargetSource,
    pub degree: u32,
    pub threshold: f64,
    pub max_iter: usize,
    pub ridge: f64,
    pub gp_population: usize,
    pub gp_generations: usize,
    pub gp_parsimony: f64,
    pub gp_max_size: usize,
    pub seed: u64,
    /// Not part of the echo: moving a run does not change its content.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gp = GpConfig::default();
        let stlsq = StlsqConfig::default();
        Self {
            params: PkParameters::default(),
            x_init: StateVector::unit_dose().to_array(),
            t_start: 0.0,
            t_end: 10.0,
            n_points: 100,
            substeps: 10,
            t_split: 8.0,
            noise: NoiseSelection::One(NoiseLevel::Low),
            noise_kind: NoiseKind::StdDev,
            mode: Mode::Blackbox,
            epochs: 1000,
            lr: 1e-2,
            loss_weights: LossWeights::default(),
            x_hidden: X_NET_HIDDEN.to_vec(),
            f_hidden: F_NET_HIDDEN.to_vec(),
            method: MethodSelection::Both,
            target: TargetSource::RhsModel,
            degree: 2,
            threshold: stlsq.threshold,
            max_iter: stlsq.max_iter,
            ridge: stlsq.ridge,
            gp_population: gp.population_size,
            gp_generations: gp.generations,
            gp_parsimony: gp.parsimony,
            gp_max_size: gp.max_size,
            seed: 0,
            out: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value '{value}' for '{key}'"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "ka" => self.params.ka = parse(key, v)?,
            "cl" => self.params.cl = parse(key, v)?,
            "q" => self.params.q = parse(key, v)?,
            "v1" => self.params.v1 = parse(key, v)?,
            "v2" => self.params.v2 = parse(key, v)?,
            "x_init" => {
                let xs: Vec<f64> = parse_list(key, v)?;
                self.x_init = xs.try_into().map_err(|_| "x_init needs three values".to_string())?;
            }
            "t_start" => self.t_start = parse(key, v)?,
            "t_end" => self.t_end = parse(key, v)?,
            "n_points" => self.n_points = parse(key, v)?,
            "substeps" => self.substeps = parse(key, v)?,
            "t_split" => self.t_split = parse(key, v)?,
            "noise" => self.noise = v.parse()?,
            "noise_kind" => {
                self.noise_kind = match v {
                    "std" => NoiseKind::StdDev,
                    "variance" => NoiseKind::Variance,
                    _ => return Err(format!("invalid value '{v}' for 'noise_kind' (expected std or variance)")),
                }
            }
            "mode" => self.mode = v.parse().map_err(|e: pkinns::Error| e.to_string())?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "lambda_data" => self.loss_weights.data = parse(key, v)?,
            "lambda_ode" => self.loss_weights.ode = parse(key, v)?,
            "lambda_ic" => self.loss_weights.ic = parse(key, v)?,
            "x_hidden" => self.x_hidden = parse_list(key, v)?,
            "f_hidden" => self.f_hidden = parse_list(key, v)?,
            "method" => {
                self.method = match v {
                    "both" => MethodSelection::Both,
                    m => MethodSelection::One(m.parse().map_err(|e: pkinns::Error| e.to_string())?),
                }
            }
            "target" => self.target = v.parse().map_err(|e: pkinns::Error| e.to_string())?,
            "degree" => self.degree = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "max_iter" => self.max_iter = parse(key, v)?,
            "ridge" => self.ridge = parse(key, v)?,
            "gp_population" => self.gp_population = parse(key, v)?,
            "gp_generations" => self.gp_generations = parse(key, v)?,
            "gp_parsimony" => self.gp_parsimony = parse(key, v)?,
            "gp_max_size" => self.gp_max_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Apply a config file: one `key = value` per line, `#` starts a
    /// comment, blank lines are ignored.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{}:{}: expected `key = value`", source.display(), i + 1)))?;
            self.set(key, value)
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", source.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.loss_weights.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.t_end > self.t_start) || !self.t_start.is_finite() || !self.t_end.is_finite() {
            return bad(format!("time range [{}, {}] is empty", self.t_start, self.t_end));
        }
        if self.n_points < 2 {
            return bad("n_points must be at least 2".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1".into());
        }
        if !(self.t_split > self.t_start && self.t_split <= self.t_end) {
            return bad(format!("t_split {} must lie in ({}, {}]", self.t_split, self.t_start, self.t_end));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.x_hidden.contains(&0) || self.f_hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        self.stlsq().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.gp(0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(1..=2).contains(&self.degree) {
            return bad(format!("degree must be 1 or 2, got {}", self.degree));
        }
        Ok(())
    }

    /// Noise standard deviation for `level`.
    pub fn sigma(&self, level: NoiseLevel) -> f64 {
        match self.noise_kind {
            NoiseKind::StdDev => level.value(),
            NoiseKind::Variance => level.value().sqrt(),
        }
    }

    pub fn stage_seed(&self, stage: Stage, level: NoiseLevel) -> u64 {
        self.seed.wrapping_add(stage as u64).wrapping_add(100 * level.index())
    }

    pub fn train_config(&self, level: NoiseLevel) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            seed: self.stage_seed(Stage::Train, level),
            collocation_times: None,
            initial_condition: self.x_init.into(),
            mode: self.mode,
        }
    }

    fn stlsq(&self) -> StlsqConfig {
        StlsqConfig {
            threshold: self.threshold,
            max_iter: self.max_iter,
            ridge: self.ridge,
        }
    }

    fn gp(&self, seed: u64) -> GpConfig {
        GpConfig {
            population_size: self.gp_population,
            generations: self.gp_generations,
            parsimony: self.gp_parsimony,
            max_size: self.gp_max_size,
            seed,
            ..GpConfig::default()
        }
    }

    pub fn discovery_settings(&self, level: NoiseLevel) -> DiscoverySettings {
        DiscoverySettings {
            degree: self.degree,
            stlsq: self.stlsq(),
            gp: self.gp(self.stage_seed(Stage::Discover, level)),
            target: self.target,
        }
    }

    /// Every setting except `out`, in a fixed order, loadable with
    /// `--config`.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("ka", p.ka.to_string());
        kv("cl", p.cl.to_string());
        kv("q", p.q.to_string());
        kv("v1", p.v1.to_string());
        kv("v2", p.v2.to_string());
        kv("x_init", join(&self.x_init));
        kv("t_start", self.t_start.to_string());
        kv("t_end", self.t_end.to_string());
        kv("n_points", self.n_points.to_string());
        kv("substeps", self.substeps.to_string());
        kv("t_split", self.t_split.to_string());
        kv("noise", self.noise.name().to_string());
        kv(
            "noise_kind",
            match self.noise_kind {
                NoiseKind::StdDev => "std",
                NoiseKind::Variance => "variance",
            }
            .to_string(),
        );
        kv("mode", self.mode.name().to_string());
        kv("epochs", self.epochs.to_string());
        kv("lr", self.lr.to_string());
        kv("lambda_data", self.loss_weights.data.to_string());
        kv("lambda_ode", self.loss_weights.ode.to_string());
        kv("lambda_ic", self.loss_weights.ic.to_string());
        kv("x_hidden", join(&self.x_hidden));
        kv("f_hidden", join(&self.f_hidden));
        kv("method", self.method.name().to_string());
        kv("target", self.target.name().to_string());
        kv("degree", self.degree.to_string());
        kv("threshold", self.threshold.to_string());
        kv("max_iter", self.max_iter.to_string());
        kv("ridge", self.ridge.to_string());
        kv("gp_population", self.gp_population.to_string());
        kv("gp_generations", self.gp_generations.to_string());
        kv("gp_parsimony", self.gp_parsimony.to_string());
        kv("gp_max_size", self.gp_max_size.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}
