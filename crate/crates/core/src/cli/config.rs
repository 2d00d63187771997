//! TOML run configuration.
//!
//! ```toml
//! seed = 1
//!
//! [problem]
//! preset = "put1d"        # put1d | exchange2d | basket4d
//! sigma = [0.3]           # optional overrides of the preset
//!
//! [network]
//! kernel = "gaussian"
//! neurons = 1200          # fixed mode only; adaptive runs start from adaptive.n0
//!
//! [sampling]
//! interior = 1600
//! terminal = 400
//! boundary = 800
//!
//! [train]
//! mode = "fixed"          # fixed | adaptive
//! max_iters = 5000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::network::ShapeInit;
use crate::optimizer::LbfgsConfig;
use crate::problems::{preset, BoundarySpec, BsProblem, PayoffSpec};
use crate::sampling::SourceKind;
use crate::trainer::AdaptiveConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub adaptive: AdaptiveSection,
    #[serde(default)]
    pub lbfgs: LbfgsSection,
    #[serde(default)]
    pub test: TestConfig,
}

fn default_seed() -> u64 {
    1
}

/// A preset, optionally with parameter overrides, or a full inline problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<PayoffSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundarySpec>,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<BsProblem> {
        let missing = |f: &str| Error::InvalidConfig(format!("problem.{f}: required without a preset"));
        let mut prob = match &self.preset {
            Some(name) => preset(name)?,
            None => BsProblem {
                d: 0,
                sigma: self.sigma.clone().ok_or_else(|| missing("sigma"))?,
                rho: self.rho.clone().ok_or_else(|| missing("rho"))?,
                r: self.r.ok_or_else(|| missing("r"))?,
                t_max: self.t_max.ok_or_else(|| missing("t_max"))?,
                s_max: self.s_max.ok_or_else(|| missing("s_max"))?,
                payoff: self.payoff.clone().ok_or_else(|| missing("payoff"))?,
                boundary: self.boundary.ok_or_else(|| missing("boundary"))?,
            },
        };
        if let Some(v) = &self.sigma {
            prob.sigma = v.clone();
        }
        if let Some(v) = &self.rho {
            prob.rho = v.clone();
        }
        if let Some(v) = self.r {
            prob.r = v;
        }
        if let Some(v) = self.t_max {
            prob.t_max = v;
        }
        if let Some(v) = self.s_max {
            prob.s_max = v;
        }
        if let Some(v) = &self.payoff {
            prob.payoff = v.clone();
        }
        if let Some(v) = self.boundary {
            prob.boundary = v;
        }
        prob.d = prob.sigma.len();
        prob.validate().map_err(|e| Error::InvalidConfig(format!("problem: {e}")))?;
        Ok(prob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub kernel: KernelKind,
    pub neurons: usize,
    /// Every initial and inserted shape component set to this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape_constant: Option<f64>,
    pub centre_source: SourceKind,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            kernel: KernelKind::Gaussian,
            neurons: 1200,
            shape_constant: None,
            centre_source: SourceKind::PseudoRandom,
        }
    }
}

impl NetworkConfig {
    pub fn shape_init(&self) -> ShapeInit {
        match self.shape_constant {
            Some(v) => ShapeInit::Constant(v),
            None => ShapeInit::Default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub interior: usize,
    pub terminal: usize,
    pub boundary: usize,
    pub source: SourceKind,
    /// Leading Halton indices skipped by every Halton cursor.
    pub halton_skip: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            interior: 1600,
            terminal: 400,
            boundary: 800,
            source: SourceKind::PseudoRandom,
            halton_skip: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub max_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Fixed,
            max_iters: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveSection {
    pub n0: usize,
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub w: usize,
    pub epsilon: f64,
    pub source: SourceKind,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        let d = AdaptiveConfig::default();
        AdaptiveSection {
            n0: d.n0,
            k: d.k,
            m: d.m,
            s: d.s,
            w: d.w,
            epsilon: d.epsilon,
            source: d.source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsSection {
    pub lr: f64,
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search_evals: usize,
    pub inner_iters: usize,
}

impl Default for LbfgsSection {
    fn default() -> Self {
        let d = LbfgsConfig::default();
        LbfgsSection {
            lr: d.lr,
            history: d.history,
            c1: d.wolfe_c1,
            c2: d.wolfe_c2,
            max_line_search_evals: d.max_line_search_evals,
            inner_iters: d.inner_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Closed form when the problem has one, Monte Carlo otherwise.
    Auto,
    ClosedForm,
    MonteCarlo,
    None,
}

/// Fixed point sets priced in the published tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TablePoints {
    Exchange,
    Basket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestConfig {
    /// Random interior points at `time`; ignored when `table` is set.
    pub points: usize,
    pub time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<TablePoints>,
    pub reference: ReferenceKind,
    pub mc_paths: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            points: 500,
            time: 0.0,
            table: None,
            reference: ReferenceKind::Auto,
            mc_paths: 1_000_000,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(schema_message(&e, text)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.build()?;
        let s = &self.sampling;
        for (name, v) in [("interior", s.interior), ("terminal", s.terminal), ("boundary", s.boundary)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("sampling.{name}: must be positive")));
            }
        }
        if self.train.mode == TrainMode::Fixed && self.network.neurons == 0 {
            return Err(Error::InvalidConfig("network.neurons: must be positive".into()));
        }
        if let Some(c) = self.network.shape_constant {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidConfig(format!("network.shape_constant: must be positive, got {c}")));
            }
        }
        self.lbfgs().validate()?;
        if self.train.mode == TrainMode::Adaptive {
            self.adaptive().validate()?;
        }
        if !(self.test.time.is_finite()) {
            return Err(Error::InvalidConfig("test.time: must be finite".into()));
        }
        Ok(())
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            history: self.lbfgs.history,
            lr: self.lbfgs.lr,
            wolfe_c1: self.lbfgs.c1,
            wolfe_c2: self.lbfgs.c2,
            max_line_search_evals: self.lbfgs.max_line_search_evals,
            max_iters: self.train.max_iters,
            inner_iters: self.lbfgs.inner_iters,
        }
    }

    pub fn adaptive(&self) -> AdaptiveConfig {
        let a = &self.adaptive;
        AdaptiveConfig {
            n0: a.n0,
            k: a.k,
            m: a.m,
            s: a.s,
            w: a.w,
            epsilon: a.epsilon,
            max_iters: self.train.max_iters,
            source: a.source,
        }
    }

    /// Initial neuron count for the configured mode.
    pub fn initial_neurons(&self) -> usize {
        match self.train.mode {
            TrainMode::Fixed => self.network.neurons,
            TrainMode::Adaptive => self.adaptive.n0,
        }
    }
}

/// One-line schema error that names the offending field.
fn schema_message(e: &toml::de::Error, text: &str) -> String {
    let msg = e.message().trim().replace('\n', " ");
    match e.span().and_then(|span| field_at(text, span.start)) {
        Some(field) => format!("config schema: `{field}`: {msg}"),
        None => format!("config schema: {msg}"),
    }
}

/// Dotted key of the `key = value` line containing byte `offset`.
fn field_at(text: &str, offset: usize) -> Option<String> {
    let offset = offset.min(text.len());
    let line_start = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next()?;
    let key = line.split_once('=')?.0.trim();
    if key.is_empty() || key.starts_with('[') {
        return None;
    }
    let table = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim());
    Some(match table {
        Some(t) => format!("{t}.{key}"),
        None => key.to_string(),
    })
}
