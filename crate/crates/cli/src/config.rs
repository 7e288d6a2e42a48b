//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers (TOML syntax, strings quoted).
//!
//! Parsing is fail-closed. Unknown keys, sections that do not belong to the
//! experiment kind and unused profile parameters are all rejected, and the
//! exponent hypotheses are checked before anything runs.

use std::sync::Arc;

use gbulab_core::pde::check_exponents;
use gbulab_core::{Extent, GridDomain, ProblemSpec, Profile, StepControl};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("missing required key: {0}")]
    Missing(String),
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    EpsilonContinuation,
    GbuDetect,
    BarrierCertify,
    CriterionBisect,
    ComplianceSuite,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::EpsilonContinuation => "epsilon_continuation",
            Self::GbuDetect => "gbu_detect",
            Self::BarrierCertify => "barrier_certify",
            Self::CriterionBisect => "criterion_bisect",
            Self::ComplianceSuite => "compliance_suite",
        }
    }
}

fn default_hi() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    /// Points per axis, boundary nodes included.
    pub n: usize,
    #[serde(default)]
    pub x_lo: f64,
    #[serde(default = "default_hi")]
    pub x_hi: f64,
    #[serde(default)]
    pub y_lo: f64,
    #[serde(default = "default_hi")]
    pub y_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Zero,
    Constant,
    Sine,
    Linear,
    SineOnConstant,
}

fn default_mu() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    pub u0: ProfileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0_offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0_slope: Option<f64>,
    /// Constant Dirichlet value; the trace of `u0` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub theta: f64,
    pub dt_min: f64,
    pub gbu_threshold: f64,
    pub t_end: f64,
    pub snapshot_every: usize,
    pub output_times: Vec<f64>,
    pub land_on_outputs: bool,
    pub max_steps: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        let c = StepControl::default();
        Self {
            theta: c.theta,
            dt_min: c.dt_min,
            gbu_threshold: c.gbu_threshold,
            t_end: c.t_end,
            snapshot_every: c.snapshot_every,
            output_times: c.output_times,
            land_on_outputs: c.land_on_outputs,
            max_steps: c.max_steps,
        }
    }
}

impl ControlConfig {
    pub fn step_control(&self) -> StepControl {
        StepControl {
            theta: self.theta,
            dt_min: self.dt_min,
            gbu_threshold: self.gbu_threshold,
            t_end: self.t_end,
            snapshot_every: self.snapshot_every,
            output_times: self.output_times.clone(),
            land_on_outputs: self.land_on_outputs,
            max_steps: self.max_steps,
        }
    }
}

fn default_gbu_rel_tol() -> f64 {
    0.1
}

fn default_increment_ratio() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbuConfig {
    pub thresholds: Vec<f64>,
    /// Points per axis of each grid in the sweep.
    pub resolutions: Vec<usize>,
    #[serde(default = "default_gbu_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_increment_ratio")]
    pub max_increment_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationConfig {
    pub eps: Vec<f64>,
}

fn default_barrier_eps() -> Vec<f64> {
    vec![0.0, 1e-3, 1e-1, 1.0]
}

fn default_points() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    pub rho: f64,
    /// Space dimensions `N` to certify.
    pub dims: Vec<usize>,
    #[serde(default = "default_barrier_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_hi")]
    pub span: f64,
}

fn default_bisect_tol() -> f64 {
    0.005
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionConfig {
    /// Midpoint of the admissible window when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub amplitude_lo: f64,
    pub amplitude_hi: f64,
    #[serde(default = "default_bisect_tol")]
    pub rel_tol: f64,
}

fn default_lemma_samples() -> usize {
    100_000
}

fn default_warmup() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    /// Check a stored trajectory file instead of running the spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    #[serde(default = "default_lemma_samples")]
    pub lemma_samples: usize,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            trajectory: None,
            lemma_samples: default_lemma_samples(),
            warmup_steps: default_warmup(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub grid: GridConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gbu: Option<GbuConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<ContinuationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<CriterionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<ChecksConfig>,
}

/// Parses and fully validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| classify(e.message()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn classify(msg: &str) -> ConfigError {
    match msg.strip_prefix("missing field ") {
        Some(rest) => ConfigError::Missing(rest.trim_matches('`').to_string()),
        None => ConfigError::Syntax(msg.to_string()),
    }
}

impl RunConfig {
    /// Canonical text: every key written, sections in a fixed order.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        if !(g.dim == 1 || g.dim == 2) {
            return Err(ConfigError::Invalid(format!("grid.dim must be 1 or 2, got {}", g.dim)));
        }
        self.problem_exponents()?;
        self.sections_match_kind()?;
        self.build_profile()?;
        self.build_grid(g.n)?;
        self.control
            .step_control()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.problem.eps >= 0.0 && self.problem.mu >= 0.0) {
            return Err(ConfigError::Invalid("problem.eps and problem.mu must be >= 0".into()));
        }
        match self.kind {
            ExperimentKind::GbuDetect => {
                let s = self.gbu.as_ref().unwrap();
                if s.thresholds.len() * s.resolutions.len() < 2 {
                    return Err(ConfigError::Invalid("gbu sweep needs at least two (threshold, grid) runs".into()));
                }
                if s.thresholds.iter().any(|t| !(*t > 0.0)) {
                    return Err(ConfigError::Invalid("gbu.thresholds must be > 0".into()));
                }
                for &n in &s.resolutions {
                    self.build_grid(n)?;
                }
            }
            ExperimentKind::EpsilonContinuation => {
                let s = self.continuation.as_ref().unwrap();
                if s.eps.len() < 2 || s.eps.iter().any(|e| !(*e >= 0.0)) {
                    return Err(ConfigError::Invalid("continuation.eps needs at least two values >= 0".into()));
                }
            }
            ExperimentKind::BarrierCertify => {
                let s = self.barrier.as_ref().unwrap();
                if !(s.rho > 0.0) || s.dims.is_empty() || s.dims.contains(&0) {
                    return Err(ConfigError::Invalid("barrier needs rho > 0 and dimensions >= 1".into()));
                }
            }
            ExperimentKind::CriterionBisect => {
                let (p, q) = (self.problem.p, self.problem.q);
                if !(q > p && p > 2.0) {
                    return Err(ConfigError::Invalid(format!(
                        "criterion_bisect requires q > p > 2 (hypothesis of the blow-up criterion), got p = {p}, q = {q}"
                    )));
                }
                if self.problem.u0 != ProfileKind::Sine {
                    return Err(ConfigError::Invalid("criterion_bisect scales u0 = \"sine\"".into()));
                }
                let s = self.criterion.as_ref().unwrap();
                if !(s.amplitude_lo >= 0.0 && s.amplitude_hi > s.amplitude_lo) {
                    return Err(ConfigError::Invalid("criterion needs 0 <= amplitude_lo < amplitude_hi".into()));
                }
            }
            ExperimentKind::Simulate | ExperimentKind::ComplianceSuite => {}
        }
        Ok(())
    }

    fn problem_exponents(&self) -> Result<(), ConfigError> {
        check_exponents(self.problem.p, self.problem.q).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    fn sections_match_kind(&self) -> Result<(), ConfigError> {
        let present = [
            ("gbu", self.gbu.is_some(), ExperimentKind::GbuDetect),
            ("continuation", self.continuation.is_some(), ExperimentKind::EpsilonContinuation),
            ("barrier", self.barrier.is_some(), ExperimentKind::BarrierCertify),
            ("criterion", self.criterion.is_some(), ExperimentKind::CriterionBisect),
            ("checks", self.checks.is_some(), ExperimentKind::ComplianceSuite),
        ];
        for (name, here, owner) in present {
            if here && owner != self.kind {
                return Err(ConfigError::Invalid(format!(
                    "section [{name}] does not apply to kind = \"{}\"",
                    self.kind.name()
                )));
            }
            // [checks] is optional; every other kind needs its section
            if !here && owner == self.kind && owner != ExperimentKind::ComplianceSuite {
                return Err(ConfigError::Missing(format!("[{name}] section for kind = \"{}\"", self.kind.name())));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self, n: usize) -> Result<Arc<GridDomain>, ConfigError> {
        let g = &self.grid;
        let x = Extent::new(g.x_lo, g.x_hi);
        let grid = if g.dim == 1 {
            GridDomain::new(&[x], &[n])
        } else {
            GridDomain::new(&[x, Extent::new(g.y_lo, g.y_hi)], &[n, n])
        };
        grid.map(Arc::new).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_profile(&self) -> Result<Profile, ConfigError> {
        let pc = &self.problem;
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| ConfigError::Missing(format!("problem.{key}")));
        let (profile, used): (Profile, &[&str]) = match pc.u0 {
            ProfileKind::Zero => (Profile::Zero, &[]),
            ProfileKind::Constant => (Profile::Constant { value: need(pc.u0_value, "u0_value")? }, &["u0_value"]),
            ProfileKind::Sine => (
                Profile::Sine {
                    amplitude: need(pc.u0_amplitude, "u0_amplitude")?,
                },
                &["u0_amplitude"],
            ),
            ProfileKind::Linear => (
                Profile::Linear {
                    offset: need(pc.u0_offset, "u0_offset")?,
                    slope: need(pc.u0_slope, "u0_slope")?,
                },
                &["u0_offset", "u0_slope"],
            ),
            ProfileKind::SineOnConstant => (
                Profile::SineOnConstant {
                    offset: need(pc.u0_offset, "u0_offset")?,
                    amplitude: need(pc.u0_amplitude, "u0_amplitude")?,
                },
                &["u0_offset", "u0_amplitude"],
            ),
        };
        let given = [
            ("u0_amplitude", pc.u0_amplitude),
            ("u0_value", pc.u0_value),
            ("u0_offset", pc.u0_offset),
            ("u0_slope", pc.u0_slope),
        ];
        for (key, v) in given {
            if v.is_some() && !used.contains(&key) {
                return Err(ConfigError::Invalid(format!("problem.{key} is not a parameter of this u0 profile")));
            }
        }
        Ok(profile)
    }

    /// The problem on a grid with `n` points per axis.
    pub fn build_spec(&self, n: usize) -> Result<ProblemSpec, ConfigError> {
        let grid = self.build_grid(n)?;
        let profile = self.build_profile()?;
        self.spec_with_profile(grid, &profile)
    }

    pub fn spec_with_profile(&self, grid: Arc<GridDomain>, profile: &Profile) -> Result<ProblemSpec, ConfigError> {
        let u0 = profile.sample(&grid);
        let g = match self.problem.g {
            Some(v) => vec![v; grid.len()],
            None => u0.clone(),
        };
        let invalid = |e: gbulab_core::LabError| ConfigError::Invalid(e.to_string());
        ProblemSpec::new(grid, self.problem.p, self.problem.q, u0, g)
            .and_then(|s| s.with_eps(self.problem.eps))
            .and_then(|s| s.with_mu(self.problem.mu))
            .map_err(invalid)
    }
}
