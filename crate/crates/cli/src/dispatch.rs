//! Verb dispatch: runs one experiment and writes its artifacts.
//!
//! Every verb writes the canonical config and a `summary.json`; the other
//! files depend on the verb. Output bytes are a function of the canonical
//! config and the seed, apart from `wall_time_s` fields.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gbulab_core::analysis::{self, ComplianceReport, ProfileOptions, VerdictDocument};
use gbulab_core::barriers::{self, DataNorms, InitialBound};
use gbulab_core::fieldio;
use gbulab_core::spectral;
use gbulab_core::stepper::{self, GbuSample, GbuTest, GbuVerdict, MonitorSpec, RunReport};
use gbulab_core::{GridDomain, LabError, Profile, SolutionState, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentKind, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Simulate,
    ContinueEps,
    DetectGbu,
    CertifyBarrier,
    BisectCriterion,
    Check,
    Eig,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Simulate => "simulate",
            Verb::ContinueEps => "continue-eps",
            Verb::DetectGbu => "detect-gbu",
            Verb::CertifyBarrier => "certify-barrier",
            Verb::BisectCriterion => "bisect-criterion",
            Verb::Check => "check",
            Verb::Eig => "eig",
        }
    }

    /// Experiment kind the config must declare; `eig` accepts any.
    pub fn kind(self) -> Option<ExperimentKind> {
        match self {
            Verb::Simulate => Some(ExperimentKind::Simulate),
            Verb::ContinueEps => Some(ExperimentKind::EpsilonContinuation),
            Verb::DetectGbu => Some(ExperimentKind::GbuDetect),
            Verb::CertifyBarrier => Some(ExperimentKind::BarrierCertify),
            Verb::BisectCriterion => Some(ExperimentKind::CriterionBisect),
            Verb::Check => Some(ExperimentKind::ComplianceSuite),
            Verb::Eig => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            CliError::Check(_) => "check_failed",
            CliError::Config(_) => "config_error",
            CliError::Runtime(_) => "runtime_failure",
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Inconclusive(_) | LabError::NoAdmissibleParams(_) => CliError::Check(e.to_string()),
            LabError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub out: PathBuf,
    pub jobs: usize,
    /// Overrides the config's seed when set.
    pub seed: Option<u64>,
}

/// What a verb decided, besides the files it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub verb: String,
    pub kind: String,
    pub status: String,
    pub exit_code: i32,
    pub message: String,
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Stored trajectory: grid plus recorded `(t, u)` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub grid: GridDomain,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl TrajectoryFile {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            grid: (*t.grid).clone(),
            times: t.times.clone(),
            states: t.states.clone(),
        }
    }

    /// Rebuilds the trajectory, re-validating the grid and field sizes.
    pub fn into_trajectory(self) -> Result<Trajectory, CliError> {
        let grid = GridDomain::new(self.grid.extents(), self.grid.counts())?;
        if self.times.len() != self.states.len() || self.times.is_empty() {
            return Err(CliError::Runtime("trajectory file: times and states differ in length".into()));
        }
        if self.states.iter().any(|s| s.len() != grid.len()) {
            return Err(CliError::Runtime("trajectory file: a state does not match the grid".into()));
        }
        let mut t = Trajectory::new(Arc::new(grid));
        for (time, u) in self.times.into_iter().zip(self.states) {
            t.push(time, u);
        }
        Ok(t)
    }
}

struct Artifacts {
    root: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        self.written.push(rel.to_string());
        Ok(p)
    }

    fn text(&mut self, rel: &str, body: &str) -> Result<(), CliError> {
        let p = self.path(rel)?;
        fs::write(p, body)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.text(rel, &(body + "\n"))
    }

    fn bytes(&mut self, rel: &str, body: &[u8]) -> Result<(), CliError> {
        let p = self.path(rel)?;
        fs::write(p, body)?;
        Ok(())
    }

    fn report(&mut self, dir: &str, rep: &RunReport) -> Result<(), CliError> {
        let p = self.path(&format!("{dir}run_report.json"))?;
        let mut w = BufWriter::new(fs::File::create(p)?);
        serde_json::to_writer(&mut w, rep).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        let p = self.path(&format!("{dir}monitors.csv"))?;
        rep.write_csv(BufWriter::new(fs::File::create(p)?))?;
        Ok(())
    }
}

impl Summary {
    fn new(verb: Verb, cfg: &RunConfig, result: &Result<String, CliError>, artifacts: Vec<String>) -> Self {
        let (status, exit_code, message) = match result {
            Ok(m) => ("pass".to_string(), 0, m.clone()),
            Err(e) => (e.status().to_string(), e.exit_code(), e.to_string()),
        };
        Self {
            verb: verb.name().into(),
            kind: cfg.kind.name().into(),
            status,
            exit_code,
            message,
            artifacts,
        }
    }
}

/// Runs a verb and reports the outcome; the summary is also written to
/// `summary.json` whenever the output directory could be created.
pub fn dispatch(verb: Verb, cfg: &RunConfig, opts: &Options) -> Summary {
    if let Some(kind) = verb.kind() {
        if kind != cfg.kind {
            let e = CliError::Config(format!(
                "verb {} needs kind = \"{}\", config declares \"{}\"",
                verb.name(),
                kind.name(),
                cfg.kind.name()
            ));
            return Summary::new(verb, cfg, &Err(e), Vec::new());
        }
    }
    let mut art = match Artifacts::new(&opts.out) {
        Ok(a) => a,
        Err(e) => return Summary::new(verb, cfg, &Err(e), Vec::new()),
    };
    let result = art.text("config.toml", &cfg.to_canonical()).and_then(|_| match verb {
        Verb::Simulate => simulate(cfg, &mut art),
        Verb::ContinueEps => continue_eps(cfg, &mut art),
        Verb::DetectGbu => detect(cfg, opts, &mut art),
        Verb::CertifyBarrier => certify(cfg, &mut art),
        Verb::BisectCriterion => bisect(cfg, &mut art),
        Verb::Check => check(cfg, opts, &mut art),
        Verb::Eig => eig(cfg, &mut art),
    });
    let mut artifacts = art.written.clone();
    artifacts.push("summary.json".into());
    let summary = Summary::new(verb, cfg, &result, artifacts);
    if let Err(e) = art.json("summary.json", &summary) {
        return Summary::new(verb, cfg, &Err(e), art.written);
    }
    summary
}

fn simulate(cfg: &RunConfig, art: &mut Artifacts) -> Result<String, CliError> {
    let spec = cfg.build_spec(cfg.grid.n)?;
    let control = cfg.control.step_control();
    let monitors = MonitorSpec {
        energy: true,
        ..Default::default()
    };
    let (traj, rep) = stepper::run_with(&spec, &control, monitors)?;
    art.report("", &rep)?;
    art.json("trajectory.json", &TrajectoryFile::from_trajectory(&traj))?;
    for (k, (t, u)) in traj.times.iter().zip(&traj.states).enumerate() {
        art.bytes(&format!("snapshots/state_{k:05}.gbuf"), &fieldio::encode_field(&traj.grid, u, *t))?;
    }
    Ok(format!("{:?} at t = {} after {} steps", rep.verdict, rep.t_final, rep.steps))
}

fn continue_eps(cfg: &RunConfig, art: &mut Artifacts) -> Result<String, CliError> {
    let spec = cfg.build_spec(cfg.grid.n)?;
    let eps = &cfg.continuation.as_ref().expect("validated").eps;
    let rep = stepper::epsilon_continuation(&spec, eps, &cfg.control.step_control())?;
    art.json("continuation.json", &rep)?;
    if rep.strictly_decreasing {
        Ok(format!("distances {:?} strictly decrease", rep.distances))
    } else {
        Err(CliError::Check(format!("distances {:?} do not strictly decrease", rep.distances)))
    }
}

fn detect(cfg: &RunConfig, opts: &Options, art: &mut Artifacts) -> Result<String, CliError> {
    let sweep = cfg.gbu.as_ref().expect("validated");
    let jobs: Vec<(usize, f64)> = sweep
        .resolutions
        .iter()
        .flat_map(|&n| sweep.thresholds.iter().map(move |&g| (n, g)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<Result<(usize, f64, RunReport, Option<Trajectory>), CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, g)| {
                let spec = cfg.build_spec(n)?;
                let mut control = cfg.control.step_control();
                control.gbu_threshold = g;
                let (traj, rep) = stepper::run(&spec, &control)?;
                Ok((n, g, rep, Some(traj)))
            })
            .collect()
    });
    let mut samples = Vec::new();
    for r in results {
        let (n, g, rep, traj) = r?;
        let dir = format!("runs/n{n}_G{g}/");
        art.report(&dir, &rep)?;
        if let Some((t, u)) = traj.as_ref().and_then(|t| t.last()) {
            let st = SolutionState::new(traj.as_ref().unwrap().grid.clone(), u.to_vec(), t);
            if let Ok(fit) = analysis::gradient_profile_check(&st, cfg.problem.p, cfg.problem.q, &ProfileOptions::default()) {
                let p = art.path(&format!("{dir}shells.csv"))?;
                fit.write_shell_csv(fs::File::create(p)?)?;
            }
        }
        samples.push(GbuSample::from_report(&rep));
    }
    let test = GbuTest {
        rel_tol: sweep.rel_tol,
        max_increment_ratio: sweep.max_increment_ratio,
    };
    let verdict = stepper::detect_gbu(&samples, test)?;
    art.json("gbu_verdict.json", &verdict)?;
    match verdict {
        GbuVerdict::Gbu { t_max_estimate, .. } => Ok(format!("gradient blow-up, T_max estimate {t_max_estimate:e}")),
        GbuVerdict::NoGbu => Ok("no gradient blow-up before t_end".into()),
        GbuVerdict::Inconclusive { reason } => Err(CliError::Check(format!("inconclusive: {reason}"))),
    }
}

fn boundary_norms(cfg: &RunConfig, grid: &GridDomain, profile: &Profile) -> Result<DataNorms, CliError> {
    let values: Vec<f64> = match cfg.problem.g {
        Some(v) => vec![v],
        None => {
            let u0 = profile.sample(grid);
            grid.boundary_indices().into_iter().map(|k| u0[k]).collect()
        }
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi != lo {
        return Err(CliError::Config("barrier_certify needs constant boundary data g".into()));
    }
    Ok(DataNorms {
        sup: lo.abs(),
        min: lo,
        grad: 0.0,
        hess: 0.0,
    })
}

fn certify(cfg: &RunConfig, art: &mut Artifacts) -> Result<String, CliError> {
    let b = cfg.barrier.as_ref().expect("validated");
    let grid = cfg.build_grid(cfg.grid.n)?;
    let profile = cfg.build_profile()?;
    let g = boundary_norms(cfg, &grid, &profile)?;
    let init = InitialBound {
        sup: profile.sup(&grid),
        lipschitz: profile.grad_sup(&grid),
    };
    let mut failed = Vec::new();
    for &n in &b.dims {
        let cert = barriers::certify(cfg.problem.p, cfg.problem.q, n, b.rho, &g, &init, &b.eps, b.points, b.span)?;
        art.text(&format!("certificate_N{n}.json"), &(cert.to_json() + "\n"))?;
        if !cert.certified {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        Ok(format!("barriers certified for N = {:?}", b.dims))
    } else {
        Err(CliError::Check(format!("barrier residual negative for N = {failed:?}")))
    }
}

fn bisect(cfg: &RunConfig, art: &mut Artifacts) -> Result<String, CliError> {
    let c = cfg.criterion.as_ref().expect("validated");
    let grid = cfg.build_grid(cfg.grid.n)?;
    let alpha = match c.alpha {
        Some(a) => a,
        None => spectral::alpha_window(cfg.problem.p, cfg.problem.q)?.midpoint(),
    };
    let make = |a: f64| {
        cfg.spec_with_profile(grid.clone(), &Profile::Sine { amplitude: a })
            .map_err(|e| LabError::Config(e.to_string()))
    };
    let rep = spectral::criterion_experiment(make, alpha, (c.amplitude_lo, c.amplitude_hi), c.rel_tol, &cfg.control.step_control())?;
    art.json("criterion.json", &rep)?;
    Ok(format!(
        "threshold amplitude in ({}, {}] after {} runs",
        rep.amplitude_lo, rep.amplitude_hi, rep.runs
    ))
}

fn check(cfg: &RunConfig, opts: &Options, art: &mut Artifacts) -> Result<String, CliError> {
    let checks = cfg.checks.clone().unwrap_or_default();
    let seed = opts.seed.unwrap_or(cfg.seed);
    let mut reports: Vec<ComplianceReport> = Vec::new();
    match &checks.trajectory {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read trajectory {path}: {e}")))?;
            let file: TrajectoryFile =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("trajectory {path}: {e}")))?;
            let traj = file.into_trajectory()?;
            let spec = cfg.spec_with_profile(traj.grid.clone(), &cfg.build_profile()?)?;
            let h = traj.grid.h_min();
            reports.push(analysis::max_principle_check(&traj, 2.0 * h)?);
            let warm = traj.times.get(1).copied().unwrap_or(f64::INFINITY);
            reports.push(analysis::semiconcavity_check(&traj, &spec, warm, 0.1));
        }
        None => {
            let spec = cfg.build_spec(cfg.grid.n)?;
            let (doc, rep) = analysis::compliance_suite(&spec, &cfg.control.step_control())?;
            art.report("", &rep)?;
            reports.extend(doc.reports);
        }
    }
    if checks.lemma_samples > 0 {
        reports.push(analysis::monotonicity_suite(checks.lemma_samples, seed).report);
    }
    let doc = VerdictDocument::new(reports);
    art.text("verdict.json", &(doc.to_json() + "\n"))?;
    let failed: Vec<&str> = doc.reports.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
    if failed.is_empty() {
        Ok(format!("{} checks passed", doc.reports.len()))
    } else {
        Err(CliError::Check(format!("failed checks: {}", failed.join(", "))))
    }
}

fn eig(cfg: &RunConfig, art: &mut Artifacts) -> Result<String, CliError> {
    let grid = cfg.build_grid(cfg.grid.n)?;
    let e = spectral::principal_eigenpair(&grid, 1e-10)?;
    art.text("eigen.json", &(e.sidecar_json() + "\n"))?;
    art.bytes("eigenfunction.gbuf", &e.field_bytes(&grid))?;
    Ok(format!("lambda_1 = {}", e.lambda))
}
