//! Compliance checks of computed trajectories against the qualitative
//! properties of the equation, plus the algebraic monotonicity lemma.
//!
//! Every check reduces to a signed worst margin (bound minus observed), so
//! a report passes exactly when `worst_margin >= -tolerance`.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::GridDomain;
use crate::pde::{self, ProblemSpec, SolutionState, Trajectory};
use crate::stepper::{self, LockstepRun, MonitorRow, MonitorSpec, StepControl, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub node: Option<usize>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub check: String,
    pub pass: bool,
    pub worst_margin: f64,
    pub location: Option<Location>,
    pub tolerance: f64,
}

impl ComplianceReport {
    pub fn new(check: &str, worst_margin: f64, location: Option<Location>, tolerance: f64) -> Self {
        Self {
            check: check.to_string(),
            pass: worst_margin >= -tolerance,
            worst_margin,
            location,
            tolerance,
        }
    }
}

/// All reports of one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictDocument {
    pub all_pass: bool,
    pub reports: Vec<ComplianceReport>,
}

impl VerdictDocument {
    pub fn new(reports: Vec<ComplianceReport>) -> Self {
        Self {
            all_pass: reports.iter().all(|r| r.pass),
            reports,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }
}

/// Tracks the smallest margin and where it occurred.
#[derive(Debug, Clone, Copy)]
struct Worst {
    margin: f64,
    at: Option<Location>,
}

impl Worst {
    fn new() -> Self {
        Self {
            margin: f64::INFINITY,
            at: None,
        }
    }

    fn offer(&mut self, margin: f64, node: Option<usize>, t: f64) {
        if margin < self.margin {
            self.margin = margin;
            self.at = Some(Location { node, t });
        }
    }

    fn report(self, check: &str, tol: f64) -> ComplianceReport {
        let margin = if self.margin.is_finite() { self.margin } else { 0.0 };
        ComplianceReport::new(check, margin, self.at, tol)
    }
}

fn min_max(u: &[f64]) -> (f64, f64) {
    u.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

/// `min u₀ - tol <= u <= max u₀ + tol` at every recorded state.
pub fn max_principle_check(traj: &Trajectory, tol: f64) -> Result<ComplianceReport> {
    let first = traj
        .states
        .first()
        .ok_or_else(|| LabError::Precondition("empty trajectory".into()))?;
    let (lo, hi) = min_max(first);
    let mut worst = Worst::new();
    for (t, u) in traj.times.iter().zip(&traj.states) {
        for (k, v) in u.iter().enumerate() {
            worst.offer((v - lo).min(hi - v), Some(k), *t);
        }
    }
    Ok(worst.report("max_principle", tol))
}

/// Same bound, from the per-step extrema of a run's monitors.
pub fn max_principle_check_monitors(rows: &[MonitorRow], u0: &[f64], tol: f64) -> ComplianceReport {
    let (lo, hi) = min_max(u0);
    let mut worst = Worst::new();
    for r in rows {
        worst.offer((r.min_u - lo).min(hi - r.max_u), None, r.t);
    }
    worst.report("max_principle", tol)
}

fn check_ordered(lower: &[f64], upper: &[f64], what: &str) -> Result<()> {
    if let Some(k) = lower.iter().zip(upper).position(|(a, b)| a > b) {
        return Err(LabError::Precondition(format!(
            "{what} are not ordered at node {k}: {} > {}",
            lower[k], upper[k]
        )));
    }
    Ok(())
}

/// `u <= v + tol` at every common recorded state.
///
/// Both trajectories must start ordered (`u₀ <= v₀`, which includes the
/// boundary data) and share their time levels.
pub fn comparison_check(u: &Trajectory, v: &Trajectory, tol: f64) -> Result<ComplianceReport> {
    if !u.grid.same_shape(&v.grid) {
        return Err(LabError::GridMismatch("comparison needs identical grids".into()));
    }
    if u.is_empty() || v.is_empty() {
        return Err(LabError::Precondition("empty trajectory".into()));
    }
    check_ordered(&u.states[0], &v.states[0], "initial data")?;
    if u.times != v.times {
        return Err(LabError::Precondition("trajectories are not recorded at the same times".into()));
    }
    let mut worst = Worst::new();
    for ((t, a), b) in u.times.iter().zip(&u.states).zip(&v.states) {
        for (k, (x, y)) in a.iter().zip(b).enumerate() {
            worst.offer(y - x, Some(k), *t);
        }
    }
    Ok(worst.report("comparison", tol))
}

/// Ordering after every common step of a lockstep run.
pub fn comparison_check_lockstep(run: &LockstepRun, tol: f64) -> Result<ComplianceReport> {
    let (ref tu, _) = run.lower;
    let (ref tv, _) = run.upper;
    check_ordered(&tu.states[0], &tv.states[0], "initial data")?;
    let mut worst = Worst::new();
    for &(t, gap) in &run.gap {
        worst.offer(gap, None, t);
    }
    Ok(worst.report("comparison", tol))
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a|^e a`, with `0` at `a = 0`.
fn scaled(a: &[f64], e: f64) -> Vec<f64> {
    let n = norm(a);
    if n == 0.0 {
        return vec![0.0; a.len()];
    }
    let f = n.powf(e);
    a.iter().map(|x| f * x).collect()
}

/// `⟨|a|^(σ-2)a - |b|^(σ-2)b, a-b⟩ - (4/σ²) | |a|^((σ-2)/2)a - |b|^((σ-2)/2)b |²`.
pub fn monotonicity_lemma_check(a: &[f64], b: &[f64], sigma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LabError::InvalidArgument("vectors differ in dimension".into()));
    }
    if !(sigma >= 2.0 && sigma.is_finite()) {
        return Err(LabError::InvalidArgument(format!("requires sigma >= 2, got {sigma}")));
    }
    let fa = scaled(a, sigma - 2.0);
    let fb = scaled(b, sigma - 2.0);
    let lhs: f64 = fa.iter().zip(&fb).zip(a.iter().zip(b)).map(|((x, y), (s, t))| (x - y) * (s - t)).sum();
    let ha = scaled(a, 0.5 * (sigma - 2.0));
    let hb = scaled(b, 0.5 * (sigma - 2.0));
    let rhs: f64 = ha.iter().zip(&hb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(lhs - 4.0 / (sigma * sigma) * rhs)
}

/// Allowed rounding slack `1e-12 (|a|^σ + |b|^σ + 1)`.
pub fn monotonicity_tolerance(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    1e-12 * (norm(a).powf(sigma) + norm(b).powf(sigma) + 1.0)
}

/// The lemma for `σ ∈ (1, 2)` in substituted form: with `m = σ/(σ-1)` the
/// `σ >= 2` inequality (constant `4/m²`) applied to `|a|^(σ-2)a` and
/// `|b|^(σ-2)b`.
pub fn transformed_lemma_margin(a: &[f64], b: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 1.0 && sigma < 2.0) {
        return Err(LabError::InvalidArgument(format!("requires sigma in (1, 2), got {sigma}")));
    }
    let m = sigma / (sigma - 1.0);
    monotonicity_lemma_check(&scaled(a, sigma - 2.0), &scaled(b, sigma - 2.0), m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicitySuite {
    pub samples: usize,
    pub violations: usize,
    /// Smallest `margin / tolerance` seen.
    pub worst_scaled_margin: f64,
    /// Largest `|margin|` at `σ = 2`, relative to `|a-b|² + 1`.
    pub sigma2_deviation: f64,
    pub report: ComplianceReport,
}

/// Random suite: `σ ∈ [2, 10]`, dimensions 1-4, components in `[-10, 10]`.
/// One in ten samples uses `σ = 2`, where both sides coincide.
pub fn monotonicity_suite(samples: usize, seed: u64) -> MonotonicitySuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut dev2 = 0.0_f64;
    let mut min_margin = Worst::new();
    for i in 0..samples {
        let dim = rng.gen_range(1..=4);
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..=10.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..=10.0)).collect();
        let sigma = if i % 10 == 0 { 2.0 } else { rng.gen_range(2.0..=10.0) };
        let m = monotonicity_lemma_check(&a, &b, sigma).expect("valid sample");
        let tol = monotonicity_tolerance(&a, &b, sigma);
        if m < -tol {
            violations += 1;
        }
        worst = worst.min(m / tol);
        min_margin.offer(m / tol, None, sigma);
        if sigma == 2.0 {
            let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            dev2 = dev2.max(m.abs() / (d2 + 1.0));
        }
    }
    // margins are reported in units of the per-sample tolerance
    let mut report = min_margin.report("monotonicity_lemma", 1.0);
    report.pass = violations == 0;
    MonotonicitySuite {
        samples,
        violations,
        worst_scaled_margin: worst,
        sigma2_deviation: dev2,
        report,
    }
}

/// `u_t · t (p-2) / ‖u₀‖∞`, the normalized one-sided bound.
fn regularizing_ratio(ut: f64, t: f64, p: f64, u0_sup: f64) -> f64 {
    let num = ut * t * (p - 2.0);
    if u0_sup > 0.0 {
        num / u0_sup
    } else if num <= 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `u_t <= ‖u₀‖∞ / ((p-2) t)` from the per-step monitors, from step
/// `warmup_steps` on.
///
/// `u_t` is the backward difference over `[t - dt, t]`, compared with the
/// bound at the interval midpoint. The margin is `1 - max ratio`.
pub fn regularizing_effect_check(
    rows: &[MonitorRow],
    p: f64,
    u0_sup: f64,
    warmup_steps: usize,
    tol: f64,
) -> ComplianceReport {
    let mut worst = Worst::new();
    for r in rows.iter().skip(warmup_steps.max(1)) {
        let tm = r.t - 0.5 * r.dt;
        worst.offer(1.0 - regularizing_ratio(r.max_ut, tm, p, u0_sup), None, r.t);
    }
    worst.report("regularizing_effect", tol)
}

/// Largest normalized `u_t` ratio after warm-up, for refinement studies.
pub fn regularizing_excess(rows: &[MonitorRow], p: f64, u0_sup: f64, warmup_steps: usize) -> f64 {
    rows.iter()
        .skip(warmup_steps.max(1))
        .map(|r| regularizing_ratio(r.max_ut, r.t - 0.5 * r.dt, p, u0_sup) - 1.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The semi-concavity consequence `Δ_p u <= ‖u₀‖∞/((p-2)t)` on recorded
/// states with `t >= t_warmup`, using the discrete diffusion operator.
pub fn semiconcavity_check(traj: &Trajectory, spec: &ProblemSpec, t_warmup: f64, tol: f64) -> ComplianceReport {
    let grid = &traj.grid;
    let u0_sup = spec.u0_sup();
    let mut worst = Worst::new();
    for (t, u) in traj.times.iter().zip(&traj.states) {
        if *t < t_warmup || *t <= 0.0 {
            continue;
        }
        let d = pde::regularized_diffusion(grid, u, spec.p(), spec.eps());
        for k in grid.interior_indices() {
            worst.offer(1.0 - regularizing_ratio(d[k], *t, spec.p(), u0_sup), Some(k), *t);
        }
    }
    worst.report("semiconcavity", tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    /// Inner distance: `C₂` is the gradient sup over `δ >= d0`, and shells
    /// are taken below `d0`.
    pub d0: f64,
    /// Shells closer than `skip_cells · h` are treated as unresolved.
    pub skip_cells: usize,
    pub slope_tol: f64,
    pub min_shells: usize,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            d0: 1.0 / 3.0,
            skip_cells: 2,
            slope_tol: 0.15,
            min_shells: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub delta: f64,
    pub max_grad: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit {
    pub t: f64,
    /// Profile exponent `1/(q-p+1)`.
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    /// Least-squares slope of `log max_grad` against `log δ` over the shells.
    pub slope: f64,
    pub shells: Vec<Shell>,
    /// Slope check: margin `slope - (-γ - slope_tol)`.
    pub report: ComplianceReport,
}

impl ProfileFit {
    /// Shell table with columns `delta_shell,max_grad,bound_value`.
    pub fn write_shell_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["delta_shell", "max_grad", "bound_value"])?;
        for s in &self.shells {
            w.write_record([format!("{:e}", s.delta), format!("{:e}", s.max_grad), format!("{:e}", s.bound)])?;
        }
        w.flush()
    }
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Fits `|∇u| <= C₁ δ^(-γ) + C₂` with `γ = 1/(q-p+1)` on one state.
///
/// `C₂` is the gradient sup over `δ >= d0`; `C₁` is the smallest constant
/// covering every resolved node (`skip_cells · h <= δ`). Nodes are grouped
/// into shells of equal `δ`; the shell maxima give the log-log slope.
pub fn gradient_profile_check(state: &SolutionState, p: f64, q: f64, opts: &ProfileOptions) -> Result<ProfileFit> {
    pde::check_exponents(p, q)?;
    let grid = state.grid();
    let gamma = 1.0 / (q - p + 1.0);
    let grad = state.grad_norm();
    let dist = crate::grid::boundary_distance(grid);
    let resolved = opts.skip_cells as f64 * grid.h_min() * (1.0 - 1e-12);
    let c2 = grad
        .iter()
        .zip(&dist)
        .filter(|(_, d)| **d >= opts.d0)
        .fold(0.0_f64, |m, (g, _)| m.max(*g));
    let mut c1 = 0.0_f64;
    let mut shells: Vec<(f64, f64)> = Vec::new();
    for (g, d) in grad.iter().zip(&dist) {
        if *d < resolved || *d <= 0.0 {
            continue;
        }
        c1 = c1.max((g - c2) * d.powf(gamma));
        if *d < opts.d0 {
            match shells.iter_mut().find(|(sd, _)| sd.to_bits() == d.to_bits()) {
                Some(s) => s.1 = s.1.max(*g),
                None => shells.push((*d, *g)),
            }
        }
    }
    shells.sort_by(|a, b| a.0.total_cmp(&b.0));
    if shells.len() < opts.min_shells {
        return Err(LabError::InsufficientCollar(format!(
            "{} resolved shells below d0 = {}, need {}",
            shells.len(),
            opts.d0,
            opts.min_shells
        )));
    }
    let xs: Vec<f64> = shells.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = shells.iter().map(|s| s.1.max(f64::MIN_POSITIVE).ln()).collect();
    let slope = ls_slope(&xs, &ys);
    let shells = shells
        .into_iter()
        .map(|(delta, max_grad)| Shell {
            delta,
            max_grad,
            bound: c1 * delta.powf(-gamma) + c2,
        })
        .collect();
    let report = ComplianceReport::new(
        "gradient_profile_slope",
        slope + gamma + opts.slope_tol,
        Some(Location { node: None, t: state.t() }),
        0.0,
    );
    Ok(ProfileFit {
        t: state.t(),
        gamma,
        c1,
        c2,
        slope,
        shells,
        report,
    })
}

/// Relative spread `(max - min) / max|·|` of a set of values.
pub fn relative_spread(values: &[f64]) -> f64 {
    let (lo, hi) = min_max(values);
    let scale = lo.abs().max(hi.abs());
    if scale == 0.0 {
        0.0
    } else {
        (hi - lo) / scale
    }
}

/// Stability of the fitted `C₁` and of the shell slope across fits (times
/// or grids); margins are `rel_tol - spread`.
pub fn profile_stability(fits: &[ProfileFit], rel_tol: f64) -> (ComplianceReport, ComplianceReport) {
    let c1: Vec<f64> = fits.iter().map(|f| f.c1).collect();
    let slopes: Vec<f64> = fits.iter().map(|f| f.slope).collect();
    (
        ComplianceReport::new("profile_c1_stability", rel_tol - relative_spread(&c1), None, 0.0),
        ComplianceReport::new("profile_slope_stability", rel_tol - relative_spread(&slopes), None, 0.0),
    )
}

fn check_subregion(grid: &GridDomain, d0: f64) -> Result<()> {
    if !(d0 > 0.0) {
        return Err(LabError::Precondition(format!(
            "subregion must stay away from the boundary, got d0 = {d0}"
        )));
    }
    if !(0..grid.len()).any(|k| grid.distance_at(k) >= d0) {
        return Err(LabError::Precondition(format!("no node lies at distance >= {d0}")));
    }
    Ok(())
}

/// `sup_{δ >= d0} |∇u| <= C₁ d0^(-γ) + C₂` over every recorded state.
pub fn interior_boundedness_check(traj: &Trajectory, d0: f64, fit: &ProfileFit) -> Result<ComplianceReport> {
    check_subregion(&traj.grid, d0)?;
    let bound = fit.c1 * d0.powf(-fit.gamma) + fit.c2;
    let mut worst = Worst::new();
    for (t, u) in traj.times.iter().zip(&traj.states) {
        let st = SolutionState::new(traj.grid.clone(), u.clone(), *t);
        for (k, g) in st.grad_norm().iter().enumerate() {
            if traj.grid.distance_at(k) >= d0 {
                worst.offer(bound - g, Some(k), *t);
            }
        }
    }
    Ok(worst.report("interior_boundedness", 0.0))
}

/// Same bound from the per-step `grad_inner` monitor (run with
/// `inner_distance = d0`).
pub fn interior_boundedness_from_monitors(
    grid: &GridDomain,
    rows: &[MonitorRow],
    d0: f64,
    fit: &ProfileFit,
) -> Result<ComplianceReport> {
    check_subregion(grid, d0)?;
    let bound = fit.c1 * d0.powf(-fit.gamma) + fit.c2;
    let mut worst = Worst::new();
    for r in rows {
        let g = r
            .grad_inner
            .ok_or_else(|| LabError::Precondition("run was not monitored with an inner distance".into()))?;
        worst.offer(bound - g, None, r.t);
    }
    Ok(worst.report("interior_boundedness", 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub lambda: f64,
    pub gamma: f64,
    pub mu_scaled: f64,
    pub eps_scaled: f64,
    /// `(t, ‖v(t) - λ^γ u(λt)‖∞)` at each matched time.
    pub discrepancies: Vec<(f64, f64)>,
    pub h: f64,
    pub dt_max: f64,
    pub report: ComplianceReport,
}

fn state_at(traj: &Trajectory, t: f64) -> Result<&[f64]> {
    traj.times
        .iter()
        .position(|&s| s == t)
        .map(|i| traj.states[i].as_slice())
        .ok_or_else(|| LabError::TimeAlignment(format!("no recorded state at t = {t}")))
}

/// Runs `spec` and its rescaling `u_λ(x,t) = λ^γ u(x, λt)`, `γ = 1/(p-2)`,
/// and compares them at `times`.
///
/// The rescaled problem has data `λ^γ u₀`, `λ^γ g`, source coefficient
/// `μ λ^(-(q-p+1)γ)` and regularization `λ^(2γ) ε` (the regularization has
/// to scale with `|∇u|²` for the transform to map solutions to solutions).
/// Both runs land exactly on the matched times. Passes when every
/// discrepancy is at most `c (h² + Δt)`.
pub fn scaling_transform_check(
    spec: &ProblemSpec,
    lambda: f64,
    control: &StepControl,
    times: &[f64],
    c: f64,
) -> Result<ScalingReport> {
    if !(lambda >= 1.0 && lambda.is_finite()) {
        return Err(LabError::InvalidArgument(format!("requires lambda >= 1, got {lambda}")));
    }
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) {
        return Err(LabError::InvalidArgument("matched times must be > 0".into()));
    }
    let t_max = times.iter().copied().fold(0.0, f64::max);
    if lambda * t_max > control.t_end {
        return Err(LabError::TimeAlignment(format!(
            "lambda * t = {} exceeds the base horizon {}",
            lambda * t_max,
            control.t_end
        )));
    }
    let p = spec.p();
    let q = spec.q();
    let gamma = 1.0 / (p - 2.0);
    let amp = lambda.powf(gamma);
    let mu_v = spec.mu() * lambda.powf(-(q - p + 1.0) * gamma);
    let eps_v = spec.eps() * lambda.powf(2.0 * gamma);
    let scale = |f: &[f64]| f.iter().map(|x| amp * x).collect::<Vec<f64>>();
    let spec_v = ProblemSpec::new(spec.grid().clone(), p, q, scale(spec.u0()), scale(spec.g()))?
        .with_mu(mu_v)?
        .with_eps(eps_v)?;

    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let base_times: Vec<f64> = sorted.iter().map(|t| lambda * t).collect();
    let base_control = StepControl {
        t_end: lambda * t_max,
        output_times: base_times.clone(),
        land_on_outputs: true,
        ..control.clone()
    };
    let v_control = StepControl {
        t_end: t_max,
        output_times: sorted.clone(),
        land_on_outputs: true,
        ..control.clone()
    };
    let (tu, ru) = stepper::run(spec, &base_control)?;
    let (tv, rv) = stepper::run(&spec_v, &v_control)?;
    for r in [&ru, &rv] {
        if r.verdict != Verdict::Completed {
            return Err(LabError::TimeAlignment(format!(
                "a run ended with {:?} at t = {} before the matched times",
                r.verdict, r.t_final
            )));
        }
    }
    let mut discrepancies = Vec::with_capacity(sorted.len());
    for (t, tb) in sorted.iter().zip(&base_times) {
        let u = state_at(&tu, *tb)?;
        let v = state_at(&tv, *t)?;
        let err = u.iter().zip(v).map(|(a, b)| (b - amp * a).abs()).fold(0.0, f64::max);
        discrepancies.push((*t, err));
    }
    let h = spec.grid().h_min();
    let dt_max = ru.max_dt().max(rv.max_dt());
    let allowed = c * (h * h + dt_max);
    let worst = discrepancies.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let at = discrepancies
        .iter()
        .find(|(_, e)| *e == worst)
        .map(|(t, _)| Location { node: None, t: *t });
    Ok(ScalingReport {
        lambda,
        gamma,
        mu_scaled: mu_v,
        eps_scaled: eps_v,
        discrepancies,
        h,
        dt_max,
        report: ComplianceReport::new("scaling_transform", allowed - worst, at, 0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `∫∫ u_t²`.
    pub ut_l2: f64,
    /// `M' = (2/p) ∫ (|∇u₀|²+ε)^(p/2) + 2 ∫∫ (|∇u|²+ε)^q`.
    pub bound: f64,
    pub ratio: f64,
    pub report: ComplianceReport,
}

/// `∫∫ u_t² <= M' (1 + tol)` from a run monitored with `energy = true`.
pub fn energy_estimate(rows: &[MonitorRow], spec: &ProblemSpec, tol: f64) -> Result<EnergyReport> {
    let last = rows
        .last()
        .ok_or_else(|| LabError::Precondition("empty monitor series".into()))?;
    let acc = last
        .energy_acc
        .ok_or_else(|| LabError::Precondition("run was not monitored with energy = true".into()))?;
    let st = spec.initial_state();
    let w = spec.grid().trapezoid_weights();
    let (p, eps) = (spec.p(), spec.eps());
    let e0: f64 = st
        .grad_norm()
        .iter()
        .zip(&w)
        .map(|(g, wk)| wk * pde::pow_nonneg(g * g + eps, 0.5 * p))
        .sum();
    let bound = 2.0 / p * e0 + 2.0 * acc;
    let ut_l2 = last.ut_l2_acc;
    let ratio = if ut_l2 == 0.0 { 0.0 } else { ut_l2 / bound };
    Ok(EnergyReport {
        ut_l2,
        bound,
        ratio,
        report: ComplianceReport::new("energy_estimate", 1.0 - ratio, Some(Location { node: None, t: last.t }), tol),
    })
}

/// Monitors needed by the trajectory checks.
pub fn full_monitors(d0: Option<f64>) -> MonitorSpec {
    MonitorSpec {
        y_weights: None,
        inner_distance: d0,
        energy: true,
    }
}

/// Runs a spec and applies the maximum principle, regularizing effect and
/// energy checks. Tolerances: `2h` for the maximum principle, `0.1` for the
/// normalized `u_t` bound and the energy ratio.
pub fn compliance_suite(spec: &ProblemSpec, control: &StepControl) -> Result<(VerdictDocument, stepper::RunReport)> {
    let (traj, report) = stepper::run_with(spec, control, full_monitors(None))?;
    let h = spec.grid().h_min();
    let mut reports = vec![
        max_principle_check_monitors(&report.series, spec.u0(), 2.0 * h),
        max_principle_check(&traj, 2.0 * h)?,
        regularizing_effect_check(&report.series, spec.p(), spec.u0_sup(), 5, 0.1),
        energy_estimate(&report.series, spec, 0.1)?.report,
    ];
    let warm = report.series.get(5).map(|r| r.t).unwrap_or(f64::INFINITY);
    reports.push(semiconcavity_check(&traj, spec, warm, 0.1));
    Ok((VerdictDocument::new(reports), report))
}

/// Helper for stationary and constant data.
pub fn constant_spec(grid: Arc<GridDomain>, p: f64, q: f64, value: f64) -> Result<ProblemSpec> {
    let f = vec![value; grid.len()];
    ProblemSpec::new(grid, p, q, f.clone(), f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::Profile;
    use proptest::prelude::*;

    fn sine_spec(n: usize, p: f64, q: f64, amp: f64) -> ProblemSpec {
        let grid = Arc::new(GridDomain::unit_interval(n).unwrap());
        let u0 = Profile::Sine { amplitude: amp }.sample(&grid);
        ProblemSpec::new(grid.clone(), p, q, u0, vec![0.0; n]).unwrap()
    }

    #[test]
    fn lemma_examples() {
        assert_eq!(monotonicity_lemma_check(&[1.0, 2.0], &[1.0, 2.0], 3.0).unwrap(), 0.0);
        let m = monotonicity_lemma_check(&[1.0, 0.0], &[0.0, 0.0], 4.0).unwrap();
        assert!((m - 0.75).abs() < 1e-15);
        let m = monotonicity_lemma_check(&[1.5, -2.0, 0.3], &[-0.7, 4.0, 1.0], 2.0).unwrap();
        assert!(m.abs() < 1e-13);
        assert!(monotonicity_lemma_check(&[1.0], &[0.0], 1.5).is_err());
        assert!(monotonicity_lemma_check(&[1.0], &[0.0, 1.0], 3.0).is_err());
    }

    #[test]
    fn displayed_constant_fails_below_two() {
        // b = 0, sigma in (1, 2): RHS = (4/σ²)|a|^σ exceeds LHS = |a|^σ
        let sigma: f64 = 1.5;
        let lhs = 1.0;
        let rhs = 4.0 / (sigma * sigma);
        assert!(rhs > lhs);
        assert!(transformed_lemma_margin(&[1.0, 0.0], &[0.0, 0.0], sigma).unwrap() >= 0.0);
    }

    #[test]
    fn small_suite_has_no_violations() {
        let s = monotonicity_suite(2000, 7);
        assert_eq!(s.violations, 0);
        assert!(s.sigma2_deviation < 1e-14);
        assert!(s.report.pass);
        assert_eq!(s, monotonicity_suite(2000, 7));
    }

    #[test]
    fn stationary_run_is_compliant() {
        let grid = Arc::new(GridDomain::unit_interval(21).unwrap());
        let spec = constant_spec(grid, 3.0, 4.0, 0.7).unwrap();
        let control = StepControl { t_end: 0.05, ..Default::default() };
        let (doc, _) = compliance_suite(&spec, &control).unwrap();
        assert!(doc.all_pass, "{}", doc.to_json());
        assert_eq!(doc.reports[0].worst_margin, 0.0);
    }

    #[test]
    fn spike_breaks_max_principle() {
        let spec = sine_spec(21, 3.0, 4.0, 1.0);
        let control = StepControl { t_end: 0.01, snapshot_every: 10, ..Default::default() };
        let (mut traj, _) = stepper::run(&spec, &control).unwrap();
        let r = max_principle_check(&traj, 2.0 / 20.0).unwrap();
        assert!(r.pass);
        let last = traj.states.len() - 1;
        traj.states[last][10] = 1.5;
        let r = max_principle_check(&traj, 2.0 / 20.0).unwrap();
        assert!(!r.pass);
        assert_eq!(r.location.unwrap().node, Some(10));
    }

    #[test]
    fn translated_data_stays_ordered() {
        let a = sine_spec(41, 3.0, 2.5, 1.0);
        let grid = a.grid().clone();
        let shifted: Vec<f64> = a.u0().iter().map(|x| x + 1.0).collect();
        let b = ProblemSpec::new(grid, 3.0, 2.5, shifted, vec![1.0; 41]).unwrap();
        let control = StepControl { t_end: 0.02, ..Default::default() };
        let run = stepper::run_lockstep(&a, &b, &control).unwrap();
        let r = comparison_check_lockstep(&run, 0.0).unwrap();
        assert!(r.pass);
        // translation invariance: the gap is exactly 1 up to rounding
        for (_, g) in &run.gap {
            assert!((g - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn crossing_data_rejected() {
        let a = sine_spec(21, 3.0, 2.5, 1.0);
        let b = sine_spec(21, 3.0, 2.5, 0.5);
        let control = StepControl { t_end: 0.001, ..Default::default() };
        let run = stepper::run_lockstep(&a, &b, &control).unwrap();
        assert!(matches!(comparison_check_lockstep(&run, 0.0), Err(LabError::Precondition(_))));
        let (ta, _) = stepper::run(&a, &control).unwrap();
        let (tb, _) = stepper::run(&b, &control).unwrap();
        assert!(matches!(comparison_check(&ta, &tb, 0.0), Err(LabError::Precondition(_))));
    }

    #[test]
    fn regularizing_bound_value() {
        // p = 3, ‖u₀‖∞ = 1, t = 0.5: the bound is 2
        assert_eq!(regularizing_ratio(2.0, 0.5, 3.0, 1.0), 1.0);
        let grid = Arc::new(GridDomain::unit_interval(11).unwrap());
        let spec = constant_spec(grid, 3.0, 2.5, 0.0).unwrap();
        let (_, rep) = stepper::run(&spec, &StepControl { t_end: 0.01, ..Default::default() }).unwrap();
        assert!(regularizing_effect_check(&rep.series, 3.0, 0.0, 5, 0.1).pass);
    }

    #[test]
    fn profile_exponent_and_synthetic_layer() {
        let grid = Arc::new(GridDomain::unit_interval(801).unwrap());
        let gamma = 0.5;
        let e = 1.0 - gamma + 0.01;
        let u = grid.sample(|x, _| {
            let d = x.min(1.0 - x);
            d.powf(e)
        });
        let st = SolutionState::new(grid.clone(), u, 0.0);
        let fit = gradient_profile_check(&st, 3.0, 4.0, &ProfileOptions::default()).unwrap();
        assert_eq!(fit.gamma, 0.5);
        assert!(fit.report.pass);
        assert!((fit.slope - (e - 1.0)).abs() < 0.05, "{}", fit.slope);
        let mut buf = Vec::new();
        fit.write_shell_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("delta_shell,max_grad,bound_value"));
    }

    #[test]
    fn smooth_state_has_small_c1() {
        let grid = Arc::new(GridDomain::unit_interval(201).unwrap());
        let u = Profile::Sine { amplitude: 0.1 }.sample(&grid);
        let st = SolutionState::new(grid, u, 0.0);
        let fit = gradient_profile_check(&st, 3.0, 4.0, &ProfileOptions::default()).unwrap();
        assert!(fit.report.pass);
        assert!(fit.c1 < 0.2);
    }

    #[test]
    fn coarse_collar_is_insufficient() {
        let grid = Arc::new(GridDomain::unit_interval(9).unwrap());
        let st = SolutionState::new(grid.clone(), vec![0.0; 9], 0.0);
        assert!(matches!(
            gradient_profile_check(&st, 3.0, 4.0, &ProfileOptions::default()),
            Err(LabError::InsufficientCollar(_))
        ));
    }

    #[test]
    fn interior_region_must_avoid_boundary() {
        let spec = sine_spec(41, 3.0, 4.0, 0.1);
        let (traj, _) = stepper::run(&spec, &StepControl { t_end: 0.01, ..Default::default() }).unwrap();
        let st = SolutionState::new(traj.grid.clone(), traj.states[0].clone(), 0.0);
        let fit = gradient_profile_check(&st, 3.0, 4.0, &ProfileOptions::default()).unwrap();
        assert!(matches!(interior_boundedness_check(&traj, 0.0, &fit), Err(LabError::Precondition(_))));
        assert!(interior_boundedness_check(&traj, 1.0 / 3.0, &fit).unwrap().pass);
    }

    #[test]
    fn scaling_identity_and_constants() {
        let spec = sine_spec(41, 3.0, 4.0, 0.5).with_eps(1e-3).unwrap();
        let control = StepControl { t_end: 0.02, ..Default::default() };
        let rep = scaling_transform_check(&spec, 1.0, &control, &[0.005, 0.01], 5.0).unwrap();
        assert_eq!(rep.gamma, 1.0);
        assert!(rep.discrepancies.iter().all(|(_, e)| *e == 0.0));
        let spec4 = sine_spec(41, 4.0, 4.0, 0.5);
        let rep = scaling_transform_check(&spec4, 2.0, &StepControl { t_end: 0.02, ..Default::default() }, &[0.005], 5.0)
            .unwrap();
        assert!((rep.mu_scaled - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(rep.report.pass);
        assert!(matches!(
            scaling_transform_check(&spec4, 2.0, &control, &[0.015], 5.0),
            Err(LabError::TimeAlignment(_))
        ));
    }

    #[test]
    fn energy_on_stationary_run() {
        let grid = Arc::new(GridDomain::unit_interval(21).unwrap());
        let spec = constant_spec(grid, 3.0, 2.5, 0.3).unwrap();
        let (_, rep) = stepper::run_with(&spec, &StepControl { t_end: 0.01, ..Default::default() }, full_monitors(None))
            .unwrap();
        let e = energy_estimate(&rep.series, &spec, 0.0).unwrap();
        assert_eq!(e.ut_l2, 0.0);
        assert!(e.report.pass);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn lemma_holds_for_sigma_at_least_two(
            a in proptest::collection::vec(-10.0f64..10.0, 1..5),
            b0 in proptest::collection::vec(-10.0f64..10.0, 4),
            sigma in 2.0f64..10.0,
        ) {
            let b = &b0[..a.len()];
            let m = monotonicity_lemma_check(&a, b, sigma).unwrap();
            prop_assert!(m >= -monotonicity_tolerance(&a, b, sigma));
        }

        #[test]
        fn transformed_lemma_holds_below_two(
            a in proptest::collection::vec(-10.0f64..10.0, 1..5),
            b0 in proptest::collection::vec(-10.0f64..10.0, 4),
            sigma in 1.05f64..1.95,
        ) {
            let b = &b0[..a.len()];
            let m = transformed_lemma_margin(&a, b, sigma).unwrap();
            let m_exp = sigma / (sigma - 1.0);
            let ta = scaled(&a, sigma - 2.0);
            let tb = scaled(b, sigma - 2.0);
            prop_assert!(m >= -monotonicity_tolerance(&ta, &tb, m_exp));
        }
    }
}
