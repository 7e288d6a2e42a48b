//! Explicit time integration with CFL control and gradient blow-up detection.
//!
//! A run advances forward Euler steps until `t_end`, until `‖∇u‖∞` crosses
//! the detection threshold `G`, or until the step size collapses. Monitors
//! are recorded after every accepted step.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{Extent, GridDomain};
use crate::pde::{self, Coefficients, ProblemSpec, SolutionState, Trajectory};

/// Step-size policy and stopping rules of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    /// Safety factor applied to the explicit stability bound, in `(0, 1]`.
    pub theta: f64,
    pub dt_min: f64,
    /// Detection threshold on `‖∇u‖∞`.
    pub gbu_threshold: f64,
    pub t_end: f64,
    /// Record the state every this many accepted steps (0: only first/last).
    pub snapshot_every: usize,
    /// Extra times at which the first state at or after is recorded.
    #[serde(default)]
    pub output_times: Vec<f64>,
    /// Shorten steps so that `output_times` are hit exactly.
    #[serde(default)]
    pub land_on_outputs: bool,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    50_000_000
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            theta: 0.5,
            dt_min: 1e-14,
            gbu_threshold: 1e3,
            t_end: 1.0,
            snapshot_every: 0,
            output_times: Vec::new(),
            land_on_outputs: false,
            max_steps: default_max_steps(),
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(LabError::InvalidArgument(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        if !(self.dt_min > 0.0) {
            return Err(LabError::InvalidArgument("dt_min must be > 0".into()));
        }
        if !(self.gbu_threshold > 0.0) {
            return Err(LabError::InvalidArgument("gbu_threshold must be > 0".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(LabError::InvalidArgument("t_end must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// Optional monitors beyond the always-on set.
#[derive(Debug, Clone, Default)]
pub struct MonitorSpec {
    /// Quadrature weights `w_k φ₁^α(x_k)`; enables `y(t) = Σ w_k u_k`.
    pub y_weights: Option<Vec<f64>>,
    /// Enables `sup |∇u|` over nodes with `δ(x) >= d0`.
    pub inner_distance: Option<f64>,
    /// Enables the accumulated `∫∫ (|∇u|² + ε)^q` (left rectangle rule).
    pub energy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Completed,
    GbuDetected,
    StalledStep,
}

/// Per-step monitor values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub t: f64,
    pub dt: f64,
    pub max_u: f64,
    pub min_u: f64,
    pub grad_inf: f64,
    pub y: Option<f64>,
    /// Accumulated `∫∫ u_t²` (backward differences, rectangle rule in time).
    pub ut_l2_acc: f64,
    /// Largest backward-difference `u_t` over interior nodes (0 at t = 0).
    pub max_ut: f64,
    /// `sup |∇u|` over the inner region when requested.
    pub grad_inner: Option<f64>,
    /// Largest excess of the new field over the convex-combination bound
    /// `max(stencil neighbours) + dt * source`.
    pub cc_excess: f64,
    #[serde(default)]
    pub energy_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub coefficients: Coefficients,
    pub extents: Vec<Extent>,
    pub counts: Vec<usize>,
    pub control: StepControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub verdict: Verdict,
    pub t_detect: Option<f64>,
    pub steps: usize,
    pub t_final: f64,
    pub series: Vec<MonitorRow>,
    pub config: RunEcho,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes the monitor series as CSV
    /// (`t,max_u,min_u,grad_inf,y,ut_l2_acc`).
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "max_u", "min_u", "grad_inf", "y", "ut_l2_acc"])?;
        for r in &self.series {
            let y = r.y.map(|v| format!("{v:e}")).unwrap_or_default();
            w.write_record([
                format!("{:e}", r.t),
                format!("{:e}", r.max_u),
                format!("{:e}", r.min_u),
                format!("{:e}", r.grad_inf),
                y,
                format!("{:e}", r.ut_l2_acc),
            ])?;
        }
        w.flush()
    }

    pub fn max_dt(&self) -> f64 {
        self.series.iter().skip(1).map(|r| r.dt).fold(0.0, f64::max)
    }
}

/// Largest `|∇u|` seen by the scheme: nodal gradients and face gradients.
pub fn scheme_gradient_sup(state: &SolutionState) -> f64 {
    let grid = state.grid();
    let u = state.u();
    let mut w = state.grad_sup();
    let hx = grid.hx();
    let nx = grid.nx();
    for j in 0..grid.ny() {
        for i in 0..nx - 1 {
            let k = grid.index(i, j);
            w = w.max(((u[k + 1] - u[k]) / hx).abs());
        }
    }
    if grid.dim() == 2 {
        let hy = grid.hy();
        for j in 0..grid.ny() - 1 {
            for i in 0..nx {
                let k = grid.index(i, j);
                w = w.max(((u[k + nx] - u[k]) / hy).abs());
            }
        }
    }
    w
}

/// `θ h² / (2 d (p-1) (W²+ε)^((p-2)/2) + h q (W²+ε)^((q-1)/2))` with `W`
/// the current gradient sup.
pub fn stable_dt_for(w: f64, h: f64, dim: usize, c: &Coefficients, theta: f64) -> f64 {
    let s = w * w + c.eps;
    let diff = 2.0 * dim as f64 * (c.p - 1.0) * pde::pow_nonneg(s, 0.5 * (c.p - 2.0));
    let src = if c.mu == 0.0 { 0.0 } else { h * c.q * c.mu.max(0.0) * pde::pow_nonneg(s, 0.5 * (c.q - 1.0)) };
    let denom = diff + src;
    if denom == 0.0 {
        f64::INFINITY
    } else {
        theta * h * h / denom
    }
}

pub fn stable_dt(state: &SolutionState, spec: &ProblemSpec, control: &StepControl) -> f64 {
    let grid = state.grid();
    stable_dt_for(
        scheme_gradient_sup(state),
        grid.h_min(),
        grid.dim(),
        &spec.coefficients(),
        control.theta,
    )
}

/// One forward Euler step; boundary nodes are re-pinned to `g`.
pub fn step(state: &SolutionState, spec: &ProblemSpec, dt: f64) -> Result<SolutionState> {
    step_with_source(state, spec, dt).map(|(s, _)| s)
}

/// [`step`], also returning the source field evaluated on the old state.
fn step_with_source(state: &SolutionState, spec: &ProblemSpec, dt: f64) -> Result<(SolutionState, Vec<f64>)> {
    if !(dt > 0.0) {
        return Err(LabError::StepRejected(format!("dt must be > 0, got {dt}")));
    }
    let grid = state.grid();
    let (diff, src) = pde::rhs_parts(spec, state);
    let g = spec.g();
    let u = state.u();
    let mut next = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        next.push(if grid.is_boundary(k) { g[k] } else { u[k] + dt * (diff[k] + src[k]) });
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(LabError::StalledStep { t: state.t(), dt });
    }
    Ok((SolutionState::new(grid.clone(), next, state.t() + dt), src))
}

/// Drives one problem forward; two of these run in lockstep for comparisons.
pub struct Integrator<'a> {
    spec: &'a ProblemSpec,
    control: &'a StepControl,
    monitors: MonitorSpec,
    state: SolutionState,
    weights: Vec<f64>,
    inner_mask: Option<Vec<bool>>,
    neighbours: Vec<Vec<usize>>,
    series: Vec<MonitorRow>,
    trajectory: Trajectory,
    ut_acc: f64,
    energy_acc: f64,
    steps: usize,
    next_output: usize,
    verdict: Option<Verdict>,
    t_detect: Option<f64>,
    started: Instant,
}

impl<'a> Integrator<'a> {
    pub fn new(spec: &'a ProblemSpec, control: &'a StepControl, monitors: MonitorSpec) -> Result<Self> {
        control.validate()?;
        let grid = spec.grid().clone();
        if let Some(w) = &monitors.y_weights {
            if w.len() != grid.len() {
                return Err(LabError::InvalidArgument("y weights do not match the grid".into()));
            }
        }
        let inner_mask = monitors
            .inner_distance
            .map(|d0| (0..grid.len()).map(|k| grid.distance_at(k) >= d0).collect());
        let neighbours = stencil_neighbours(&grid);
        let state = spec.initial_state();
        let mut me = Self {
            spec,
            control,
            monitors,
            weights: grid.trapezoid_weights(),
            inner_mask,
            neighbours,
            series: Vec::new(),
            trajectory: Trajectory::new(grid),
            ut_acc: 0.0,
            energy_acc: 0.0,
            steps: 0,
            next_output: 0,
            verdict: None,
            t_detect: None,
            started: Instant::now(),
            state,
        };
        me.record_row(0.0, 0.0, 0.0);
        me.trajectory.push(0.0, me.state.u().to_vec());
        me.skip_passed_outputs();
        if me.state.grad_sup() > control.gbu_threshold {
            me.verdict = Some(Verdict::GbuDetected);
            me.t_detect = Some(0.0);
        }
        Ok(me)
    }

    pub fn state(&self) -> &SolutionState {
        &self.state
    }

    pub fn finished(&self) -> bool {
        self.verdict.is_some()
    }

    pub fn verdict(&self) -> Option<Verdict> {
        self.verdict
    }

    /// Step proposed by the CFL rule, clipped to `t_end` and landing times.
    pub fn proposed_dt(&self) -> (f64, f64) {
        let raw = stable_dt(&self.state, self.spec, self.control);
        let t = self.state.t();
        let mut dt = raw.min(self.control.t_end - t);
        if self.control.land_on_outputs {
            if let Some(&to) = self.control.output_times.get(self.next_output) {
                if to > t {
                    dt = dt.min(to - t);
                }
            }
        }
        (raw, dt)
    }

    fn skip_passed_outputs(&mut self) {
        let t = self.state.t();
        while let Some(&to) = self.control.output_times.get(self.next_output) {
            if to <= t {
                self.next_output += 1;
            } else {
                break;
            }
        }
    }

    /// Accepts one step of size `dt` (which the caller obtained from
    /// [`Integrator::proposed_dt`] or a lockstep minimum).
    pub fn advance(&mut self, dt: f64) -> Result<()> {
        if self.finished() {
            return Ok(());
        }
        let w_prev = self.state.grad_sup();
        if self.monitors.energy {
            let (q, eps) = (self.spec.q(), self.spec.eps());
            let e: f64 = self
                .state
                .grad_norm()
                .iter()
                .zip(&self.weights)
                .map(|(g, w)| w * pde::pow_nonneg(g * g + eps, q))
                .sum();
            self.energy_acc += dt * e;
        }
        let (next, source) = match step_with_source(&self.state, self.spec, dt) {
            Ok(s) => s,
            Err(LabError::StalledStep { .. }) => {
                self.verdict = Some(Verdict::StalledStep);
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let mut next = next;
        let t_old = self.state.t();
        // steps clipped to a landing time end exactly on it
        if dt == self.control.t_end - t_old {
            next.set_time(self.control.t_end);
        } else if self.control.land_on_outputs {
            if let Some(&to) = self.control.output_times.get(self.next_output) {
                if dt == to - t_old {
                    next.set_time(to);
                }
            }
        }
        let grid = self.state.grid().clone();
        let old = self.state.u();
        let new = next.u();
        let mut max_ut = f64::NEG_INFINITY;
        let mut ut_sq = 0.0;
        let mut cc_excess = f64::NEG_INFINITY;
        for k in 0..grid.len() {
            if grid.is_boundary(k) {
                continue;
            }
            let ut = (new[k] - old[k]) / dt;
            max_ut = max_ut.max(ut);
            ut_sq += self.weights[k] * ut * ut;
            let nb_max = self.neighbours[k].iter().map(|&m| old[m]).fold(old[k], f64::max);
            cc_excess = cc_excess.max(new[k] - (nb_max + dt * source[k]));
        }
        self.ut_acc += dt * ut_sq;
        self.state = next;
        self.steps += 1;
        self.record_row(dt, max_ut, cc_excess);

        let t = self.state.t();
        let mut record = self.control.snapshot_every > 0 && self.steps % self.control.snapshot_every == 0;
        if let Some(&to) = self.control.output_times.get(self.next_output) {
            if t >= to {
                record = true;
            }
        }
        self.skip_passed_outputs();

        let w = self.state.grad_sup();
        if w > self.control.gbu_threshold {
            let frac = if w > w_prev { (self.control.gbu_threshold - w_prev) / (w - w_prev) } else { 1.0 };
            self.t_detect = Some(t - dt + dt * frac.clamp(0.0, 1.0));
            self.verdict = Some(Verdict::GbuDetected);
        } else if t >= self.control.t_end {
            self.verdict = Some(Verdict::Completed);
        } else if self.steps >= self.control.max_steps {
            self.verdict = Some(Verdict::StalledStep);
        }
        if record || self.finished() {
            self.trajectory.push(t, self.state.u().to_vec());
        }
        Ok(())
    }

    /// Classifies a collapsed step: growth of the gradient means blow-up.
    pub fn collapse(&mut self) {
        let n = self.series.len();
        let growing = n >= 2 && self.series[n - 1].grad_inf > self.series[n - 2].grad_inf;
        if growing {
            self.verdict = Some(Verdict::GbuDetected);
            self.t_detect = Some(self.state.t());
        } else {
            self.verdict = Some(Verdict::StalledStep);
        }
        let (t, u) = (self.state.t(), self.state.u().to_vec());
        if self.trajectory.times.last() != Some(&t) {
            self.trajectory.push(t, u);
        }
    }

    fn record_row(&mut self, dt: f64, max_ut: f64, cc_excess: f64) {
        let u = self.state.u();
        let max_u = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_u = u.iter().copied().fold(f64::INFINITY, f64::min);
        let grad = self.state.grad_norm();
        let grad_inf = pde::sup_abs(grad);
        let y = self
            .monitors
            .y_weights
            .as_ref()
            .map(|w| w.iter().zip(u).map(|(a, b)| a * b).sum());
        let grad_inner = self.inner_mask.as_ref().map(|m| {
            grad.iter()
                .zip(m)
                .filter(|(_, &inside)| inside)
                .fold(0.0_f64, |acc, (g, _)| acc.max(*g))
        });
        self.series.push(MonitorRow {
            t: self.state.t(),
            dt,
            max_u,
            min_u,
            grad_inf,
            y,
            ut_l2_acc: self.ut_acc,
            max_ut: if max_ut.is_finite() { max_ut } else { 0.0 },
            grad_inner,
            cc_excess: if cc_excess.is_finite() { cc_excess } else { 0.0 },
            energy_acc: self.monitors.energy.then_some(self.energy_acc),
        });
    }

    pub fn finish(self) -> (Trajectory, RunReport) {
        let grid = self.spec.grid();
        let report = RunReport {
            verdict: self.verdict.unwrap_or(Verdict::StalledStep),
            t_detect: self.t_detect,
            steps: self.steps,
            t_final: self.state.t(),
            series: self.series,
            config: RunEcho {
                coefficients: self.spec.coefficients(),
                extents: grid.extents().to_vec(),
                counts: grid.counts().to_vec(),
                control: self.control.clone(),
            },
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        (self.trajectory, report)
    }
}

fn stencil_neighbours(grid: &GridDomain) -> Vec<Vec<usize>> {
    (0..grid.len())
        .map(|k| {
            if grid.is_boundary(k) {
                return Vec::new();
            }
            let nx = grid.nx();
            let mut v = vec![k - 1, k + 1];
            if grid.dim() == 2 {
                v.push(k - nx);
                v.push(k + nx);
            }
            v
        })
        .collect()
}

/// Integrates `spec` under `control`.
pub fn run(spec: &ProblemSpec, control: &StepControl) -> Result<(Trajectory, RunReport)> {
    run_with(spec, control, MonitorSpec::default())
}

pub fn run_with(spec: &ProblemSpec, control: &StepControl, monitors: MonitorSpec) -> Result<(Trajectory, RunReport)> {
    let mut it = Integrator::new(spec, control, monitors)?;
    while !it.finished() {
        let (raw, dt) = it.proposed_dt();
        if raw < control.dt_min {
            it.collapse();
            break;
        }
        it.advance(dt)?;
    }
    Ok(it.finish())
}

/// Output of [`run_lockstep`].
#[derive(Debug, Clone)]
pub struct LockstepRun {
    pub lower: (Trajectory, RunReport),
    pub upper: (Trajectory, RunReport),
    /// `(t, min_x (v - u))` after every common step.
    pub gap: Vec<(f64, f64)>,
}

/// Advances two problems on the same grid with a shared step sequence
/// (the smaller of the two CFL steps).
pub fn run_lockstep(lower: &ProblemSpec, upper: &ProblemSpec, control: &StepControl) -> Result<LockstepRun> {
    if !lower.grid().same_shape(upper.grid()) {
        return Err(LabError::GridMismatch("lockstep runs need identical grids".into()));
    }
    let mut a = Integrator::new(lower, control, MonitorSpec::default())?;
    let mut b = Integrator::new(upper, control, MonitorSpec::default())?;
    let gap_of = |a: &Integrator, b: &Integrator| {
        a.state()
            .u()
            .iter()
            .zip(b.state().u())
            .map(|(u, v)| v - u)
            .fold(f64::INFINITY, f64::min)
    };
    let mut gap = vec![(0.0, gap_of(&a, &b))];
    while !a.finished() && !b.finished() {
        let (ra, da) = a.proposed_dt();
        let (rb, db) = b.proposed_dt();
        if ra.min(rb) < control.dt_min {
            a.collapse();
            b.collapse();
            break;
        }
        let dt = da.min(db);
        a.advance(dt)?;
        b.advance(dt)?;
        gap.push((a.state().t(), gap_of(&a, &b)));
    }
    Ok(LockstepRun {
        lower: a.finish(),
        upper: b.finish(),
        gap,
    })
}

/// One entry of a refinement/threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbuSample {
    /// Points per axis of the run's grid.
    pub resolution: usize,
    pub threshold: f64,
    pub verdict: Verdict,
    pub t_detect: Option<f64>,
}

impl GbuSample {
    pub fn from_report(report: &RunReport) -> Self {
        Self {
            resolution: report.config.counts[0],
            threshold: report.config.control.gbu_threshold,
            verdict: report.verdict,
            t_detect: report.t_detect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GbuVerdict {
    Gbu {
        t_max_estimate: f64,
        /// Extrapolated blow-up time per resolution, coarse to fine.
        per_resolution: Vec<(usize, f64)>,
        /// Largest relative spread of detection times (thresholds and grids).
        relative_spread: f64,
    },
    NoGbu,
    Inconclusive { reason: String },
}

/// Tolerances of the detection-time Cauchy test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbuTest {
    /// Allowed relative spread of `T_detect` over thresholds and grids.
    pub rel_tol: f64,
    /// Consecutive increments must shrink by at least this ratio.
    pub max_increment_ratio: f64,
}

impl Default for GbuTest {
    fn default() -> Self {
        Self {
            rel_tol: 0.1,
            max_increment_ratio: 0.9,
        }
    }
}

/// Geometric extrapolation of an increasing sequence with shrinking steps.
pub fn extrapolate_limit(times: &[f64]) -> f64 {
    let n = times.len();
    if n < 3 {
        return times[n - 1];
    }
    let d1 = times[n - 2] - times[n - 3];
    let d2 = times[n - 1] - times[n - 2];
    if d1 > 0.0 && d2 > 0.0 && d2 < d1 {
        let r = d2 / d1;
        times[n - 1] + d2 * r / (1.0 - r)
    } else {
        times[n - 1]
    }
}

/// Decides GBU from runs at several thresholds (and optionally grids).
pub fn detect_gbu(samples: &[GbuSample], test: GbuTest) -> Result<GbuVerdict> {
    if samples.len() < 2 {
        return Err(LabError::InvalidArgument("GBU detection needs at least two runs".into()));
    }
    if samples.iter().all(|s| s.verdict == Verdict::Completed) {
        return Ok(GbuVerdict::NoGbu);
    }
    if samples.iter().any(|s| s.verdict != Verdict::GbuDetected) {
        return Ok(GbuVerdict::Inconclusive {
            reason: "runs disagree: some completed or stalled while others detected GBU".into(),
        });
    }
    let mut resolutions: Vec<usize> = samples.iter().map(|s| s.resolution).collect();
    resolutions.sort_unstable();
    resolutions.dedup();

    let mut per_resolution = Vec::new();
    let mut spread: f64 = 0.0;
    let mut all_times = Vec::new();
    for &res in &resolutions {
        let mut group: Vec<&GbuSample> = samples.iter().filter(|s| s.resolution == res).collect();
        group.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
        let times: Vec<f64> = group.iter().map(|s| s.t_detect.unwrap_or(f64::NAN)).collect();
        if times.iter().any(|t| !t.is_finite()) {
            return Ok(GbuVerdict::Inconclusive {
                reason: format!("missing detection time at resolution {res}"),
            });
        }
        let scale = times.iter().fold(0.0_f64, |m, t| m.max(t.abs())).max(f64::MIN_POSITIVE);
        let incs: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if incs.iter().any(|d| *d < -1e-9 * scale) {
            return Ok(GbuVerdict::Inconclusive {
                reason: format!("detection times decrease with threshold at resolution {res}"),
            });
        }
        for w in incs.windows(2) {
            let (d1, d2) = (w[0].max(0.0), w[1].max(0.0));
            if d2 > test.max_increment_ratio * d1 + 1e-12 * scale {
                return Ok(GbuVerdict::Inconclusive {
                    reason: format!(
                        "increments do not shrink at resolution {res} ({d1:e} then {d2:e})"
                    ),
                });
            }
        }
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        spread = spread.max((hi - lo) / hi.abs().max(f64::MIN_POSITIVE));
        all_times.extend_from_slice(&times);
        per_resolution.push((res, extrapolate_limit(&times)));
    }
    let lo = all_times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all_times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    spread = spread.max((hi - lo) / hi.abs().max(f64::MIN_POSITIVE));
    if spread > test.rel_tol {
        return Ok(GbuVerdict::Inconclusive {
            reason: format!("relative spread {spread:.3} of detection times exceeds {}", test.rel_tol),
        });
    }
    let t_max_estimate = per_resolution.last().unwrap().1;
    Ok(GbuVerdict::Gbu {
        t_max_estimate,
        per_resolution,
        relative_spread: spread,
    })
}

/// Result of an ε-continuation study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationReport {
    pub eps: Vec<f64>,
    /// `‖u_{ε_k} - u_{ε_{k+1}}‖∞` of final-time fields.
    pub distances: Vec<f64>,
    pub strictly_decreasing: bool,
    /// Observed algebraic rate of the distances in ε, when defined.
    pub rate: Option<f64>,
    /// Geometric extrapolation of the final field to ε = 0.
    pub extrapolated: Vec<f64>,
    pub t_final: f64,
}

/// Runs the same problem for a strictly decreasing list of ε values
/// (in parallel) and measures how the final fields approach each other.
pub fn epsilon_continuation(spec: &ProblemSpec, eps_list: &[f64], control: &StepControl) -> Result<ContinuationReport> {
    use rayon::prelude::*;
    if eps_list.len() < 3 {
        return Err(LabError::InvalidArgument(format!(
            "continuation needs at least 3 values of eps, got {}",
            eps_list.len()
        )));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|e| *e < 0.0) {
        return Err(LabError::InvalidArgument("eps list must be nonnegative and strictly decreasing".into()));
    }
    let finals: Vec<Result<Vec<f64>>> = eps_list
        .par_iter()
        .map(|&eps| {
            let s = spec.clone().with_eps(eps)?;
            let (traj, report) = run(&s, control)?;
            if report.verdict != Verdict::Completed {
                return Err(LabError::StepRejected(format!(
                    "continuation run with eps = {eps} ended with {:?} at t = {}",
                    report.verdict, report.t_final
                )));
            }
            Ok(traj.last().unwrap().1.to_vec())
        })
        .collect();
    let finals: Vec<Vec<f64>> = finals.into_iter().collect::<Result<_>>()?;
    let distances: Vec<f64> = finals
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let strictly_decreasing = distances.windows(2).all(|w| w[1] < w[0]);
    let n = distances.len();
    let rate = {
        let (d1, d2) = (distances[n - 2], distances[n - 1]);
        let (e0, e1, e2) = (eps_list[n - 2], eps_list[n - 1], eps_list[n]);
        if d1 > 0.0 && d2 > 0.0 && e2 > 0.0 {
            Some((d1 / d2).ln() / (((e0 - e1) / (e1 - e2)).ln()))
        } else {
            None
        }
    };
    let last = &finals[finals.len() - 1];
    let prev = &finals[finals.len() - 2];
    let ratio = if distances[n - 2] > 0.0 { distances[n - 1] / distances[n - 2] } else { 0.0 };
    let factor = if ratio < 1.0 { ratio / (1.0 - ratio) } else { 0.0 };
    let extrapolated = last.iter().zip(prev).map(|(a, b)| a + (a - b) * factor).collect();
    Ok(ContinuationReport {
        eps: eps_list.to_vec(),
        distances,
        strictly_decreasing,
        rate,
        extrapolated,
        t_final: control.t_end,
    })
}

/// Convenience for tests and sweeps: same spec on a fresh grid.
pub fn regrid(spec: &ProblemSpec, grid: Arc<GridDomain>, u0: Vec<f64>, g: Vec<f64>) -> Result<ProblemSpec> {
    ProblemSpec::new(grid, spec.p(), spec.q(), u0, g)?
        .with_eps(spec.eps())?
        .with_mu(spec.mu())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::Profile;

    fn unit(n: usize) -> Arc<GridDomain> {
        Arc::new(GridDomain::unit_interval(n).unwrap())
    }

    #[test]
    fn stable_dt_formula() {
        let c = Coefficients { p: 3.0, q: 3.0, eps: 1.0, mu: 1.0 };
        let dt = stable_dt_for(0.0, 0.1, 1, &c, 1.0);
        assert!((dt - 0.01 / 4.3).abs() < 1e-15);
        assert!((dt - 2.3256e-3).abs() < 1e-7);
    }

    #[test]
    fn stable_dt_scaling_and_monotonicity() {
        let c = Coefficients { p: 3.0, q: 4.0, eps: 1e-3, mu: 0.0 };
        let a = stable_dt_for(2.0, 0.1, 1, &c, 0.5);
        let b = stable_dt_for(2.0, 0.2, 1, &c, 0.5);
        assert!((b / a - 4.0).abs() < 1e-12);
        let c = Coefficients { mu: 1.0, ..c };
        let mut prev = f64::INFINITY;
        for w in [0.0, 1.0, 10.0, 100.0, 1e4] {
            let dt = stable_dt_for(w, 0.01, 2, &c, 0.5);
            assert!(dt > 0.0 && dt < prev);
            prev = dt;
        }
    }

    #[test]
    fn constant_state_is_stationary() {
        let g = unit(11);
        let c = vec![2.0; 11];
        let spec = ProblemSpec::new(g, 3.0, 4.0, c.clone(), c.clone()).unwrap().with_eps(0.1).unwrap();
        let st = spec.initial_state();
        let next = step(&st, &spec, 0.3).unwrap();
        assert_eq!(next.u(), c.as_slice());
        assert!(step(&st, &spec, 0.0).is_err());
        assert!(step(&st, &spec, -1.0).is_err());
    }

    #[test]
    fn linear_data_without_source_is_stationary() {
        let g = unit(17);
        let lin = g.sample(|x, _| x);
        let spec = ProblemSpec::new(g, 3.0, 4.0, lin.clone(), lin.clone()).unwrap().with_mu(0.0).unwrap();
        let next = step(&spec.initial_state(), &spec, 1e-3).unwrap();
        assert_eq!(next.u(), lin.as_slice());
    }

    #[test]
    fn stationary_run_completes_with_constant_monitors() {
        let g = unit(21);
        let c = vec![1.5; 21];
        let spec = ProblemSpec::new(g, 3.0, 4.0, c.clone(), c).unwrap().with_eps(1e-2).unwrap();
        let control = StepControl { t_end: 0.01, ..Default::default() };
        let (traj, rep) = run(&spec, &control).unwrap();
        assert_eq!(rep.verdict, Verdict::Completed);
        assert!(rep.series.iter().all(|r| r.max_u == 1.5 && r.min_u == 1.5 && r.grad_inf == 0.0));
        assert_eq!(traj.last().unwrap().1, vec![1.5; 21].as_slice());
        assert!(rep.series.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn explicit_step_respects_convex_bound() {
        let g = unit(41);
        let u0 = Profile::Sine { amplitude: 1.0 }.sample(&g);
        let spec = ProblemSpec::new(g, 3.0, 4.0, u0, vec![0.0; 41]).unwrap();
        let control = StepControl { t_end: 0.02, ..Default::default() };
        let (_, rep) = run(&spec, &control).unwrap();
        assert!(rep.series.iter().all(|r| r.cc_excess <= 1e-13));
    }

    #[test]
    fn runs_are_deterministic() {
        let g = unit(31);
        let u0 = Profile::Sine { amplitude: 2.0 }.sample(&g);
        let spec = ProblemSpec::new(g, 3.0, 3.5, u0, vec![0.0; 31]).unwrap().with_eps(1e-4).unwrap();
        let control = StepControl { t_end: 0.01, ..Default::default() };
        let (_, a) = run(&spec, &control).unwrap();
        let (_, b) = run(&spec, &control).unwrap();
        assert_eq!(a.series, b.series);
    }

    #[test]
    fn output_times_are_hit_exactly() {
        let g = unit(21);
        let u0 = Profile::Sine { amplitude: 1.0 }.sample(&g);
        let spec = ProblemSpec::new(g, 3.0, 2.5, u0, vec![0.0; 21]).unwrap();
        let control = StepControl {
            t_end: 0.05,
            output_times: vec![0.01, 0.02, 0.035],
            land_on_outputs: true,
            ..Default::default()
        };
        let (traj, _) = run(&spec, &control).unwrap();
        for t in [0.01, 0.02, 0.035, 0.05] {
            assert!(traj.times.contains(&t), "{t} missing from {:?}", traj.times);
        }
    }

    #[test]
    fn detect_gbu_synthetic() {
        let mk = |g: f64, t: Option<f64>, v: Verdict| GbuSample { resolution: 201, threshold: g, verdict: v, t_detect: t };
        let done = vec![mk(1.0, None, Verdict::Completed), mk(2.0, None, Verdict::Completed)];
        assert_eq!(detect_gbu(&done, GbuTest::default()).unwrap(), GbuVerdict::NoGbu);

        let gbu = vec![
            mk(1.0, Some(0.50), Verdict::GbuDetected),
            mk(2.0, Some(0.52), Verdict::GbuDetected),
            mk(4.0, Some(0.525), Verdict::GbuDetected),
        ];
        match detect_gbu(&gbu, GbuTest::default()).unwrap() {
            GbuVerdict::Gbu { t_max_estimate, .. } => {
                // geometric tail: 0.525 + 0.005 * 0.25 / 0.75
                assert!((t_max_estimate - 0.526_666_666_666_666_7).abs() < 1e-12);
                assert!((t_max_estimate - 0.53).abs() < 0.01);
            }
            other => panic!("expected GBU, got {other:?}"),
        }

        let diverging = vec![
            mk(1.0, Some(0.5), Verdict::GbuDetected),
            mk(2.0, Some(0.6), Verdict::GbuDetected),
            mk(4.0, Some(0.7), Verdict::GbuDetected),
        ];
        assert!(matches!(detect_gbu(&diverging, GbuTest::default()).unwrap(), GbuVerdict::Inconclusive { .. }));

        let mixed = vec![mk(1.0, Some(0.5), Verdict::GbuDetected), mk(2.0, None, Verdict::Completed)];
        assert!(matches!(detect_gbu(&mixed, GbuTest::default()).unwrap(), GbuVerdict::Inconclusive { .. }));
        assert!(detect_gbu(&mixed[..1], GbuTest::default()).is_err());
    }

    #[test]
    fn continuation_rejects_short_lists() {
        let g = unit(11);
        let z = vec![0.0; 11];
        let spec = ProblemSpec::new(g, 3.0, 4.0, z.clone(), z).unwrap();
        let control = StepControl { t_end: 0.01, ..Default::default() };
        assert!(epsilon_continuation(&spec, &[1e-2], &control).is_err());
        assert!(epsilon_continuation(&spec, &[1e-2, 1e-3, 1e-3], &control).is_err());
    }

    #[test]
    fn continuation_on_linear_data_is_eps_independent() {
        let g = unit(17);
        let lin = g.sample(|x, _| 0.5 + x);
        let spec = ProblemSpec::new(g, 3.0, 4.0, lin.clone(), lin.clone()).unwrap().with_mu(0.0).unwrap();
        let control = StepControl { t_end: 0.01, ..Default::default() };
        let rep = epsilon_continuation(&spec, &[1e-2, 1e-3, 1e-4], &control).unwrap();
        assert!(rep.distances.iter().all(|d| *d == 0.0));
        assert_eq!(rep.extrapolated, lin);
    }
}
