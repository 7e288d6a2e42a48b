//! Principal Dirichlet eigenpair of the discrete Laplacian and the weighted
//! mass `y(t) = ∫ u φ₁^α dx` used by the eigenfunction blow-up criterion.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fieldio;
use crate::grid::GridDomain;
use crate::pde::ProblemSpec;
use crate::stepper::{self, StepControl, Verdict};

const MAX_OUTER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenData {
    pub lambda: f64,
    /// Eigenfunction on the whole grid, `‖φ₁‖∞ = 1`, zero on the boundary.
    pub phi: Vec<f64>,
    /// `‖(-Δ_h - λ₁) φ₁‖∞` over interior nodes.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSidecar {
    pub lambda: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl EigenData {
    pub fn sidecar_json(&self) -> String {
        let s = EigenSidecar {
            lambda: self.lambda,
            residual: self.residual,
            iterations: self.iterations,
        };
        serde_json::to_string_pretty(&s).expect("sidecar serializes")
    }

    /// Eigenfunction in the binary field format (time stamp 0).
    pub fn field_bytes(&self, grid: &GridDomain) -> Vec<u8> {
        fieldio::encode_field(grid, &self.phi, 0.0)
    }
}

/// `-Δ_h u` on interior nodes (boundary entries of `u` are ignored and the
/// output is 0 there).
pub fn neg_laplacian(grid: &GridDomain, u: &[f64], out: &mut [f64]) {
    let nx = grid.nx();
    let ihx2 = 1.0 / (grid.hx() * grid.hx());
    let iy = if grid.dim() == 2 { 1.0 / (grid.hy() * grid.hy()) } else { 0.0 };
    let at = |k: usize| if grid.is_boundary(k) { 0.0 } else { u[k] };
    for k in 0..grid.len() {
        if grid.is_boundary(k) {
            out[k] = 0.0;
            continue;
        }
        let mut v = ihx2 * (2.0 * u[k] - at(k - 1) - at(k + 1));
        if grid.dim() == 2 {
            v += iy * (2.0 * u[k] - at(k - nx) - at(k + nx));
        }
        out[k] = v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the 1D Dirichlet system `-Δ_h x = b` (Thomas algorithm).
fn solve_tridiagonal(grid: &GridDomain, b: &[f64]) -> Vec<f64> {
    let n = grid.nx();
    let m = n - 2;
    let ih2 = 1.0 / (grid.hx() * grid.hx());
    let (diag, off) = (2.0 * ih2, -ih2);
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    for i in 0..m {
        let denom = if i == 0 { diag } else { diag - off * c[i - 1] };
        c[i] = off / denom;
        let prev = if i == 0 { 0.0 } else { d[i - 1] };
        d[i] = (b[i + 1] - off * prev) / denom;
    }
    let mut x = vec![0.0; n];
    for i in (0..m).rev() {
        let next = if i + 1 < m { x[i + 2] } else { 0.0 };
        x[i + 1] = d[i] - c[i] * next;
    }
    x
}

/// Conjugate gradients for `-Δ_h x = b` on interior nodes.
fn solve_cg(grid: &GridDomain, b: &[f64], x0: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut x = x0.to_vec();
    let mut ax = vec![0.0; n];
    neg_laplacian(grid, &x, &mut ax);
    let mut r: Vec<f64> = (0..n).map(|k| if grid.is_boundary(k) { 0.0 } else { b[k] - ax[k] }).collect();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let stop = 1e-28 * dot(b, b);
    let mut ad = vec![0.0; n];
    for _ in 0..10 * n {
        if rr <= stop {
            break;
        }
        neg_laplacian(grid, &d, &mut ad);
        let alpha = rr / dot(&d, &ad);
        for k in 0..n {
            x[k] += alpha * d[k];
            r[k] -= alpha * ad[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            d[k] = r[k] + beta * d[k];
        }
    }
    x
}

/// Inverse power iteration for the smallest eigenvalue of `-Δ_h` with
/// homogeneous Dirichlet conditions.
///
/// Stops once `‖(-Δ_h - λ)φ‖∞ <= tol · λ` with `‖φ‖∞ = 1`, or once the
/// residual reaches the rounding floor `64 u ‖-Δ_h‖∞` of very fine grids.
pub fn principal_eigenpair(grid: &GridDomain, tol: f64) -> Result<EigenData> {
    if !(tol > 0.0) {
        return Err(LabError::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    let n = grid.len();
    let mut v: Vec<f64> = (0..n).map(|k| if grid.is_boundary(k) { 0.0 } else { 1.0 }).collect();
    let mut av = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let op_norm: f64 = grid.spacing().iter().map(|h| 4.0 / (h * h)).sum();
    let floor = 64.0 * f64::EPSILON * op_norm;
    for it in 1..=MAX_OUTER {
        let mut w = if grid.dim() == 1 {
            solve_tridiagonal(grid, &v)
        } else {
            solve_cg(grid, &v, &v)
        };
        let peak = w.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        for x in &mut w {
            *x /= peak;
        }
        v = w;
        neg_laplacian(grid, &v, &mut av);
        let lambda = dot(&v, &av) / dot(&v, &v);
        residual = (0..n)
            .filter(|&k| !grid.is_boundary(k))
            .map(|k| (av[k] - lambda * v[k]).abs())
            .fold(0.0, f64::max);
        if residual <= (tol * lambda).max(floor) {
            for k in grid.boundary_indices() {
                v[k] = 0.0;
            }
            return Ok(EigenData {
                lambda,
                phi: v,
                residual,
                iterations: it,
            });
        }
    }
    Err(LabError::EigenNotConverged {
        iterations: MAX_OUTER,
        residual,
    })
}

/// Discrete principal eigenvalue `Σ_axes (2/h²)(1 - cos(π h / L))`.
pub fn discrete_principal_eigenvalue(grid: &GridDomain) -> f64 {
    grid.extents()
        .iter()
        .zip(grid.spacing())
        .map(|(e, h)| 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * h / e.length()).cos()))
        .sum()
}

/// Admissible exponents `α` for the eigenfunction criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaWindow {
    pub lo: f64,
    pub hi: f64,
    /// `true` when the lower end is the constraint `α >= 1` itself.
    pub lo_closed: bool,
}

impl AlphaWindow {
    pub fn contains(&self, alpha: f64) -> bool {
        let above = if self.lo_closed { alpha >= self.lo } else { alpha > self.lo };
        above && alpha < self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// `((p-1)/(q-p+1), q-1) ∩ [1, ∞)`.
///
/// The window is nonempty exactly when `q > p`.
pub fn alpha_window(p: f64, q: f64) -> Result<AlphaWindow> {
    crate::pde::check_exponents(p, q)?;
    let raw_lo = (p - 1.0) / (q - p + 1.0);
    let hi = q - 1.0;
    if raw_lo >= hi {
        return Err(LabError::EmptyWindow(format!(
            "(p-1)/(q-p+1) = {raw_lo} >= q-1 = {hi}; the criterion's hypothesis fails for p = {p}, q = {q}"
        )));
    }
    let (lo, lo_closed) = if raw_lo < 1.0 { (1.0, true) } else { (raw_lo, false) };
    if lo >= hi {
        return Err(LabError::EmptyWindow(format!("window meets alpha >= 1 only below q-1 = {hi}")));
    }
    Ok(AlphaWindow { lo, hi, lo_closed })
}

/// Quadrature weights `w_k φ₁(x_k)^α` so that `y = Σ weights_k u_k`.
pub fn functional_weights(grid: &GridDomain, phi: &[f64], alpha: f64) -> Vec<f64> {
    grid.trapezoid_weights()
        .iter()
        .zip(phi)
        .map(|(w, f)| w * f.max(0.0).powf(alpha))
        .collect()
}

/// `y = ∫ u φ₁^α dx` by the trapezoid rule.
pub fn blowup_functional(grid: &GridDomain, u: &[f64], phi: &[f64], alpha: f64) -> f64 {
    dot(&functional_weights(grid, phi, alpha), u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeFit {
    pub c1: f64,
    pub c2: f64,
    /// `min_k (y'_k - C₁ y_k^q + C₂)`, nonnegative by construction.
    pub margin: f64,
    pub samples: usize,
    /// `false` when the best fit has `C₁ = 0`.
    pub compliant: bool,
}

fn fit_objective(c1: f64, x: &[f64], dy: &[f64]) -> (f64, f64) {
    let c2 = x
        .iter()
        .zip(dy)
        .map(|(xk, dk)| c1 * xk - dk)
        .fold(0.0_f64, f64::max);
    let ss = x.iter().zip(dy).map(|(xk, dk)| (dk - c1 * xk + c2).powi(2)).sum();
    (ss, c2)
}

/// Fits `y' >= C₁ y^q - C₂` to a sampled series.
///
/// `y'` comes from backward differences paired with the newer sample. For
/// each `C₁ >= 0` the smallest admissible `C₂` is determined by the active
/// constraint; `C₁` then minimizes the squared slack. The objective is convex
/// in `C₁`, so a coarse grid followed by golden-section refinement finds it.
pub fn blowup_ode_fit(t: &[f64], y: &[f64], q: f64) -> Result<OdeFit> {
    if t.len() != y.len() {
        return Err(LabError::InvalidArgument("t and y lengths differ".into()));
    }
    if y.len() < 10 {
        return Err(LabError::InvalidArgument(format!("need at least 10 samples, got {}", y.len())));
    }
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if y.windows(2).all(|w| (w[1] - w[0]).abs() <= 1e-14 * scale.max(1e-300)) {
        return Err(LabError::Degenerate("y is constant along the run".into()));
    }
    let mut x = Vec::with_capacity(y.len() - 1);
    let mut dy = Vec::with_capacity(y.len() - 1);
    for k in 1..y.len() {
        let dt = t[k] - t[k - 1];
        if !(dt > 0.0) {
            return Err(LabError::InvalidArgument(format!("times must increase strictly (index {k})")));
        }
        x.push(y[k].max(0.0).powf(q));
        dy.push((y[k] - y[k - 1]) / dt);
    }
    let top = x
        .iter()
        .zip(&dy)
        .filter(|(xk, _)| **xk > 0.0)
        .map(|(xk, dk)| dk.abs() / xk)
        .fold(0.0_f64, f64::max);
    let mut best = 0.0;
    let mut best_val = fit_objective(0.0, &x, &dy).0;
    let grid_pts = 400;
    let hi = 2.0 * top;
    if hi > 0.0 {
        for i in 1..=grid_pts {
            let c = hi * i as f64 / grid_pts as f64;
            let v = fit_objective(c, &x, &dy).0;
            if v < best_val {
                best_val = v;
                best = c;
            }
        }
        let step = hi / grid_pts as f64;
        let (mut a, mut b) = ((best - step).max(0.0), best + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if fit_objective(c, &x, &dy).0 <= fit_objective(d, &x, &dy).0 {
                b = d;
            } else {
                a = c;
            }
        }
        let cand = 0.5 * (a + b);
        if fit_objective(cand, &x, &dy).0 < best_val {
            best = cand;
        }
        // below the search resolution the optimum is the boundary C₁ = 0
        if best <= 1e-9 * hi {
            best = 0.0;
        }
    }
    let (_, c2) = fit_objective(best, &x, &dy);
    let margin = x
        .iter()
        .zip(&dy)
        .map(|(xk, dk)| dk - best * xk + c2)
        .fold(f64::INFINITY, f64::min);
    Ok(OdeFit {
        c1: best,
        c2,
        margin,
        samples: dy.len(),
        compliant: best > 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub alpha: f64,
    /// Largest amplitude seen to complete.
    pub amplitude_lo: f64,
    /// Smallest amplitude seen to blow up.
    pub amplitude_hi: f64,
    /// `∫ u₀ φ₁^α` at `amplitude_hi`: the empirical threshold.
    pub threshold_y0: f64,
    pub t_detect: f64,
    pub runs: usize,
}

/// Bisection on the amplitude `A` of `u₀ = A · bump`, between a run that
/// completes and one that detects gradient blow-up.
///
/// `make_spec` builds the problem for a given amplitude; stalled runs abort
/// the search as inconclusive.
pub fn criterion_experiment<F>(
    make_spec: F,
    alpha: f64,
    bracket: (f64, f64),
    rel_tol: f64,
    control: &StepControl,
) -> Result<CriterionReport>
where
    F: Fn(f64) -> Result<ProblemSpec>,
{
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && hi > lo) {
        return Err(LabError::InvalidArgument(format!("bad amplitude bracket ({lo}, {hi})")));
    }
    let probe = make_spec(hi)?;
    let window = alpha_window(probe.p(), probe.q())?;
    if !window.contains(alpha) {
        return Err(LabError::InvalidArgument(format!(
            "alpha = {alpha} lies outside the admissible window ({}, {})",
            window.lo, window.hi
        )));
    }
    let eig = principal_eigenpair(probe.grid(), 1e-10)?;
    let weights = functional_weights(probe.grid(), &eig.phi, alpha);
    let mut runs = 0;
    let mut outcome = |a: f64| -> Result<(Verdict, Option<f64>)> {
        runs += 1;
        let spec = make_spec(a)?;
        let (_, rep) = stepper::run(&spec, control)?;
        match rep.verdict {
            Verdict::StalledStep => Err(LabError::Inconclusive(format!(
                "run with amplitude {a} stalled at t = {}",
                rep.t_final
            ))),
            v => Ok((v, rep.t_detect)),
        }
    };
    let (v_lo, _) = outcome(lo)?;
    if v_lo != Verdict::Completed {
        return Err(LabError::Inconclusive(format!("lower amplitude {lo} does not complete")));
    }
    let (v_hi, mut t_hi) = outcome(hi)?;
    if v_hi != Verdict::GbuDetected {
        return Err(LabError::Inconclusive(format!("upper amplitude {hi} does not blow up")));
    }
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        match outcome(mid)? {
            (Verdict::GbuDetected, t) => {
                hi = mid;
                t_hi = t;
            }
            _ => lo = mid,
        }
    }
    let spec_hi = make_spec(hi)?;
    Ok(CriterionReport {
        alpha,
        amplitude_lo: lo,
        amplitude_hi: hi,
        threshold_y0: dot(&weights, spec_hi.u0()),
        t_detect: t_hi.unwrap_or(f64::NAN),
        runs,
    })
}

/// Convenience constructor for the amplitude family on a given grid.
pub fn sine_family(
    grid: Arc<GridDomain>,
    p: f64,
    q: f64,
    eps: f64,
) -> impl Fn(f64) -> Result<ProblemSpec> {
    move |a: f64| {
        let u0 = crate::profiles::Profile::Sine { amplitude: a }.sample(&grid);
        let g = vec![0.0; grid.len()];
        ProblemSpec::new(grid.clone(), p, q, u0, g)?.with_eps(eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn interval_eigenpair() {
        let g = GridDomain::unit_interval(401).unwrap();
        let e = principal_eigenpair(&g, 1e-10).unwrap();
        assert!((e.lambda - discrete_principal_eigenvalue(&g)).abs() < 1e-10);
        assert!((e.lambda - PI * PI).abs() < 1e-3);
        for k in 0..g.len() {
            let x = g.coords(k)[0];
            assert!((e.phi[k] - (PI * x).sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn square_eigenpair() {
        let g = GridDomain::unit_square(41).unwrap();
        let e = principal_eigenpair(&g, 1e-10).unwrap();
        assert!((e.lambda - discrete_principal_eigenvalue(&g)).abs() < 1e-8);
        assert!((e.lambda - 2.0 * PI * PI).abs() < 2e-2);
        for k in 0..g.len() {
            if g.is_boundary(k) {
                assert_eq!(e.phi[k], 0.0);
            } else {
                assert!(e.phi[k] > 0.0);
            }
        }
        assert_eq!(e.phi.iter().copied().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn nonpositive_tolerance_rejected() {
        let g = GridDomain::unit_interval(11).unwrap();
        assert!(principal_eigenpair(&g, 0.0).is_err());
    }

    #[test]
    fn alpha_windows() {
        let w = alpha_window(3.0, 5.0).unwrap();
        assert_eq!((w.lo, w.hi, w.lo_closed), (1.0, 4.0, true));
        assert!(w.contains(1.0));
        let w = alpha_window(3.0, 4.0).unwrap();
        assert_eq!((w.lo, w.hi, w.lo_closed), (1.0, 3.0, false));
        assert!(!w.contains(1.0));
        let w = alpha_window(3.0, 3.1).unwrap();
        assert!((w.lo - 2.0 / 1.1).abs() < 1e-12);
        assert!((w.hi - 2.1).abs() < 1e-12);
        assert!(matches!(alpha_window(3.0, 2.5), Err(LabError::EmptyWindow(_))));
        assert!(matches!(alpha_window(3.0, 3.0), Err(LabError::EmptyWindow(_))));
        assert!(matches!(alpha_window(3.0, 2.0), Err(LabError::InvalidProblem(_))));
    }

    #[test]
    fn functional_examples() {
        let g = GridDomain::unit_interval(2001).unwrap();
        let e = principal_eigenpair(&g, 1e-10).unwrap();
        assert_eq!(blowup_functional(&g, &vec![0.0; g.len()], &e.phi, 1.5), 0.0);
        let ones = vec![1.0; g.len()];
        assert!((blowup_functional(&g, &ones, &e.phi, 1.0) - 2.0 / PI).abs() < 1e-6);
        assert!((blowup_functional(&g, &ones, &e.phi, 2.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn ode_fit_cases() {
        let t: Vec<f64> = (0..2000).map(|k| k as f64 * 4e-4).collect();
        let stationary = vec![0.3; t.len()];
        assert!(matches!(blowup_ode_fit(&t, &stationary, 2.0), Err(LabError::Degenerate(_))));

        // y' = y², y(0) = 1  =>  y = 1/(1-t)
        let y: Vec<f64> = t.iter().map(|s| 1.0 / (1.0 - s)).collect();
        let fit = blowup_ode_fit(&t, &y, 2.0).unwrap();
        assert!(fit.c1 >= 1.0 - 1e-2, "{fit:?}");
        assert!(fit.c2 < 1e-2 * fit.c1);
        assert!(fit.margin >= 0.0);
        assert!(fit.compliant);

        let dec: Vec<f64> = t.iter().map(|s| 2.0 - s).collect();
        let fit = blowup_ode_fit(&t, &dec, 2.0).unwrap();
        assert_eq!(fit.c1, 0.0);
        assert!(fit.c2 > 0.0);
        assert!(!fit.compliant);
        assert!(blowup_ode_fit(&t[..5], &y[..5], 2.0).is_err());
    }

    #[test]
    fn zero_amplitude_completes() {
        let grid = Arc::new(GridDomain::unit_interval(21).unwrap());
        let make = sine_family(grid, 3.0, 4.0, 0.0);
        let spec = make(0.0).unwrap();
        let control = StepControl { t_end: 0.1, ..Default::default() };
        let (_, rep) = stepper::run(&spec, &control).unwrap();
        assert_eq!(rep.verdict, Verdict::Completed);
    }

    #[test]
    fn sidecar_and_field() {
        let g = GridDomain::unit_interval(11).unwrap();
        let e = principal_eigenpair(&g, 1e-10).unwrap();
        let v: serde_json::Value = serde_json::from_str(&e.sidecar_json()).unwrap();
        assert_eq!(v["iterations"].as_u64().unwrap() as usize, e.iterations);
        let (_, back) = fieldio::decode_field(&e.field_bytes(&g)).unwrap();
        assert_eq!(back, e.phi);
    }

    proptest::proptest! {
        #[test]
        fn functional_is_monotone(
            base in proptest::collection::vec(0.0f64..2.0, 33),
            bump in proptest::collection::vec(0.0f64..1.0, 33),
            alpha in 1.0f64..3.0,
        ) {
            let g = GridDomain::unit_interval(33).unwrap();
            let e = principal_eigenpair(&g, 1e-10).unwrap();
            let upper: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            proptest::prop_assert!(
                blowup_functional(&g, &base, &e.phi, alpha) <= blowup_functional(&g, &upper, &e.phi, alpha)
            );
        }
    }
}
