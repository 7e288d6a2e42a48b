//! Local barrier constructions near an exterior sphere of radius `ρ`.
//!
//! The supersolution `v̄ = φ(r-ρ) + g` uses the concave profile
//! `φ(s) = s (s+δ)^(-β)` on the collar `0 <= s <= η = δ`; the exponential
//! comparison function
//!
//! ```text
//! ū = (C²K² + 1)^(q/2) t + C (1 - e^(-K(r-ρ))) + ‖g‖∞
//! ```
//!
//! controls the outer edge of the collar. Everything here is radial, so the
//! checks run on a 1D grid in `s = r - ρ`. The data `g` only enters through
//! its norms, with worst-case signs.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::pde::check_exponents;

/// Norms of the Dirichlet data `g` (extended to the domain).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DataNorms {
    pub sup: f64,
    pub min: f64,
    pub grad: f64,
    pub hess: f64,
}

impl DataNorms {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// Bounds on the initial datum used to size the exponential barrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialBound {
    /// `M >= ‖u₀‖∞`.
    pub sup: f64,
    /// Lipschitz constant of `u₀`.
    pub lipschitz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub rho: f64,
    pub delta: f64,
    pub eta: f64,
    pub beta: f64,
    pub k: f64,
    pub c: f64,
    pub p: f64,
    pub q: f64,
    pub n: usize,
    pub g: DataNorms,
}

fn check_profile_args(s: f64, delta: f64, beta: f64) -> Result<()> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(LabError::InvalidArgument(format!("profile needs s >= 0, got {s}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(LabError::InvalidArgument(format!("profile needs delta > 0, got {delta}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(LabError::InvalidArgument(format!("profile needs beta in (0, 1), got {beta}")));
    }
    Ok(())
}

/// `φ(s) = s (s+δ)^(-β)`.
pub fn phi(s: f64, delta: f64, beta: f64) -> Result<f64> {
    check_profile_args(s, delta, beta)?;
    Ok(s * (s + delta).powf(-beta))
}

/// `φ'(s) = [(1-β)s + δ] (s+δ)^(-β-1)`.
pub fn phi_prime(s: f64, delta: f64, beta: f64) -> Result<f64> {
    check_profile_args(s, delta, beta)?;
    Ok(phi_prime_raw(s, delta, beta))
}

/// `φ''(s) = -β [(1-β)s + 2δ] (s+δ)^(-β-2)`.
pub fn phi_second(s: f64, delta: f64, beta: f64) -> Result<f64> {
    check_profile_args(s, delta, beta)?;
    Ok(phi_second_raw(s, delta, beta))
}

fn phi_prime_raw(s: f64, delta: f64, beta: f64) -> f64 {
    ((1.0 - beta) * s + delta) * (s + delta).powf(-beta - 1.0)
}

fn phi_second_raw(s: f64, delta: f64, beta: f64) -> f64 {
    -beta * ((1.0 - beta) * s + 2.0 * delta) * (s + delta).powf(-beta - 2.0)
}

/// `β = 1/(2(q-p+2))`.
pub fn barrier_beta(p: f64, q: f64) -> f64 {
    1.0 / (2.0 * (q - p + 2.0))
}

/// Largest `δ` with `4^(p-q-4) β >= δ^((q-p+3)/(2(q-p+2)))`.
pub fn explicit_delta_bound(p: f64, q: f64) -> f64 {
    let beta = barrier_beta(p, q);
    let lhs = 4f64.powf(p - q - 4.0) * beta;
    lhs.powf(2.0 * (q - p + 2.0) / (q - p + 3.0))
}

/// Regularized diffusivity `a(G²) = (G²+ε)^((p-2)/2)`.
fn diffusivity(g: f64, p: f64, eps: f64) -> f64 {
    (g * g + eps).powf(0.5 * (p - 2.0))
}

fn source(g: f64, q: f64, eps: f64) -> f64 {
    (g * g + eps).powf(0.5 * q) - eps.powf(0.5 * q)
}

/// Signed margin `(lhs - rhs) / (|lhs| + |rhs|)`, in `[-1, 1]`.
fn relative(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs() + rhs.abs();
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs) / scale
    }
}

/// Margins of the individual collar conditions for a candidate `δ = η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargins {
    /// `4^(p-q-4) β - δ^((q-p+3)/(2(q-p+2)))`.
    pub explicit: f64,
    /// `φ'(η) - ‖∇g‖` (`φ'` is decreasing, so `s = η` is the worst point).
    pub gradient: f64,
    /// `βδ(2δ)^(-β-2) - 4(p-2+√N)‖D²g‖`.
    pub hessian: f64,
    /// `4(2δ)^(-2β) - 1`.
    pub collar_scale: f64,
    /// `βδ - (N+p-3)(2δ)²/ρ`.
    pub collar_width: f64,
}

impl ConditionMargins {
    pub fn admissible(&self) -> bool {
        self.explicit >= 0.0
            && self.gradient >= 0.0
            && self.hessian >= 0.0
            && self.collar_scale >= 0.0
            && self.collar_width >= 0.0
    }
}

pub fn condition_margins(p: f64, q: f64, n: usize, rho: f64, g: &DataNorms, delta: f64) -> ConditionMargins {
    let beta = barrier_beta(p, q);
    let nf = n as f64;
    let eta = delta;
    ConditionMargins {
        explicit: 4f64.powf(p - q - 4.0) * beta - delta.powf((q - p + 3.0) / (2.0 * (q - p + 2.0))),
        gradient: phi_prime_raw(eta, delta, beta) - g.grad,
        hessian: beta * delta * (eta + delta).powf(-beta - 2.0) - 4.0 * (p - 2.0 + nf.sqrt()) * g.hess,
        collar_scale: 4.0 * (eta + delta).powf(-2.0 * beta) - 1.0,
        collar_width: beta * delta - (nf + p - 3.0) * (eta + delta).powi(2) / rho,
    }
}

/// Searches the largest admissible `δ = η` by bisection from `δ = ρ`
/// downward, then sizes `K = 2(N+p-3)/ρ` and `C` from the data bounds.
///
/// The admissible set is an interval `(0, δ*]`, so the result is the
/// bisection approximation of `δ*` from below.
pub fn find_barrier_params(
    p: f64,
    q: f64,
    n: usize,
    rho: f64,
    g: &DataNorms,
    init: &InitialBound,
) -> Result<BarrierParams> {
    check_exponents(p, q)?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(LabError::InvalidArgument(format!("requires rho > 0, got {rho}")));
    }
    if n == 0 || n > 3 {
        return Err(LabError::InvalidArgument(format!("dimension must be 1, 2 or 3, got {n}")));
    }
    if !(init.sup >= 0.0 && init.lipschitz >= 0.0) {
        return Err(LabError::InvalidArgument("initial bounds must be >= 0".into()));
    }
    let ok = |d: f64| condition_margins(p, q, n, rho, g, d).admissible();

    let mut hi = rho;
    let mut lo = rho;
    if !ok(rho) {
        loop {
            lo *= 0.5;
            if lo < 1e-300 {
                return Err(LabError::NoAdmissibleParams(format!(
                    "no admissible delta above 1e-300 for p = {p}, q = {q}, N = {n}, rho = {rho}"
                )));
            }
            if ok(lo) {
                break;
            }
            hi = lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let delta = lo;
    let nf = n as f64;
    let k = 2.0 * (nf + p - 3.0) / rho;
    let c = (init.sup.max(init.lipschitz / k) / (1.0 - (-1.0f64).exp())).max(f64::MIN_POSITIVE);
    Ok(BarrierParams {
        rho,
        delta,
        eta: delta,
        beta: barrier_beta(p, q),
        k,
        c,
        p,
        q,
        n,
        g: *g,
    })
}

/// `M₂ = sup_{0<=s<=δ} φ'(s) + ‖∇g‖∞ = δ^(-β) + ‖∇g‖∞`.
pub fn collar_lipschitz_bound(params: &BarrierParams) -> f64 {
    params.delta.powf(-params.beta) + params.g.grad
}

/// Minima over the collar of each inequality in the supersolution argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionReport {
    pub eps: f64,
    pub points: usize,
    /// Diffusivity ratios `κ` that were swept (`0`, `(p-2)/2`, `p-2`).
    pub kappas: Vec<f64>,
    /// Per `κ`: `min_s [-φ'' - (N-1+κ)φ'/r - √N‖D²g‖ - κ‖D²g‖ - f(φ'+‖∇g‖)]`,
    /// where `f(G) = [(G²+ε)^(q/2) - ε^(q/2)] / (G²+ε)^((p-2)/2)`.
    pub direct: Vec<f64>,
    /// `min_s [φ'(s) - ‖∇g‖]`.
    pub gradient: f64,
    /// `min_s [βδ(s+δ)^(-β-2) - (s+δ)^(-β(q-p+2)) 4^(q-p+3)]`.
    pub source_dominance: f64,
    /// `min_s [βδ(s+δ)^(-β-2) - 4(p-2+√N)‖D²g‖]`.
    pub hessian: f64,
    pub collar_scale: f64,
    pub collar_width: f64,
    /// Smallest relative margin over all of the above, in `[-1, 1]`.
    pub minimum: f64,
}

impl SupersolutionReport {
    pub fn certified(&self) -> bool {
        self.minimum >= 0.0
    }
}

fn radial_nodes(span: f64, points: usize) -> impl Iterator<Item = f64> {
    let m = points.max(2) - 1;
    (0..=m).map(move |i| if i == m { span } else { span * i as f64 / m as f64 })
}

/// Evaluates the supersolution inequalities for `v̄ = φ(r-ρ) + g` on
/// `points` radial nodes of the collar `[ρ, ρ+η]`.
pub fn supersolution_residual(params: &BarrierParams, eps: f64, points: usize) -> SupersolutionReport {
    let BarrierParams { rho, delta, eta, beta, p, q, n, g, .. } = *params;
    let nf = n as f64;
    let kappas = vec![0.0, 0.5 * (p - 2.0), p - 2.0];
    let mut direct = vec![f64::INFINITY; kappas.len()];
    let mut direct_rel = f64::INFINITY;
    let mut gradient = f64::INFINITY;
    let mut gradient_rel = f64::INFINITY;
    let mut dominance = f64::INFINITY;
    let mut dominance_rel = f64::INFINITY;
    let mut hessian = f64::INFINITY;
    let mut hessian_rel = f64::INFINITY;
    let c_src = 4f64.powf(q - p + 3.0);
    let c_hess = 4.0 * (p - 2.0 + nf.sqrt()) * g.hess;
    for s in radial_nodes(eta, points) {
        let r = rho + s;
        let d1 = phi_prime_raw(s, delta, beta);
        let d2 = phi_second_raw(s, delta, beta);
        let big_g = d1 + g.grad;
        let rhs = source(big_g, q, eps) / diffusivity(big_g, p, eps);
        for (slot, &kappa) in direct.iter_mut().zip(&kappas) {
            let pos = -d2;
            let neg = (nf - 1.0 + kappa) * d1 / r + (nf.sqrt() + kappa) * g.hess;
            *slot = slot.min(pos - neg - rhs);
            direct_rel = direct_rel.min(relative(pos, neg + rhs));
        }
        gradient = gradient.min(d1 - g.grad);
        gradient_rel = gradient_rel.min(relative(d1, g.grad));
        let lead = beta * delta * (s + delta).powf(-beta - 2.0);
        let src = (s + delta).powf(-beta * (q - p + 2.0)) * c_src;
        dominance = dominance.min(lead - src);
        dominance_rel = dominance_rel.min(relative(lead, src));
        hessian = hessian.min(lead - c_hess);
        hessian_rel = hessian_rel.min(relative(lead, c_hess));
    }
    let scale_lhs = 4.0 * (eta + delta).powf(-2.0 * beta);
    let width_lhs = beta * delta;
    let width_rhs = (nf + p - 3.0) * (eta + delta).powi(2) / rho;
    let minimum = [
        direct_rel,
        gradient_rel,
        dominance_rel,
        hessian_rel,
        relative(scale_lhs, 1.0),
        relative(width_lhs, width_rhs),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    SupersolutionReport {
        eps,
        points,
        kappas,
        direct,
        gradient,
        source_dominance: dominance,
        hessian,
        collar_scale: scale_lhs - 1.0,
        collar_width: width_lhs - width_rhs,
        minimum,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpBarrierReport {
    pub eps: f64,
    pub points: usize,
    /// `min [K - (N-1+κ)/r] · a(G²) C K e^(-Ks)` over nodes and `κ`.
    pub diffusion: f64,
    /// Minimum of `∂_t ū - div(...) - source`.
    pub total: f64,
}

impl ExpBarrierReport {
    pub fn certified(&self) -> bool {
        self.diffusion >= 0.0 && self.total >= 0.0
    }
}

/// Residual of the exponential comparison function on `points` radial
/// nodes of `[ρ, ρ+span]`.
///
/// The diffusion part uses the same worst-case bound as the supersolution
/// (`κ` swept over `[0, p-2]`, curvature term dropped); the time derivative
/// `(C²K²+1)^(q/2)` does not depend on `t`, so neither does the residual.
#[allow(clippy::too_many_arguments)]
pub fn exp_barrier_residual(
    c: f64,
    k: f64,
    rho: f64,
    n: usize,
    p: f64,
    q: f64,
    eps: f64,
    span: f64,
    points: usize,
) -> ExpBarrierReport {
    let nf = n as f64;
    let a_t = (c * c * k * k + 1.0).powf(0.5 * q);
    let kappas = [0.0, 0.5 * (p - 2.0), p - 2.0];
    let mut diffusion = f64::INFINITY;
    let mut total = f64::INFINITY;
    for s in radial_nodes(span, points) {
        let r = rho + s;
        let grad = c * k * (-k * s).exp();
        let a = diffusivity(grad, p, eps);
        let src = source(grad, q, eps);
        for kappa in kappas {
            let d = a * grad * (k - (nf - 1.0 + kappa) / r);
            diffusion = diffusion.min(d);
            total = total.min(a_t + d - src);
        }
    }
    ExpBarrierReport {
        eps,
        points,
        diffusion,
        total,
    }
}

/// Largest `T₀` with
/// `(C²K²+1)^(q/2) T₀ + C(1-e^(-Kη)) + ‖g‖∞ <= 2^(-β) η^(1-β) + min g`,
/// or `None` when even `T₀ = 0` violates it.
pub fn matching_time(params: &BarrierParams) -> Option<f64> {
    let BarrierParams { eta, beta, k, c, q, g, .. } = *params;
    let a_t = (c * c * k * k + 1.0).powf(0.5 * q);
    let room = 2f64.powf(-beta) * eta.powf(1.0 - beta) + g.min - c * (1.0 - (-k * eta).exp()) - g.sup;
    (room >= 0.0).then(|| room / a_t)
}

/// Certification document for one `(p, q, N, ρ)` instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierCertificate {
    pub params: BarrierParams,
    pub delta_upper_bound: f64,
    pub margins: ConditionMargins,
    pub supersolution: Vec<SupersolutionReport>,
    pub exp_barrier: Vec<ExpBarrierReport>,
    pub collar_lipschitz: f64,
    pub t0: Option<f64>,
    pub certified: bool,
}

impl BarrierCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// Finds parameters and checks both barriers for every `ε` in `eps_list`.
///
/// The exponential barrier is checked on `[ρ, ρ + span]`.
#[allow(clippy::too_many_arguments)]
pub fn certify(
    p: f64,
    q: f64,
    n: usize,
    rho: f64,
    g: &DataNorms,
    init: &InitialBound,
    eps_list: &[f64],
    points: usize,
    span: f64,
) -> Result<BarrierCertificate> {
    if let Some(e) = eps_list.iter().find(|e| !(**e >= 0.0 && **e <= 1.0)) {
        return Err(LabError::InvalidArgument(format!("eps must lie in [0, 1], got {e}")));
    }
    let params = find_barrier_params(p, q, n, rho, g, init)?;
    let supersolution: Vec<_> = eps_list.iter().map(|&e| supersolution_residual(&params, e, points)).collect();
    let exp_barrier: Vec<_> = eps_list
        .iter()
        .map(|&e| exp_barrier_residual(params.c, params.k, rho, n, p, q, e, span, points))
        .collect();
    let certified = supersolution.iter().all(|r| r.certified()) && exp_barrier.iter().all(|r| r.certified());
    Ok(BarrierCertificate {
        params,
        delta_upper_bound: explicit_delta_bound(p, q),
        margins: condition_margins(p, q, n, rho, g, params.delta),
        supersolution,
        exp_barrier,
        collar_lipschitz: collar_lipschitz_bound(&params),
        t0: matching_time(&params),
        certified,
    })
}
