//! Discrete operators of the regularized problem
//!
//! ```text
//! u_t - div((|∇u|² + ε)^((p-2)/2) ∇u) = μ [(|∇u|² + ε)^(q/2) - ε^(q/2)]
//! ```
//!
//! with Dirichlet data pinned on boundary nodes. Diffusion is evaluated in
//! flux form on cell faces; the gradient source uses central differences.

use std::cell::OnceCell;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::GridDomain;

/// Exponents, regularization and data of one problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    grid: Arc<GridDomain>,
    p: f64,
    q: f64,
    eps: f64,
    mu: f64,
    g: Vec<f64>,
    u0: Vec<f64>,
}

/// Scalar parameters of a [`ProblemSpec`], without the fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub p: f64,
    pub q: f64,
    pub eps: f64,
    pub mu: f64,
}

pub fn check_exponents(p: f64, q: f64) -> Result<()> {
    if !(p.is_finite() && p > 2.0) {
        return Err(LabError::InvalidProblem(format!(
            "requires p > 2 (degenerate diffusion), got p = {p}"
        )));
    }
    if !(q.is_finite() && q > p - 1.0) {
        return Err(LabError::InvalidProblem(format!(
            "requires q > p-1 (well-posedness hypothesis q > p-1 > 1), got p = {p}, q = {q}"
        )));
    }
    Ok(())
}

impl ProblemSpec {
    /// Builds a spec with `ε = 0` and `μ = 1`.
    ///
    /// `g` is a field over the whole grid; only its boundary values act as
    /// Dirichlet data, the interior values feed the data norms used by the
    /// barrier certifier.
    pub fn new(grid: Arc<GridDomain>, p: f64, q: f64, u0: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        check_exponents(p, q)?;
        let n = grid.len();
        if u0.len() != n || g.len() != n {
            return Err(LabError::InvalidProblem(format!(
                "field lengths u0 = {}, g = {} do not match grid size {n}",
                u0.len(),
                g.len()
            )));
        }
        if let Some(k) = u0.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(LabError::InvalidProblem(format!(
                "u0 must be finite and >= 0, node {k} holds {}",
                u0[k]
            )));
        }
        if let Some(k) = g.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(LabError::InvalidProblem(format!(
                "boundary data g must be finite and >= 0, node {k} holds {}",
                g[k]
            )));
        }
        let mismatch = grid
            .boundary_indices()
            .into_iter()
            .map(|k| (u0[k] - g[k]).abs())
            .fold(0.0_f64, f64::max);
        if mismatch != 0.0 {
            return Err(LabError::InvalidProblem(format!(
                "compatibility u0 = g on the boundary violated by {mismatch:e}"
            )));
        }
        Ok(Self {
            grid,
            p,
            q,
            eps: 0.0,
            mu: 1.0,
            g,
            u0,
        })
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(LabError::InvalidProblem(format!("requires eps >= 0, got {eps}")));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(LabError::InvalidProblem(format!("requires mu >= 0, got {mu}")));
        }
        self.mu = mu;
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn u0(&self) -> &[f64] {
        &self.u0
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            p: self.p,
            q: self.q,
            eps: self.eps,
            mu: self.mu,
        }
    }

    pub fn initial_state(&self) -> SolutionState {
        SolutionState::new(self.grid.clone(), self.u0.clone(), 0.0)
    }

    pub fn u0_sup(&self) -> f64 {
        sup_abs(&self.u0)
    }
}

/// Grid field at a time level with a lazily cached `|∇u|`.
#[derive(Debug, Clone)]
pub struct SolutionState {
    grid: Arc<GridDomain>,
    u: Vec<f64>,
    t: f64,
    grad_norm: OnceCell<Vec<f64>>,
}

impl SolutionState {
    pub fn new(grid: Arc<GridDomain>, u: Vec<f64>, t: f64) -> Self {
        assert_eq!(u.len(), grid.len(), "field length must match the grid");
        Self {
            grid,
            u,
            t,
            grad_norm: OnceCell::new(),
        }
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    /// Mutable field access; drops the cached gradient.
    pub fn u_mut(&mut self) -> &mut [f64] {
        self.grad_norm = OnceCell::new();
        &mut self.u
    }

    pub fn into_field(self) -> Vec<f64> {
        self.u
    }

    /// `|∇u|` at every node, computed once per mutation.
    pub fn grad_norm(&self) -> &[f64] {
        self.grad_norm.get_or_init(|| {
            gradient(&self.grid, &self.u)
                .iter()
                .map(|g| g[0].hypot(g[1]))
                .collect()
        })
    }

    pub fn grad_sup(&self) -> f64 {
        sup_abs(self.grad_norm())
    }

    /// Largest deviation from `g` over boundary nodes.
    pub fn boundary_mismatch(&self, g: &[f64]) -> f64 {
        self.grid
            .boundary_indices()
            .into_iter()
            .map(|k| (self.u[k] - g[k]).abs())
            .fold(0.0, f64::max)
    }
}

pub fn sup_abs(field: &[f64]) -> f64 {
    field.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn axis_derivative(u: &[f64], n: usize, stride: usize, base: usize, k: usize, h: f64) -> f64 {
    let at = |m: usize| u[base + m * stride];
    if k == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    } else if k + 1 == n {
        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
    } else {
        (at(k + 1) - at(k - 1)) / (2.0 * h)
    }
}

/// Nodal gradient: central differences inside, second-order one-sided
/// differences on faces. The y component is 0 in 1D.
pub fn gradient(grid: &GridDomain, u: &[f64]) -> Vec<[f64; 2]> {
    let nx = grid.nx();
    let ny = grid.ny();
    let hx = grid.hx();
    let mut out = vec![[0.0; 2]; grid.len()];
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            out[k][0] = axis_derivative(u, nx, 1, j * nx, i, hx);
            if grid.dim() == 2 {
                out[k][1] = axis_derivative(u, ny, nx, i, j, grid.hy());
            }
        }
    }
    out
}

/// `x^e` for `x >= 0`, with exact shortcuts for the half-integer exponents
/// that dominate experiments (`p = 3`, `q = 4`, ...).
#[inline]
pub fn pow_nonneg(x: f64, e: f64) -> f64 {
    if e == 0.5 {
        x.sqrt()
    } else if e == 1.0 {
        x
    } else if e == 1.5 {
        x * x.sqrt()
    } else if e.fract() == 0.0 && e.abs() <= 16.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// Regularized flux `(|g|² + ε)^((p-2)/2) g_normal`.
#[inline]
pub fn flux(normal: f64, tangential: f64, p: f64, eps: f64) -> f64 {
    let s = normal * normal + tangential * tangential + eps;
    if s == 0.0 {
        0.0
    } else {
        pow_nonneg(s, 0.5 * (p - 2.0)) * normal
    }
}

/// Face fluxes of the regularized p-Laplacian.
///
/// `x_faces[j * (nx - 1) + i]` is the flux through the face between nodes
/// `(i, j)` and `(i + 1, j)`; `y_faces[j * nx + i]` between `(i, j)` and
/// `(i, j + 1)`. Faces on boundary rows/columns that no interior node uses
/// are left at 0.
#[derive(Debug, Clone)]
pub struct FaceFluxes {
    pub x_faces: Vec<f64>,
    pub y_faces: Vec<f64>,
}

pub fn face_fluxes(grid: &GridDomain, u: &[f64], p: f64, eps: f64) -> FaceFluxes {
    let nx = grid.nx();
    let hx = grid.hx();
    if grid.dim() == 1 {
        let x_faces = (0..nx - 1)
            .map(|i| flux((u[i + 1] - u[i]) / hx, 0.0, p, eps))
            .collect();
        return FaceFluxes {
            x_faces,
            y_faces: Vec::new(),
        };
    }
    let ny = grid.ny();
    let hy = grid.hy();
    let idx = |i: usize, j: usize| j * nx + i;
    let cy = |i: usize, j: usize| (u[idx(i, j + 1)] - u[idx(i, j - 1)]) / (2.0 * hy);
    let cx = |i: usize, j: usize| (u[idx(i + 1, j)] - u[idx(i - 1, j)]) / (2.0 * hx);

    let mut x_faces = vec![0.0; (nx - 1) * ny];
    for j in 1..ny - 1 {
        for i in 0..nx - 1 {
            let normal = (u[idx(i + 1, j)] - u[idx(i, j)]) / hx;
            let tangential = 0.5 * (cy(i, j) + cy(i + 1, j));
            x_faces[j * (nx - 1) + i] = flux(normal, tangential, p, eps);
        }
    }
    let mut y_faces = vec![0.0; nx * (ny - 1)];
    for j in 0..ny - 1 {
        for i in 1..nx - 1 {
            let normal = (u[idx(i, j + 1)] - u[idx(i, j)]) / hy;
            let tangential = 0.5 * (cx(i, j) + cx(i, j + 1));
            y_faces[j * nx + i] = flux(normal, tangential, p, eps);
        }
    }
    FaceFluxes { x_faces, y_faces }
}

/// `div((|∇u|² + ε)^((p-2)/2) ∇u)` at interior nodes; boundary entries are 0.
pub fn regularized_diffusion(grid: &GridDomain, u: &[f64], p: f64, eps: f64) -> Vec<f64> {
    let f = face_fluxes(grid, u, p, eps);
    divergence(grid, &f)
}

pub fn divergence(grid: &GridDomain, f: &FaceFluxes) -> Vec<f64> {
    let nx = grid.nx();
    let hx = grid.hx();
    let mut out = vec![0.0; grid.len()];
    if grid.dim() == 1 {
        for i in 1..nx - 1 {
            out[i] = (f.x_faces[i] - f.x_faces[i - 1]) / hx;
        }
        return out;
    }
    let ny = grid.ny();
    let hy = grid.hy();
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let fx = (f.x_faces[j * (nx - 1) + i] - f.x_faces[j * (nx - 1) + i - 1]) / hx;
            let fy = (f.y_faces[j * nx + i] - f.y_faces[(j - 1) * nx + i]) / hy;
            out[j * nx + i] = fx + fy;
        }
    }
    out
}

/// Regularized source `μ[(s + ε)^(q/2) - ε^(q/2)]` with `s = |∇u|²`.
#[inline]
pub fn source_value(grad_sq: f64, q: f64, eps: f64, mu: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let v = pow_nonneg(grad_sq + eps, 0.5 * q) - pow_nonneg(eps, 0.5 * q);
    mu * v.max(0.0)
}

/// Gradient source at interior nodes (central `|∇u|`); boundary entries are 0.
pub fn gradient_source(grid: &GridDomain, u: &[f64], q: f64, eps: f64, mu: f64) -> Vec<f64> {
    let grad = gradient(grid, u);
    source_from_gradient(grid, &grad, q, eps, mu)
}

pub fn source_from_gradient(grid: &GridDomain, grad: &[[f64; 2]], q: f64, eps: f64, mu: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|k| {
            if grid.is_boundary(k) {
                0.0
            } else {
                let g = grad[k];
                source_value(g[0] * g[0] + g[1] * g[1], q, eps, mu)
            }
        })
        .collect()
}

/// Right-hand side `diffusion + source` of the semi-discrete system.
pub fn rhs(spec: &ProblemSpec, u: &[f64]) -> Vec<f64> {
    let grid = spec.grid();
    let mut d = regularized_diffusion(grid, u, spec.p, spec.eps);
    let s = gradient_source(grid, u, spec.q, spec.eps, spec.mu);
    for (a, b) in d.iter_mut().zip(&s) {
        *a += b;
    }
    d
}

/// Diffusion and source parts for a state, reusing its cached `|∇u|`.
pub fn rhs_parts(spec: &ProblemSpec, state: &SolutionState) -> (Vec<f64>, Vec<f64>) {
    let grid = state.grid();
    let d = regularized_diffusion(grid, state.u(), spec.p, spec.eps);
    let norms = state.grad_norm();
    let s = (0..grid.len())
        .map(|k| {
            if grid.is_boundary(k) {
                0.0
            } else {
                source_value(norms[k] * norms[k], spec.q, spec.eps, spec.mu)
            }
        })
        .collect();
    (d, s)
}

/// `u_t - diffusion - source` at interior nodes, 0 on the boundary.
pub fn strong_residual(state: &SolutionState, spec: &ProblemSpec, u_t: &[f64]) -> Vec<f64> {
    let grid = state.grid();
    let r = rhs(spec, state.u());
    (0..grid.len())
        .map(|k| if grid.is_boundary(k) { 0.0 } else { u_t[k] - r[k] })
        .collect()
}

/// Sampled time levels of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Arc<GridDomain>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(grid: Arc<GridDomain>) -> Self {
        Self {
            grid,
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, u: Vec<f64>) {
        self.times.push(t);
        self.states.push(u);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        self.times.last().map(|&t| (t, self.states.last().unwrap().as_slice()))
    }
}

/// Space-time quadrature of the weak form
///
/// `∫∫ u_t ψ + a(|∇u|²) ∇u·∇ψ - source(∇u) ψ`
///
/// over consecutive trajectory levels: `u_t` is the level difference, the
/// flux and source terms are averaged over both ends of each interval
/// (trapezoid in time). Fluxes pair with face differences of `ψ` (midpoint
/// rule in space), the source uses trapezoid weights.
pub fn weak_residual<F>(traj: &Trajectory, spec: &ProblemSpec, psi: F) -> Result<f64>
where
    F: Fn(f64, f64, f64) -> f64,
{
    if traj.len() < 2 {
        return Err(LabError::InvalidArgument(
            "weak residual needs at least two time levels".into(),
        ));
    }
    let grid = traj.grid.as_ref();
    let psi_at = |t: f64| -> Result<Vec<f64>> {
        let field = grid.sample(|x, y| psi(x, y, t));
        for (k, v) in field.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(LabError::InvalidArgument(format!(
                    "test function must be >= 0, got {v} at node {k}, t = {t}"
                )));
            }
            if grid.is_boundary(k) && v.abs() > 1e-12 {
                return Err(LabError::InvalidArgument(format!(
                    "test function must vanish on the lateral boundary, got {v} at node {k}, t = {t}"
                )));
            }
        }
        Ok(field)
    };

    let weights = grid.trapezoid_weights();
    let spatial = |u: &[f64], psi_f: &[f64]| -> f64 {
        let ff = face_fluxes(grid, u, spec.p, spec.eps);
        let mut acc = flux_pairing(grid, &ff, psi_f);
        let s = gradient_source(grid, u, spec.q, spec.eps, spec.mu);
        for k in 0..grid.len() {
            acc -= weights[k] * s[k] * psi_f[k];
        }
        acc
    };

    let mut total = 0.0;
    let mut psi_prev = psi_at(traj.times[0])?;
    let mut s_prev = spatial(&traj.states[0], &psi_prev);
    for w in 1..traj.len() {
        let (t0, t1) = (traj.times[w - 1], traj.times[w]);
        let dt = t1 - t0;
        if dt <= 0.0 {
            return Err(LabError::InvalidArgument("trajectory times must increase".into()));
        }
        let psi_next = psi_at(t1)?;
        let s_next = spatial(&traj.states[w], &psi_next);
        let (u0, u1) = (&traj.states[w - 1], &traj.states[w]);
        let mut time_term = 0.0;
        for k in 0..grid.len() {
            time_term += weights[k] * (u1[k] - u0[k]) * 0.5 * (psi_prev[k] + psi_next[k]);
        }
        total += time_term + 0.5 * dt * (s_prev + s_next);
        psi_prev = psi_next;
        s_prev = s_next;
    }
    Ok(total)
}

/// `∫ F·∇ψ` with face fluxes against two-point differences of `ψ`.
fn flux_pairing(grid: &GridDomain, f: &FaceFluxes, psi: &[f64]) -> f64 {
    let nx = grid.nx();
    let hx = grid.hx();
    if grid.dim() == 1 {
        return (0..nx - 1)
            .map(|i| f.x_faces[i] * (psi[i + 1] - psi[i]) / hx * hx)
            .sum();
    }
    let ny = grid.ny();
    let hy = grid.hy();
    let vol = hx * hy;
    let mut acc = 0.0;
    for j in 1..ny - 1 {
        for i in 0..nx - 1 {
            acc += f.x_faces[j * (nx - 1) + i] * (psi[j * nx + i + 1] - psi[j * nx + i]) / hx * vol;
        }
    }
    for j in 0..ny - 1 {
        for i in 1..nx - 1 {
            acc += f.y_faces[j * nx + i] * (psi[(j + 1) * nx + i] - psi[j * nx + i]) / hy * vol;
        }
    }
    acc
}
