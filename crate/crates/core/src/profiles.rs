//! Closed-form initial and boundary profiles sampled onto grids.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::grid::GridDomain;

/// Analytic data profiles used for `u0` and `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    Constant { value: f64 },
    /// `amplitude * prod_i sin(pi (x_i - lo_i) / L_i)`, vanishing on the boundary.
    Sine { amplitude: f64 },
    /// `offset + slope * x` (x-axis only).
    Linear { offset: f64, slope: f64 },
    /// `offset + amplitude * prod_i sin(...)`: a bump riding on a constant.
    SineOnConstant { offset: f64, amplitude: f64 },
}

impl Profile {
    pub fn eval(&self, grid: &GridDomain, x: f64, y: f64) -> f64 {
        match *self {
            Profile::Zero => 0.0,
            Profile::Constant { value } => value,
            Profile::Sine { amplitude } => amplitude * sine_bump(grid, x, y),
            Profile::Linear { offset, slope } => offset + slope * x,
            Profile::SineOnConstant { offset, amplitude } => offset + amplitude * sine_bump(grid, x, y),
        }
    }

    pub fn sample(&self, grid: &GridDomain) -> Vec<f64> {
        let mut field = grid.sample(|x, y| self.eval(grid, x, y));
        // sin(pi) is not exactly zero; pin the bump to zero on boundary nodes
        if matches!(self, Profile::Sine { .. } | Profile::SineOnConstant { .. }) {
            let base = match *self {
                Profile::SineOnConstant { offset, .. } => offset,
                _ => 0.0,
            };
            for k in grid.boundary_indices() {
                field[k] = base;
            }
        }
        field
    }

    /// Sup-norm of the profile's gradient on the grid's extent.
    pub fn grad_sup(&self, grid: &GridDomain) -> f64 {
        match *self {
            Profile::Zero | Profile::Constant { .. } => 0.0,
            Profile::Linear { slope, .. } => slope.abs(),
            Profile::Sine { amplitude } | Profile::SineOnConstant { amplitude, .. } => {
                let s: f64 = grid
                    .extents()
                    .iter()
                    .map(|e| (PI / e.length()).powi(2))
                    .sum::<f64>()
                    .sqrt();
                amplitude.abs() * s
            }
        }
    }

    pub fn sup(&self, grid: &GridDomain) -> f64 {
        self.sample(grid).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// `prod_i sin(pi (x_i - lo_i) / L_i)` over the grid's axes.
pub fn sine_bump(grid: &GridDomain, x: f64, y: f64) -> f64 {
    let e = grid.extents();
    let mut v = (PI * (x - e[0].lo) / e[0].length()).sin();
    if grid.dim() == 2 {
        v *= (PI * (y - e[1].lo) / e[1].length()).sin();
    }
    v
}
