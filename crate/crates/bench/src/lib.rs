//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use gbulab_core::{GridDomain, ProblemSpec, Profile};

/// `u₀ = A sin(πx)` (or its 2D product) with zero boundary data.
pub fn sine_problem(dim: usize, n: usize, p: f64, q: f64, amplitude: f64) -> ProblemSpec {
    let grid = if dim == 1 {
        GridDomain::unit_interval(n)
    } else {
        GridDomain::unit_square(n)
    };
    let grid = Arc::new(grid.expect("valid grid"));
    let u0 = Profile::Sine { amplitude }.sample(&grid);
    let g = vec![0.0; grid.len()];
    ProblemSpec::new(grid, p, q, u0, g)
        .and_then(|s| s.with_eps(1e-6))
        .expect("valid problem")
}
