//! Numerical laboratory for the degenerate viscous Hamilton-Jacobi equation
//!
//! ```text
//! u_t - div(|∇u|^(p-2) ∇u) = |∇u|^q   in Ω × (0, T),   u = g on ∂Ω
//! ```
//!
//! with `p > 2`, `q > p - 1`. The solver integrates the uniformly parabolic
//! regularization (`|∇u|² → |∇u|² + ε`) with explicit steps and detects
//! gradient blow-up; the remaining modules check the qualitative properties
//! of solutions (maximum and comparison principles, the one-sided `u_t`
//! bound, the boundary gradient profile, barrier constructions and the
//! eigenfunction blow-up criterion) on computed trajectories.

pub mod analysis;
pub mod barriers;
pub mod error;
pub mod fieldio;
pub mod grid;
pub mod pde;
pub mod profiles;
pub mod spectral;
pub mod stepper;

pub use error::{LabError, Result};
pub use grid::{boundary_distance, Extent, GridDomain};
pub use pde::{ProblemSpec, SolutionState, Trajectory};
pub use profiles::Profile;
pub use stepper::{run, RunReport, StepControl, Verdict};
