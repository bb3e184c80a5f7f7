//! Galerkin finite element solver for the time-fractional nonlinear
//! diffusion equation
//!
//! ```text
//!     ∂ᵅu/∂tᵅ − Δu = f(u)   in Ω × (0, T],    0 < α < 1,
//!            u = 0          on ∂Ω,
//!       u(·, 0) = 0         in Ω,
//! ```
//!
//! where ∂ᵅ/∂tᵅ is the Caputo derivative (equal to the Riemann-Liouville
//! derivative here because the initial value vanishes). Time is discretized
//! by a fractional Crank-Nicolson scheme built on backward Euler convolution
//! quadrature: the Grünwald-Letnikov sum evaluated at shifted points
//! t_{n−α/2} paired with the weighted state (1−α/2)Uⁿ + (α/2)Uⁿ⁻¹, which is
//! second-order accurate in Δt for compatible solutions. Space is discretized
//! by piecewise-linear (P1) elements on uniform interval meshes in 1D and
//! structured right-triangle meshes of the unit square in 2D. The nonlinear
//! system at each step is solved by Newton's method with a banded direct
//! linear solver.
//!
//! Module map:
//!
//! * [`quadrature`] — convolution-quadrature weights, the discrete
//!   fractional operator, and the Mittag-Leffler function.
//! * [`mesh`] — structured meshes and reference-element quadrature rules.
//! * [`assembly`] — sparse mass/stiffness/Jacobian assembly.
//! * [`stepper`] — the implicit time loop with per-step Newton solves.
//! * [`problems`] — built-in benchmark problems with manufactured sources.
//! * [`harness`] — convergence studies, error norms, CSV reports, and the
//!   self-check suite behind `fraccn verify`.
//!
//! With the default `parallel` feature the convergence-study driver runs
//! independent grid points on a rayon pool; without it everything is
//! sequential. A single simulation is always sequential in time.

pub mod assembly;
pub mod harness;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod stepper;

/// Unified error type for solver and harness operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Precondition violation on user-supplied input.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Newton's method hit the iteration cap.
    #[error("newton did not converge: residual {residual:.3e} after {iters} iterations")]
    NonConvergence { iters: usize, residual: f64 },
    /// A pivot in the direct linear solve fell below the singularity threshold.
    #[error("singular jacobian: pivot {pivot:.3e} below {threshold:.3e}")]
    SingularJacobian { pivot: f64, threshold: f64 },
    /// A user-supplied function returned NaN or infinity.
    #[error("non-finite value from {what} at {location}")]
    NonFinite { what: String, location: String },
    /// Series evaluation exceeded its term cap without meeting the stopping rule.
    #[error("series did not converge within {0} terms")]
    SeriesNonConvergence(usize),
    /// A time step failed; wraps the underlying solver error.
    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    /// A convergence-study grid point failed; wraps the underlying error.
    #[error("grid point (h={h:.6e}, dt={dt:.6e}) failed: {source}")]
    GridPointFailed {
        h: f64,
        dt: f64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
