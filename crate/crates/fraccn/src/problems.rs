//! Built-in benchmark problems: nonlinearity, derivative, manufactured
//! source, and (when known) the exact solution.
//!
//! The manufactured sources are implemented exactly as printed for their
//! exact solutions; the self-check suite validates them against a numerical
//! Caputo-derivative oracle instead of trusting the algebra.

use std::f64::consts::PI;

use crate::mesh::Point;
use crate::quadrature::FractionalOrder;
use crate::{Error, Result};

type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;
type FieldFn = Box<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// Data for one problem instance: ∂ᵅu/∂tᵅ − Δu = f(u) + g(x, t) with
/// homogeneous Dirichlet boundary values and zero initial state.
///
/// All function fields are pure; a `ProblemSpec` is safe to share across
/// concurrently running simulations.
pub struct ProblemSpec {
    pub name: &'static str,
    pub dim: usize,
    pub alpha: FractionalOrder,
    pub f: ScalarFn,
    pub f_prime: ScalarFn,
    pub g: FieldFn,
    pub exact: Option<FieldFn>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("alpha", &self.alpha)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

/// Names accepted by [`by_name`], in CLI order.
pub const PROBLEM_NAMES: [&str; 3] = ["fisher1d", "huxley2d", "nonsmooth1d"];

/// Looks a problem up by its CLI name.
pub fn by_name(name: &str, alpha: FractionalOrder) -> Result<ProblemSpec> {
    match name {
        "fisher1d" => Ok(fisher_1d(alpha)),
        "huxley2d" => Ok(huxley_2d(alpha)),
        "nonsmooth1d" => Ok(nonsmooth_1d(alpha)),
        other => Err(Error::InvalidInput(format!(
            "unknown problem '{other}' (expected one of {:?})",
            PROBLEM_NAMES
        ))),
    }
}

/// One-dimensional time-fractional Fisher equation with logistic reaction
/// f(u) = u(1−u), manufactured so that u = t⁴ sin(2πx).
pub fn fisher_1d(alpha: FractionalOrder) -> ProblemSpec {
    let a = alpha.value();
    let caputo_coeff = 24.0 / libm::tgamma(5.0 - a);
    ProblemSpec {
        name: "fisher1d",
        dim: 1,
        alpha,
        f: Box::new(|u| u * (1.0 - u)),
        f_prime: Box::new(|u| 1.0 - 2.0 * u),
        g: Box::new(move |x, t| {
            let s = (2.0 * PI * x[0]).sin();
            let u = t.powi(4) * s;
            caputo_coeff * t.powf(4.0 - a) * s + 4.0 * PI * PI * t.powi(4) * s - u * (1.0 - u)
        }),
        exact: Some(Box::new(|x, t| t.powi(4) * (2.0 * PI * x[0]).sin())),
    }
}

/// Two-dimensional time-fractional Huxley equation with cubic reaction
/// f(u) = u(1−u)(u−1), manufactured so that
/// u = t³ (1−x₁) sin(x₁) (1−x₂) sin(x₂).
pub fn huxley_2d(alpha: FractionalOrder) -> ProblemSpec {
    let a = alpha.value();
    let caputo_coeff = 6.0 / libm::tgamma(4.0 - a);
    let spatial = |x: Point| (1.0 - x[0]) * x[0].sin() * (1.0 - x[1]) * x[1].sin();
    ProblemSpec {
        name: "huxley2d",
        dim: 2,
        alpha,
        f: Box::new(|u| u * (1.0 - u) * (u - 1.0)),
        f_prime: Box::new(|u| {
            let one_minus = 1.0 - u;
            -one_minus * one_minus + 2.0 * u * one_minus
        }),
        g: Box::new(move |x, t| {
            let sp = spatial(x);
            let u = t.powi(3) * sp;
            let diffusion = 2.0
                * t.powi(3)
                * (sp
                    + x[0].cos() * (1.0 - x[1]) * x[1].sin()
                    + (1.0 - x[0]) * x[0].sin() * x[1].cos());
            caputo_coeff * t.powf(3.0 - a) * sp + diffusion + u * (u - 1.0) * (u - 1.0)
        }),
        exact: Some(Box::new(move |x, t| t.powi(3) * spatial(x))),
    }
}

/// One-dimensional problem with f(u) = 5 + u(1 + u³), no source, and no
/// known exact solution. Its solution lacks the compatibility needed for
/// second-order time accuracy, so studies run against a fine reference
/// solution and exhibit first-order temporal rates.
pub fn nonsmooth_1d(alpha: FractionalOrder) -> ProblemSpec {
    ProblemSpec {
        name: "nonsmooth1d",
        dim: 1,
        alpha,
        f: Box::new(|u| 5.0 + u * (1.0 + u * u * u)),
        f_prime: Box::new(|u| 1.0 + 4.0 * u * u * u),
        g: Box::new(|_, _| 0.0),
        exact: None,
    }
}
