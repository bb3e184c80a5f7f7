//! Backward Euler convolution quadrature for the Riemann-Liouville
//! fractional derivative.
//!
//! The derivative of order α ∈ (0, 1) is approximated by the
//! Grünwald-Letnikov sum
//!
//! ```text
//!     D^α_Δt u(tₙ) = Δt^{−α} Σ_{i=0}^{n} w_{n−i} u(tᵢ),
//! ```
//!
//! where the weights are the coefficients of (1 − ξ)^α. Evaluated at the
//! shifted point t_{n−α/2} the sum is second-order accurate in Δt for
//! solutions with u(0) = u′(0) = u″(0) = 0; at tₙ itself it is first order.
//!
//! Besides the weights wᵢ the solver needs their partial sums
//! gᵢ = Σ_{j≤i} wⱼ (the increment form of the operator) and the
//! complementary sequence φₙ that inverts the weight convolution,
//! φₙ = (−1)ⁿ C(−α, n). All three are bundled in a [`WeightTable`].

use crate::{Error, Result};

/// Fractional order α, validated to lie in (0, 1].
///
/// The solver theory covers α < 1; α = 1 is admitted because the scheme then
/// collapses to classical Crank-Nicolson, which the regression tests exploit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha > 1.0 {
            return Err(Error::InvalidInput(format!(
                "fractional order must lie in (0, 1], got {alpha}"
            )));
        }
        Ok(Self(alpha))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for FractionalOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Precomputed convolution-quadrature weights and derived sequences for one
/// order α and time horizon.
///
/// Immutable after construction; safe to share across concurrent runs.
#[derive(Debug, Clone)]
pub struct WeightTable {
    alpha: FractionalOrder,
    /// Grünwald-Letnikov weights w₀..w_{n_max}; w₀ = 1, wᵢ < 0 for i ≥ 1.
    w: Vec<f64>,
    /// Partial sums gᵢ = Σ_{j≤i} wⱼ; positive and strictly decreasing.
    g: Vec<f64>,
    /// Complementary sequence φₙ = (−1)ⁿ C(−α, n).
    phi: Vec<f64>,
}

impl WeightTable {
    #[inline]
    pub fn alpha(&self) -> FractionalOrder {
        self.alpha
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.w.len() - 1
    }

    #[inline]
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    #[inline]
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    #[inline]
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }
}

/// Builds the weight table for `alpha` covering time indices 0..=n_max.
///
/// Weights follow the recursion w₀ = 1, wᵢ = (1 − (α+1)/i) w_{i−1}, which is
/// stable for arbitrarily large i; the equivalent gamma-ratio form overflows
/// and is kept only as a small-index cross-check in the tests.
pub fn gl_weights(alpha: FractionalOrder, n_max: usize) -> WeightTable {
    let a = alpha.value();
    let mut w = Vec::with_capacity(n_max + 1);
    let mut g = Vec::with_capacity(n_max + 1);
    w.push(1.0);
    g.push(1.0);
    for i in 1..=n_max {
        let wi = (1.0 - (a + 1.0) / i as f64) * w[i - 1];
        w.push(wi);
        g.push(g[i - 1] + wi);
    }
    let phi = phi_from_partial_sums(&g);
    WeightTable { alpha, w, g, phi }
}

/// The complementary sequence via its defining convolution recursion,
/// φ₀ = 1, φₙ = Σ_{i=1}^{n} (g_{i−1} − gᵢ) φ_{n−i}.
///
/// O(n²) but exact to rounding; the closed binomial form is used only as a
/// test oracle because its products lose accuracy for large n.
pub fn phi_sequence(alpha: FractionalOrder, n_max: usize) -> Vec<f64> {
    gl_weights(alpha, n_max).phi
}

fn phi_from_partial_sums(g: &[f64]) -> Vec<f64> {
    let n_max = g.len() - 1;
    let mut phi = vec![0.0; n_max + 1];
    phi[0] = 1.0;
    for n in 1..=n_max {
        let mut acc = 0.0;
        for i in 1..=n {
            acc += (g[i - 1] - g[i]) * phi[n - i];
        }
        phi[n] = acc;
    }
    phi
}

fn check_history(history: &[Vec<f64>], table: &WeightTable, dt: f64) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::InvalidInput("empty history".into()));
    }
    if history.len() > table.n_max() + 1 {
        return Err(Error::InvalidInput(format!(
            "history length {} exceeds weight table horizon {}",
            history.len(),
            table.n_max() + 1
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let dim = history[0].len();
    if history.iter().any(|u| u.len() != dim) {
        return Err(Error::InvalidInput(
            "history vectors have mismatched dimensions".into(),
        ));
    }
    Ok(dim)
}

/// Applies the discrete fractional operator to a history u⁰..uⁿ:
/// Δt^{−α} Σ_{i=0}^{n} w_{n−i} uⁱ, componentwise.
pub fn discrete_frac_deriv(
    history: &[Vec<f64>],
    table: &WeightTable,
    dt: f64,
) -> Result<Vec<f64>> {
    let dim = check_history(history, table, dt)?;
    let n = history.len() - 1;
    let scale = dt.powf(-table.alpha.value());
    let mut out = vec![0.0; dim];
    for (i, u) in history.iter().enumerate() {
        let wi = table.w[n - i];
        for (o, &v) in out.iter_mut().zip(u) {
            *o += wi * v;
        }
    }
    for o in &mut out {
        *o *= scale;
    }
    Ok(out)
}

/// Increment form of the discrete operator, valid when u⁰ = 0:
/// Δt^{−α} Σ_{i=1}^{n} g_{n−i} (uⁱ − u^{i−1}).
///
/// Algebraically identical to [`discrete_frac_deriv`] on such histories.
pub fn discrete_frac_deriv_delta(
    history: &[Vec<f64>],
    table: &WeightTable,
    dt: f64,
) -> Result<Vec<f64>> {
    let dim = check_history(history, table, dt)?;
    if history[0].iter().any(|&v| v != 0.0) {
        return Err(Error::InvalidInput(
            "increment form requires a zero initial entry".into(),
        ));
    }
    let n = history.len() - 1;
    let scale = dt.powf(-table.alpha.value());
    let mut out = vec![0.0; dim];
    for i in 1..=n {
        let gi = table.g[n - i];
        for ((o, &cur), &prev) in out.iter_mut().zip(&history[i]).zip(&history[i - 1]) {
            *o += gi * (cur - prev);
        }
    }
    for o in &mut out {
        *o *= scale;
    }
    Ok(out)
}

/// Default term cap for the Mittag-Leffler series.
pub const MITTAG_LEFFLER_TERM_CAP: usize = 10_000;

/// One-parameter Mittag-Leffler function E_α(z) = Σ_j z^j / Γ(1 + jα) for
/// real z ∈ [0, 50], by direct series summation.
///
/// Terms are added until the next term drops below 1e−14 of the partial sum.
pub fn mittag_leffler(alpha: FractionalOrder, z: f64) -> Result<f64> {
    mittag_leffler_with_cap(alpha, z, MITTAG_LEFFLER_TERM_CAP)
}

/// [`mittag_leffler`] with an explicit term cap.
pub fn mittag_leffler_with_cap(alpha: FractionalOrder, z: f64, cap: usize) -> Result<f64> {
    if !z.is_finite() || z < 0.0 || z > 50.0 {
        return Err(Error::InvalidInput(format!(
            "mittag-leffler argument must lie in [0, 50], got {z}"
        )));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    let a = alpha.value();
    let ln_z = z.ln();
    let mut sum = 1.0; // j = 0 term
    for j in 1..=cap {
        let term = (j as f64 * ln_z - libm::lgamma(1.0 + j as f64 * a)).exp();
        sum += term;
        if term < 1e-14 * sum {
            return Ok(sum);
        }
    }
    Err(Error::SeriesNonConvergence(cap))
}
