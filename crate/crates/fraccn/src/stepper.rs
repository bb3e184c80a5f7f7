//! Implicit time stepping for the fractional Crank-Nicolson scheme.
//!
//! At step n the scheme seeks interior coefficients βⁿ with
//!
//! ```text
//!   H(βⁿ) = Δt^{−α} M βⁿ + (1−α/2) K βⁿ + (α/2) K βⁿ⁻¹
//!           − load(f at U^{n,α}) − source(g at t_{n−α/2})
//!           + Δt^{−α} Σ_{j=1}^{n−1} w_{n−j} M βʲ  = 0,
//! ```
//!
//! where U^{n,α} = (1−α/2)Uⁿ + (α/2)Uⁿ⁻¹ and the source is evaluated at the
//! shifted time t_{n−α/2}, the point where the convolution quadrature is
//! second-order consistent. Each step is solved by Newton's method with the
//! analytic Jacobian and a direct banded linear solve; the initial guess is
//! the previous step's state.

use crate::assembly::{
    assemble_jacobian, assemble_mass, assemble_nonlinear_load, assemble_source,
    assemble_stiffness, SparseMatrix, StateVector,
};
use crate::mesh::{reference_quadrature, Mesh, QuadratureRule};
use crate::problems::ProblemSpec;
use crate::quadrature::{gl_weights, FractionalOrder, WeightTable};
use crate::{Error, Result};

/// Pivot threshold factor for the direct solvers: a pivot whose magnitude
/// falls below this multiple of the original row magnitude is singular.
const PIVOT_RTOL: f64 = 1e-14;

/// Time-stepping parameters for one simulation. Final time is dt·n_steps.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub alpha: FractionalOrder,
    pub dt: f64,
    pub n_steps: usize,
    /// RMS tolerance applied to both the residual and the Newton correction.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// When set, every Newton iterate cross-checks the analytic Jacobian
    /// against finite differences of the residual and panics on mismatch.
    pub fd_jacobian_check: bool,
    /// Quadrature exactness for the nonlinear load and source integrals;
    /// defaults to 5 in 1D and 4 in 2D.
    pub load_quad_degree: Option<usize>,
}

impl SolverConfig {
    pub fn new(alpha: FractionalOrder, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidInput("need at least one time step".into()));
        }
        Ok(Self {
            alpha,
            dt,
            n_steps,
            newton_tol: 1e-7,
            newton_max_iter: 25,
            fd_jacobian_check: false,
            load_quad_degree: None,
        })
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

/// Default quadrature for the right-side integrals (reaction plus source):
/// the one-point midpoint/centroid rule. The pinned reference tables assume
/// single-point right-side quadrature; the consistency error it adds is
/// O(h²), so convergence rates are unchanged. Override through
/// `load_quad_degree` to integrate the polynomial reactions exactly
/// (degree 5 in 1D, 4 in 2D).
pub fn default_load_degree(_dim: usize) -> usize {
    1
}

/// States U⁰..Uⁿ accumulated by a simulation, plus the Newton iteration
/// count that produced each accepted step. The initial entry is zero.
#[derive(Debug, Clone)]
pub struct History {
    states: Vec<StateVector>,
    newton_iters: Vec<usize>,
}

impl History {
    fn with_zero_initial(n_dofs: usize) -> Self {
        Self {
            states: vec![StateVector::zeros(n_dofs, 0)],
            newton_iters: Vec::new(),
        }
    }

    #[inline]
    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    #[inline]
    pub fn last(&self) -> &StateVector {
        self.states.last().expect("history never empty")
    }

    /// Newton iterations per accepted step (index 0 ↔ step 1).
    #[inline]
    pub fn newton_iters(&self) -> &[usize] {
        &self.newton_iters
    }

    pub fn max_newton_iters(&self) -> usize {
        self.newton_iters.iter().copied().max().unwrap_or(0)
    }
}

/// Immutable per-simulation context shared by residual, Jacobian, and the
/// time loop.
pub struct StepSystem<'a> {
    pub mesh: &'a Mesh,
    pub mass: &'a SparseMatrix,
    pub stiffness: &'a SparseMatrix,
    pub problem: &'a ProblemSpec,
    pub table: &'a WeightTable,
    pub config: &'a SolverConfig,
    load_rule: QuadratureRule,
}

impl<'a> StepSystem<'a> {
    pub fn new(
        mesh: &'a Mesh,
        mass: &'a SparseMatrix,
        stiffness: &'a SparseMatrix,
        problem: &'a ProblemSpec,
        table: &'a WeightTable,
        config: &'a SolverConfig,
    ) -> Result<Self> {
        if mesh.dim() != problem.dim {
            return Err(Error::InvalidInput(format!(
                "problem '{}' is {}-dimensional but the mesh is {}-dimensional",
                problem.name, problem.dim, mesh.dim()
            )));
        }
        if problem.alpha != config.alpha {
            return Err(Error::InvalidInput(
                "problem and solver configured with different fractional orders".into(),
            ));
        }
        if table.n_max() < config.n_steps {
            return Err(Error::InvalidInput(format!(
                "weight table horizon {} shorter than {} steps",
                table.n_max(),
                config.n_steps
            )));
        }
        let degree = config
            .load_quad_degree
            .unwrap_or_else(|| default_load_degree(mesh.dim()));
        let load_rule = reference_quadrature(mesh.dim(), degree)?;
        Ok(Self {
            mesh,
            mass,
            stiffness,
            problem,
            table,
            config,
            load_rule,
        })
    }

    pub fn load_rule(&self) -> &QuadratureRule {
        &self.load_rule
    }

    /// Shifted evaluation time t_{n−α/2} for step n.
    pub fn shifted_time(&self, n: usize) -> f64 {
        (n as f64 - self.config.alpha.value() / 2.0) * self.config.dt
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Combined state U^{n,α} = (1−α/2)βⁿ + (α/2)βⁿ⁻¹ as interior coefficients.
fn combined_state(alpha: f64, beta: &[f64], prev: &[f64]) -> Vec<f64> {
    beta.iter()
        .zip(prev)
        .map(|(&b, &p)| (1.0 - alpha / 2.0) * b + alpha / 2.0 * p)
        .collect()
}

/// Residual H(β) of the step implied by `history` (entries 0..n−1 present,
/// so the step index is `history.len()`).
pub fn residual(beta: &[f64], history: &[StateVector], sys: &StepSystem) -> Result<Vec<f64>> {
    let n = history.len();
    assert!(n >= 1, "history must contain the initial state");
    let a = sys.config.alpha.value();
    let dt = sys.config.dt;
    let scale = dt.powf(-a);
    let prev = &history[n - 1].coeffs;

    let combo = combined_state(a, beta, prev);
    let load = assemble_nonlinear_load(sys.mesh, &combo, &*sys.problem.f, &sys.load_rule)?;
    let source = assemble_source(sys.mesh, &*sys.problem.g, sys.shifted_time(n), &sys.load_rule)?;

    let m_beta = sys.mass.mul_vec(beta);
    let k_beta = sys.stiffness.mul_vec(beta);
    let k_prev = sys.stiffness.mul_vec(prev);
    let hist = history_term(history, sys);

    let mut out = vec![0.0; beta.len()];
    for i in 0..out.len() {
        out[i] = scale * m_beta[i] + (1.0 - a / 2.0) * k_beta[i] + a / 2.0 * k_prev[i]
            - load[i]
            - source[i]
            + hist[i];
    }
    Ok(out)
}

/// Convolution tail Δt^{−α} Σ_{j=1}^{n−1} w_{n−j} M βʲ; independent of the
/// current iterate, so the time loop computes it once per step.
fn history_term(history: &[StateVector], sys: &StepSystem) -> Vec<f64> {
    let n = history.len();
    let dofs = history[0].coeffs.len();
    let mut acc = vec![0.0; dofs];
    for (j, state) in history.iter().enumerate().skip(1) {
        let w = sys.table.w()[n - j];
        for (s, &c) in acc.iter_mut().zip(&state.coeffs) {
            *s += w * c;
        }
    }
    let scale = sys.config.dt.powf(-sys.config.alpha.value());
    let mut out = sys.mass.mul_vec(&acc);
    for v in &mut out {
        *v *= scale;
    }
    out
}

/// Converged Newton state plus iteration diagnostics.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub state: Vec<f64>,
    pub iters: usize,
    /// RMS residual norm observed at the start of each iteration, including
    /// the final converged value.
    pub residual_norms: Vec<f64>,
}

/// Newton iteration for one step: β ← β − J⁻¹H(β) until both the RMS
/// residual and the RMS correction fall below the configured tolerance.
pub fn newton_solve(
    initial_guess: &[f64],
    history: &[StateVector],
    sys: &StepSystem,
) -> Result<NewtonOutcome> {
    if initial_guess.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite initial guess".into()));
    }
    let a = sys.config.alpha.value();
    let tol = sys.config.newton_tol;
    let prev = &history[history.len() - 1].coeffs;

    let mut beta = initial_guess.to_vec();
    let mut iters = 0usize;
    let mut residual_norms = Vec::new();
    loop {
        let h = residual(&beta, history, sys)?;
        let res_norm = rms(&h);
        residual_norms.push(res_norm);

        let combo = combined_state(a, &beta, prev);
        let jac = assemble_jacobian(
            sys.mass,
            sys.stiffness,
            sys.mesh,
            &combo,
            &*sys.problem.f_prime,
            sys.config.alpha,
            sys.config.dt,
            &sys.load_rule,
        )?;
        if sys.config.fd_jacobian_check {
            fd_jacobian_assert(&jac, &beta, history, sys);
        }
        let delta = linear_solve(&jac, &h)?;
        if res_norm < tol && rms(&delta) < tol {
            return Ok(NewtonOutcome {
                state: beta,
                iters,
                residual_norms,
            });
        }
        if iters >= sys.config.newton_max_iter {
            return Err(Error::NonConvergence {
                iters,
                residual: res_norm,
            });
        }
        for (b, d) in beta.iter_mut().zip(&delta) {
            *b -= d;
        }
        iters += 1;
    }
}

/// Debug cross-check of the analytic Jacobian against central differences
/// of the residual. Panics on disagreement; enabled by
/// [`SolverConfig::fd_jacobian_check`].
fn fd_jacobian_assert(jac: &SparseMatrix, beta: &[f64], history: &[StateVector], sys: &StepSystem) {
    let fd = fd_jacobian(beta, history, sys, 1e-7).expect("residual evaluation in fd check");
    let scale = jac
        .values()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-30);
    let mut worst = 0.0f64;
    for row in 0..jac.n() {
        for col in 0..jac.n() {
            worst = worst.max((jac.get(row, col) - fd[row][col]).abs());
        }
    }
    assert!(
        worst / scale < 1e-5,
        "jacobian finite-difference check failed: max deviation {worst:.3e} vs scale {scale:.3e}"
    );
}

/// Dense central-difference Jacobian of the residual; test/debug utility.
pub fn fd_jacobian(
    beta: &[f64],
    history: &[StateVector],
    sys: &StepSystem,
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = beta.len();
    let mut out = vec![vec![0.0; n]; n];
    let mut probe = beta.to_vec();
    for col in 0..n {
        probe[col] = beta[col] + step;
        let plus = residual(&probe, history, sys)?;
        probe[col] = beta[col] - step;
        let minus = residual(&probe, history, sys)?;
        probe[col] = beta[col];
        for row in 0..n {
            out[row][col] = (plus[row] - minus[row]) / (2.0 * step);
        }
    }
    Ok(out)
}

/// Direct solve Jx = rhs. Tridiagonal systems use Thomas elimination;
/// wider bands use banded LDLᵀ when the matrix is symmetric (the scheme's
/// Jacobians always are) and banded LU with partial pivoting otherwise.
/// Every path reports a singular matrix when a pivot falls below 1e−14 of
/// its row magnitude.
pub fn linear_solve(jac: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if jac.n() != rhs.len() {
        return Err(Error::InvalidInput(format!(
            "matrix dimension {} does not match rhs length {}",
            jac.n(),
            rhs.len()
        )));
    }
    let mut bw = 0usize;
    let mut max_abs = 0.0f64;
    for row in 0..jac.n() {
        for k in jac.row_ptr()[row]..jac.row_ptr()[row + 1] {
            bw = bw.max(row.abs_diff(jac.col_idx()[k]));
            max_abs = max_abs.max(jac.values()[k].abs());
        }
    }
    if bw <= 1 {
        solve_tridiagonal(jac, rhs)
    } else if jac.asymmetry() <= 1e-12 * max_abs {
        solve_banded_ldlt(jac, rhs, bw)
    } else {
        solve_banded_lu(jac, rhs, bw)
    }
}

fn row_scale(jac: &SparseMatrix, row: usize) -> f64 {
    jac.values()[jac.row_ptr()[row]..jac.row_ptr()[row + 1]]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

fn singular(pivot: f64, threshold: f64) -> Error {
    Error::SingularJacobian { pivot, threshold }
}

/// Thomas elimination for tridiagonal systems, with a per-row pivot check.
fn solve_tridiagonal(jac: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = jac.n();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for row in 0..n {
        for k in jac.row_ptr()[row]..jac.row_ptr()[row + 1] {
            let col = jac.col_idx()[k];
            let v = jac.values()[k];
            if col + 1 == row {
                lower[row] = v;
            } else if col == row {
                diag[row] = v;
            } else if col == row + 1 {
                upper[row] = v;
            }
        }
    }
    let mut x = rhs.to_vec();
    for row in 0..n {
        if row > 0 {
            let threshold = PIVOT_RTOL * row_scale(jac, row - 1);
            let pivot = diag[row - 1];
            if pivot.abs() <= threshold || pivot == 0.0 {
                return Err(singular(pivot, threshold));
            }
            let factor = lower[row] / pivot;
            diag[row] -= factor * upper[row - 1];
            x[row] -= factor * x[row - 1];
        }
    }
    let threshold = PIVOT_RTOL * row_scale(jac, n - 1);
    if diag[n - 1].abs() <= threshold || diag[n - 1] == 0.0 {
        return Err(singular(diag[n - 1], threshold));
    }
    x[n - 1] /= diag[n - 1];
    for row in (0..n - 1).rev() {
        x[row] = (x[row] - upper[row] * x[row + 1]) / diag[row];
    }
    Ok(x)
}

/// Banded LDLᵀ without pivoting for symmetric matrices: lower band stored
/// column-major, right-looking trailing updates, O(n·bw²/2) work and
/// (bw+1)·n storage. Diagonal pivots may be negative (symmetric indefinite)
/// but not vanishing.
fn solve_banded_ldlt(jac: &SparseMatrix, rhs: &[f64], bw: usize) -> Result<Vec<f64>> {
    let n = jac.n();
    let width = bw + 1;
    // band[j*width + r] = A_{j+r, j} for r = 0..=bw.
    let mut band = vec![0.0f64; n * width];
    for row in 0..n {
        for k in jac.row_ptr()[row]..jac.row_ptr()[row + 1] {
            let col = jac.col_idx()[k];
            if row >= col {
                band[col * width + (row - col)] = jac.values()[k];
            }
        }
    }
    for j in 0..n {
        let d = band[j * width];
        let threshold = PIVOT_RTOL * row_scale(jac, j);
        if d.abs() <= threshold || d == 0.0 {
            return Err(singular(d, threshold));
        }
        let reach = bw.min(n - 1 - j);
        // Trailing update: A_{i,k} -= A_{i,j} A_{k,j} / d for j < k <= i.
        for c in 1..=reach {
            let factor = band[j * width + c] / d;
            if factor != 0.0 {
                let (head, tail) = band.split_at_mut((j + c) * width);
                let src = &head[j * width + c..j * width + reach + 1];
                for (t, s) in tail[..reach + 1 - c].iter_mut().zip(src) {
                    *t -= factor * s;
                }
            }
        }
    }
    // Forward substitution with unit-lower L (L_{j+r,j} = band[j,r]/d_j).
    let mut x = rhs.to_vec();
    for j in 0..n {
        let d = band[j * width];
        let zj = x[j];
        let reach = bw.min(n - 1 - j);
        for r in 1..=reach {
            x[j + r] -= band[j * width + r] / d * zj;
        }
    }
    // Diagonal scale, then backward substitution with Lᵀ.
    for j in 0..n {
        x[j] /= band[j * width];
    }
    for j in (0..n).rev() {
        let d = band[j * width];
        let reach = bw.min(n - 1 - j);
        let mut acc = x[j];
        for r in 1..=reach {
            acc -= band[j * width + r] / d * x[j + r];
        }
        x[j] = acc;
    }
    Ok(x)
}

/// Banded LU with partial pivoting for non-symmetric matrices. Fill from
/// row swaps widens the upper band to 2·bw, so storage covers offsets
/// −bw..=2·bw per row.
fn solve_banded_lu(jac: &SparseMatrix, rhs: &[f64], bw: usize) -> Result<Vec<f64>> {
    let n = jac.n();
    let width = 3 * bw + 1;
    let mut band = vec![0.0f64; n * width];
    let at = |row: usize, col: usize| -> usize {
        debug_assert!(col + bw >= row && col <= row + 2 * bw);
        row * width + (col + bw - row)
    };
    for row in 0..n {
        for k in jac.row_ptr()[row]..jac.row_ptr()[row + 1] {
            band[at(row, jac.col_idx()[k])] = jac.values()[k];
        }
    }
    // Original row magnitude per storage slot, tracked through swaps.
    let mut scale: Vec<f64> = (0..n).map(|r| row_scale(jac, r)).collect();
    let mut x = rhs.to_vec();

    for col in 0..n {
        let last_row = (col + bw).min(n - 1);
        let mut pivot_row = col;
        let mut pivot_val = band[at(col, col)];
        for r in col + 1..=last_row {
            let v = band[at(r, col)];
            if v.abs() > pivot_val.abs() {
                pivot_val = v;
                pivot_row = r;
            }
        }
        let threshold = PIVOT_RTOL * scale[pivot_row];
        if pivot_val.abs() <= threshold || pivot_val == 0.0 {
            return Err(singular(pivot_val, threshold));
        }
        if pivot_row != col {
            let hi = (col + 2 * bw).min(n - 1);
            for c in col..=hi {
                band.swap(at(col, c), at(pivot_row, c));
            }
            scale.swap(col, pivot_row);
            x.swap(col, pivot_row);
        }
        let hi = (col + 2 * bw).min(n - 1);
        for r in col + 1..=last_row {
            let factor = band[at(r, col)] / pivot_val;
            if factor != 0.0 {
                for c in col..=hi {
                    band[at(r, c)] -= factor * band[at(col, c)];
                }
                x[r] -= factor * x[col];
            }
        }
    }
    for row in (0..n).rev() {
        let hi = (row + 2 * bw).min(n - 1);
        let mut acc = x[row];
        for c in row + 1..=hi {
            acc -= band[at(row, c)] * x[c];
        }
        x[row] = acc / band[at(row, row)];
    }
    Ok(x)
}

/// Runs the full simulation: n_steps implicit steps from the zero initial
/// state, each warm-started from the previous state.
pub fn run_simulation(mesh: &Mesh, problem: &ProblemSpec, config: &SolverConfig) -> Result<History> {
    let mass = assemble_mass(mesh);
    let stiffness = assemble_stiffness(mesh);
    let table = gl_weights(config.alpha, config.n_steps);
    let sys = StepSystem::new(mesh, &mass, &stiffness, problem, &table, config)?;
    let mut history = History::with_zero_initial(mesh.n_interior());
    for n in 1..=config.n_steps {
        let outcome = newton_solve(&history.last().coeffs, history.states(), &sys)
            .map_err(|e| Error::StepFailed {
                step: n,
                source: Box::new(e),
            })?;
        let state = StateVector {
            coeffs: outcome.state,
            time_index: n,
        };
        if !state.all_finite() {
            return Err(Error::StepFailed {
                step: n,
                source: Box::new(Error::NonFinite {
                    what: "state vector".into(),
                    location: format!("step {n}"),
                }),
            });
        }
        history.states.push(state);
        history.newton_iters.push(outcome.iters);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh_1d, build_mesh_2d};
    use crate::problems::{fisher_1d, nonsmooth_1d, ProblemSpec};
    use crate::quadrature::{discrete_frac_deriv, gl_weights};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn order(a: f64) -> FractionalOrder {
        FractionalOrder::new(a).unwrap()
    }

    /// Linear homogeneous problem: f ≡ 0, g ≡ 0.
    fn zero_problem(dim: usize, alpha: FractionalOrder) -> ProblemSpec {
        ProblemSpec {
            name: "zero",
            dim,
            alpha,
            f: Box::new(|_| 0.0),
            f_prime: Box::new(|_| 0.0),
            g: Box::new(|_, _| 0.0),
            exact: None,
        }
    }

    fn history_from(states: Vec<Vec<f64>>) -> Vec<StateVector> {
        states
            .into_iter()
            .enumerate()
            .map(|(i, coeffs)| StateVector { coeffs, time_index: i })
            .collect()
    }

    #[test]
    fn residual_zero_state_zero_problem() {
        let mesh = build_mesh_1d(4).unwrap();
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        let alpha = order(0.5);
        let config = SolverConfig::new(alpha, 0.25, 4).unwrap();
        let table = gl_weights(alpha, 4);
        let problem = zero_problem(1, alpha);
        let sys = StepSystem::new(&mesh, &mass, &stiffness, &problem, &table, &config).unwrap();
        let history = history_from(vec![vec![0.0; 3]]);
        let h = residual(&[0.0; 3], &history, &sys).unwrap();
        assert_eq!(h, vec![0.0; 3]);
    }

    #[test]
    fn first_step_linear_reduces_to_single_solve() {
        // With f ≡ 0 and empty history tail, H(β) = (Δt^{−α}M + (1−α/2)K)β − source.
        let mesh = build_mesh_1d(8).unwrap();
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        let alpha = order(0.4);
        let config = SolverConfig::new(alpha, 0.125, 8).unwrap();
        let table = gl_weights(alpha, 8);
        let mut problem = zero_problem(1, alpha);
        problem.g = Box::new(|x, t| (x[0] * std::f64::consts::PI).sin() * (1.0 + t));
        let sys = StepSystem::new(&mesh, &mass, &stiffness, &problem, &table, &config).unwrap();
        let history = history_from(vec![vec![0.0; 7]]);

        let outcome = newton_solve(&vec![0.0; 7], &history, &sys).unwrap();
        assert_eq!(outcome.iters, 1, "affine problem should need one update");

        // Independent dense solve of the same linear system.
        let n = 7;
        let scale = 0.125f64.powf(-0.4);
        let mut a = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] = scale * mass.get(r, c) + (1.0 - 0.2) * stiffness.get(r, c);
            }
        }
        let src = crate::assembly::assemble_source(
            &mesh,
            &*problem.g,
            sys.shifted_time(1),
            sys.load_rule(),
        )
        .unwrap();
        let x = a.lu().solve(&DVector::from_vec(src)).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(outcome.state[i], x[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn residual_matches_dense_brute_force() {
        // Term-by-term dense evaluation of the step equation at a random
        // iterate, n = 3.
        let mesh = build_mesh_1d(4).unwrap();
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        let alpha = order(0.6);
        let dt = 0.2;
        let config = SolverConfig::new(alpha, dt, 5).unwrap();
        let table = gl_weights(alpha, 5);
        let problem = fisher_1d(alpha);
        let sys = StepSystem::new(&mesh, &mass, &stiffness, &problem, &table, &config).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut rand_vec = || -> Vec<f64> { (0..3).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let u1 = rand_vec();
        let u2 = rand_vec();
        let beta = rand_vec();
        let history = history_from(vec![vec![0.0; 3], u1.clone(), u2.clone()]);

        let got = residual(&beta, &history, &sys).unwrap();

        let a = 0.6;
        let scale = dt.powf(-a);
        let md = DMatrix::from_fn(3, 3, |r, c| mass.get(r, c));
        let kd = DMatrix::from_fn(3, 3, |r, c| stiffness.get(r, c));
        let bv = DVector::from_vec(beta.clone());
        let prev = DVector::from_vec(u2.clone());
        let combo: Vec<f64> = beta
            .iter()
            .zip(&u2)
            .map(|(&b, &p)| (1.0 - a / 2.0) * b + a / 2.0 * p)
            .collect();
        let load = DVector::from_vec(
            assemble_nonlinear_load(&mesh, &combo, &*problem.f, sys.load_rule()).unwrap(),
        );
        let src = DVector::from_vec(
            crate::assembly::assemble_source(&mesh, &*problem.g, (3.0 - a / 2.0) * dt, sys.load_rule())
                .unwrap(),
        );
        // history tail: j = 1, 2 with weights w_{3-j}
        let tail = &md * DVector::from_vec(u1) * table.w()[2] + &md * prev.clone() * table.w()[1];
        let expect = &md * &bv * scale
            + &kd * &bv * (1.0 - a / 2.0)
            + &kd * &prev * (a / 2.0)
            - load
            - src
            + tail * scale;
        for i in 0..3 {
            assert_abs_diff_eq!(got[i], expect[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_at_random_states() {
        let mesh = build_mesh_1d(4).unwrap();
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        let alpha = order(0.4);
        let config = SolverConfig::new(alpha, 0.125, 4).unwrap();
        let table = gl_weights(alpha, 4);
        let problem = fisher_1d(alpha);
        let sys = StepSystem::new(&mesh, &mass, &stiffness, &problem, &table, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let prev: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            let history = history_from(vec![vec![0.0; 3], prev.clone()]);
            let combo = combined_state(0.4, &beta, &prev);
            let jac = assemble_jacobian(
                &mass, &stiffness, &mesh, &combo, &*problem.f_prime, alpha, 0.125, sys.load_rule(),
            )
            .unwrap();
            let fd = fd_jacobian(&beta, &history, &sys, 1e-7).unwrap();
            for r in 0..3 {
                for c in 0..3 {
                    assert_abs_diff_eq!(jac.get(r, c), fd[r][c], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn newton_single_dof_matches_bisection() {
        // One interior DOF: H(β) = Δt^{−α} m β + k β(1−α/2) − load(f at U^{n,α}).
        let mesh = build_mesh_1d(2).unwrap();
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        let alpha = order(0.5);
        let config = SolverConfig::new(alpha, 0.5, 2).unwrap();
        let table = gl_weights(alpha, 2);
        let problem = nonsmooth_1d(alpha);
        let sys = StepSystem::new(&mesh, &mass, &stiffness, &problem, &table, &config).unwrap();
        let history = history_from(vec![vec![0.0]]);

        let outcome = newton_solve(&[0.0], &history, &sys).unwrap();

        let eval = |b: f64| residual(&[b], &history, &sys).unwrap()[0];
        // Bracket the first sign change by doubling from a small step.
        let mut lo = 0.0;
        let mut hi = 0.25;
        while eval(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            assert!(hi < 64.0, "no sign change found");
        }
        assert!(eval(lo) < 0.0 && eval(hi) > 0.0, "bracket must straddle the root");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if eval(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert_abs_diff_eq!(outcome.state[0], root, epsilon = 1e-10);
    }

    #[test]
    fn newton_warm_start_converges_quickly() {
        let mesh = build_mesh_1d(16).unwrap();
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        let alpha = order(0.4);
        let config = SolverConfig::new(alpha, 0.125, 8).unwrap();
        let table = gl_weights(alpha, 8);
        let problem = fisher_1d(alpha);
        let sys = StepSystem::new(&mesh, &mass, &stiffness, &problem, &table, &config).unwrap();
        let history = history_from(vec![vec![0.0; 15]]);
        let outcome = newton_solve(&vec![0.0; 15], &history, &sys).unwrap();
        assert!(outcome.iters <= 5, "expected <= 5 iterations, got {}", outcome.iters);
    }

    #[test]
    fn fd_check_flag_accepts_consistent_jacobian() {
        let mesh = build_mesh_1d(4).unwrap();
        let alpha = order(0.4);
        let mut config = SolverConfig::new(alpha, 0.25, 4).unwrap();
        config.fd_jacobian_check = true;
        let problem = fisher_1d(alpha);
        let history = run_simulation(&mesh, &problem, &config).unwrap();
        assert_eq!(history.states().len(), 5);
    }

    #[test]
    fn linear_solve_identity() {
        let mesh = build_mesh_1d(5).unwrap();
        let mut jac = assemble_mass(&mesh);
        let n = jac.n();
        for row in 0..n {
            for col in 0..n {
                if jac.get(row, col) != 0.0 {
                    let cur = jac.get(row, col);
                    jac.add(row, col, if row == col { 1.0 - cur } else { -cur });
                }
            }
        }
        let rhs = vec![3.0, -1.0, 0.5, 2.0];
        let x = linear_solve(&jac, &rhs).unwrap();
        for (a, b) in x.iter().zip(&rhs) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn tridiagonal_solve_matches_dense_oracle() {
        let mesh = build_mesh_1d(8).unwrap();
        let k = assemble_stiffness(&mesh);
        let n = k.n();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = linear_solve(&k, &rhs).unwrap();
        let a = DMatrix::from_fn(n, n, |r, c| k.get(r, c));
        let oracle = a.lu().solve(&DVector::from_vec(rhs.clone())).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(x[i], oracle[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn banded_solve_2d_stiffness_residual() {
        let mesh = build_mesh_2d(8).unwrap();
        let k = assemble_stiffness(&mesh);
        let n = k.n();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = linear_solve(&k, &rhs).unwrap();
        let kx = k.mul_vec(&x);
        let num: f64 = kx.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = rhs.iter().map(|b| b * b).sum();
        assert!((num / den).sqrt() < 1e-12);

        let a = DMatrix::from_fn(n, n, |r, c| k.get(r, c));
        let oracle = a.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(x[i], oracle[i], epsilon = 1e-11);
        }
    }

    #[test]
    fn singular_matrix_detected() {
        // Rank-deficient 2x2 stored tridiagonally.
        let mesh = build_mesh_1d(3).unwrap(); // 2 interior DOFs
        let mut jac = assemble_mass(&mesh);
        // Overwrite values to [[1, 2], [2, 4]].
        let target = [[1.0, 2.0], [2.0, 4.0]];
        for row in 0..2 {
            for col in 0..2 {
                let cur = jac.get(row, col);
                jac.add(row, col, target[row][col] - cur);
            }
        }
        match linear_solve(&jac, &[1.0, 0.0]) {
            Err(Error::SingularJacobian { .. }) => {}
            other => panic!("expected singular jacobian, got {other:?}"),
        }
    }

    #[test]
    fn zero_problem_stays_zero() {
        let alpha = order(0.5);
        let mesh = build_mesh_1d(8).unwrap();
        let config = SolverConfig::new(alpha, 0.25, 4).unwrap();
        let problem = zero_problem(1, alpha);
        let history = run_simulation(&mesh, &problem, &config).unwrap();
        assert_eq!(history.states().len(), 5);
        for state in history.states() {
            assert!(state.coeffs.iter().all(|&v| v == 0.0));
        }
        assert_eq!(history.max_newton_iters(), 0);
    }

    #[test]
    fn simulation_is_deterministic() {
        let alpha = order(0.4);
        let mesh = build_mesh_1d(16).unwrap();
        let config = SolverConfig::new(alpha, 0.125, 8).unwrap();
        let problem = fisher_1d(alpha);
        let a = run_simulation(&mesh, &problem, &config).unwrap();
        let b = run_simulation(&mesh, &problem, &config).unwrap();
        for (sa, sb) in a.states().iter().zip(b.states()) {
            assert_eq!(sa.coeffs, sb.coeffs, "histories must be bit-identical");
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let alpha = order(0.4);
        let mesh = build_mesh_2d(4).unwrap();
        let config = SolverConfig::new(alpha, 0.25, 4).unwrap();
        let problem = fisher_1d(alpha);
        assert!(run_simulation(&mesh, &problem, &config).is_err());
    }

    #[test]
    fn newton_quadratic_tail() {
        // Once the residual is below 1e-2, the next residual should be
        // bounded by C·r² with a moderate constant.
        let alpha = order(0.4);
        let mesh = build_mesh_1d(16).unwrap();
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        let mut config = SolverConfig::new(alpha, 0.125, 8).unwrap();
        config.newton_tol = 1e-12;
        let table = gl_weights(alpha, 8);
        let problem = fisher_1d(alpha);
        let sys = StepSystem::new(&mesh, &mass, &stiffness, &problem, &table, &config).unwrap();
        let history = history_from(vec![vec![0.0; 15]]);
        let outcome = newton_solve(&vec![0.0; 15], &history, &sys).unwrap();
        let norms = &outcome.residual_norms;
        let mut checked = 0;
        for w in norms.windows(2) {
            if w[0] < 1e-2 && w[0] > 0.0 && w[1] > 0.0 {
                assert!(w[1] <= 50.0 * w[0] * w[0], "tail not quadratic: {} -> {}", w[0], w[1]);
                checked += 1;
            }
        }
        assert!(checked >= 1, "no quadratic-regime pairs observed");
    }

    #[test]
    fn coercivity_inequality_for_random_sequences() {
        // ⟨D^α e^k, (1−α/2)e^k + (α/2)e^{k−1}⟩ ≥ ½ D^α ‖e^k‖² − 1e−12
        // with Euclidean inner products, e⁰ = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for &a in &[0.2, 0.5, 0.8] {
            let alpha = order(a);
            for _ in 0..200 {
                let k = rng.random_range(1..=50usize);
                let dim = rng.random_range(1..=8usize);
                let table = gl_weights(alpha, k);
                let mut seq = vec![vec![0.0; dim]];
                for _ in 1..=k {
                    seq.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
                }
                let d = discrete_frac_deriv(&seq, &table, 1.0).unwrap();
                let ek = &seq[k];
                let ekm1 = &seq[k - 1];
                let lhs: f64 = d
                    .iter()
                    .enumerate()
                    .map(|(i, &di)| di * ((1.0 - a / 2.0) * ek[i] + a / 2.0 * ekm1[i]))
                    .sum();
                let norms: Vec<Vec<f64>> = seq
                    .iter()
                    .map(|e| vec![e.iter().map(|v| v * v).sum::<f64>()])
                    .collect();
                let rhs = 0.5 * discrete_frac_deriv(&norms, &table, 1.0).unwrap()[0];
                assert!(
                    lhs >= rhs - 1e-12,
                    "coercivity violated: alpha={a} k={k} dim={dim} lhs={lhs} rhs={rhs}"
                );
            }
        }
    }

    #[test]
    fn gronwall_bound_with_mittag_leffler_envelope() {
        // Sequences saturating D^α aⁿ = μ₁aⁿ + μ₂aⁿ⁻¹ + bⁿ stay below
        // 2(tₙ^α/α · max bⁱ) E_α(2Γ(α)μ tₙ^α).
        use crate::quadrature::mittag_leffler;
        let mut rng = ChaCha8Rng::seed_from_u64(4096);
        // Moderate constants keep E_α(2Γ(α)μ tⁿ^α) within the series range.
        for &a in &[0.4, 0.5, 0.7] {
            let alpha = order(a);
            for _ in 0..20 {
                let n_steps = 64usize;
                let dt = 1.0 / n_steps as f64;
                let mu1 = rng.random_range(0.0..0.3);
                let mu2 = rng.random_range(0.0..0.3);
                let b: Vec<f64> = (0..=n_steps).map(|_| rng.random_range(0.0..1.0)).collect();
                let table = gl_weights(alpha, n_steps);
                let scale = dt.powf(-a);
                let mut seq = vec![0.0f64];
                for n in 1..=n_steps {
                    // Solve scale·(aⁿ + Σ_{i<n} w_{n−i} aⁱ) = μ₁aⁿ + μ₂aⁿ⁻¹ + bⁿ.
                    let tail: f64 = (1..n).map(|i| table.w()[n - i] * seq[i]).sum();
                    let denom = scale - mu1;
                    assert!(denom > 0.0);
                    let an = (mu2 * seq[n - 1] + b[n] - scale * tail) / denom;
                    seq.push(an.max(0.0));
                }
                let mu = mu1 + mu2 / a;
                let bmax = b.iter().cloned().fold(0.0f64, f64::max);
                let gamma_a = libm::tgamma(a);
                for n in 1..=n_steps {
                    let tn = n as f64 * dt;
                    let envelope = 2.0 * (tn.powf(a) / a * bmax)
                        * mittag_leffler(alpha, 2.0 * gamma_a * mu * tn.powf(a)).unwrap();
                    assert!(
                        seq[n] <= envelope + 1e-9,
                        "gronwall envelope violated: alpha={a} n={n} a={} env={envelope}",
                        seq[n]
                    );
                }
            }
        }
    }

    #[test]
    fn nonconvergence_reported_with_iteration_count() {
        let alpha = order(0.4);
        let mesh = build_mesh_1d(8).unwrap();
        let mut config = SolverConfig::new(alpha, 0.25, 2).unwrap();
        config.newton_max_iter = 0;
        let problem = fisher_1d(alpha);
        match run_simulation(&mesh, &problem, &config) {
            Err(Error::StepFailed { step: 1, source }) => {
                assert!(matches!(*source, Error::NonConvergence { .. }));
            }
            other => panic!("expected step failure, got {other:?}"),
        }
    }
}
