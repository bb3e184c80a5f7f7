//! Self-check suite: numerical verification of the weight identities, the
//! complementary-sequence bounds, the coercivity inequality behind the
//! stability analysis, Jacobian consistency, the manufactured sources, and
//! the classical Crank-Nicolson limit.
//!
//! Every check is deterministic (fixed RNG seeds) and produces a pass/fail
//! result with a short detail string; the CLI prints one line per check.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_jacobian, assemble_mass, assemble_source, assemble_stiffness, StateVector};
use crate::mesh::{build_mesh_1d, gauss_legendre_unit, Point};
use crate::problems::{fisher_1d, huxley_2d, ProblemSpec};
use crate::quadrature::{discrete_frac_deriv, gl_weights, FractionalOrder};
use crate::stepper::{fd_jacobian, linear_solve, run_simulation, SolverConfig, StepSystem};

/// Outcome of one verification check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &'static str, detail: impl Into<String>) -> Self {
        Self { name, passed: true, detail: detail.into() }
    }

    fn fail(name: &'static str, detail: impl Into<String>) -> Self {
        Self { name, passed: false, detail: detail.into() }
    }
}

const ALPHA_SWEEP: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn order(a: f64) -> FractionalOrder {
    FractionalOrder::new(a).unwrap()
}

/// Runs all checks in order.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_weight_properties(),
        check_phi_closed_form(),
        check_gronwall_identity(),
        check_phi_bounds(),
        check_coercivity(),
        check_jacobian_fd(),
        check_residual_oracle(),
        check_crank_nicolson_regression(),
    ]
}

/// (a) Weight signs, monotonicity, and positivity of the partial sums up to
/// n = 1000 across the α sweep.
pub fn check_weight_properties() -> CheckResult {
    const NAME: &str = "weight-properties";
    for &a in &ALPHA_SWEEP {
        let t = gl_weights(order(a), 1000);
        if t.w()[0] != 1.0 {
            return CheckResult::fail(NAME, format!("w[0] != 1 at alpha={a}"));
        }
        for i in 1..=1000usize {
            if !(t.w()[i] < 0.0) {
                return CheckResult::fail(NAME, format!("w[{i}] not negative at alpha={a}"));
            }
            if i >= 2 && !(t.w()[i] > t.w()[i - 1]) {
                return CheckResult::fail(NAME, format!("w not increasing at i={i}, alpha={a}"));
            }
            if !(t.g()[i] > 0.0 && t.g()[i] < t.g()[i - 1]) {
                return CheckResult::fail(NAME, format!("g not positive decreasing at i={i}, alpha={a}"));
            }
        }
    }
    CheckResult::pass(NAME, "9 orders, indices up to 1000")
}

/// (b) φ recursion matches the closed binomial product to 1e−12 relative for
/// n ≤ 200.
pub fn check_phi_closed_form() -> CheckResult {
    const NAME: &str = "phi-closed-form";
    for &a in &ALPHA_SWEEP {
        let phi = gl_weights(order(a), 200);
        let mut closed = 1.0f64;
        for n in 0..=200usize {
            if n > 0 {
                closed *= (n as f64 - 1.0 + a) / n as f64;
            }
            let got = phi.phi()[n];
            if (got - closed).abs() > 1e-12 * closed.abs() {
                return CheckResult::fail(
                    NAME,
                    format!("alpha={a} n={n}: recursion {got:.17e} vs closed {closed:.17e}"),
                );
            }
        }
    }
    CheckResult::pass(NAME, "9 orders, n ≤ 200, 1e-12 relative")
}

/// (c) Convolution identity Σ_{i=j}^{n} φ_{n−i} g_{i−j} = 1 for all
/// 1 ≤ j ≤ n ≤ 200, to 1e−12 absolute.
pub fn check_gronwall_identity() -> CheckResult {
    const NAME: &str = "gronwall-identity";
    for &a in &ALPHA_SWEEP {
        let t = gl_weights(order(a), 200);
        for n in 1..=200usize {
            for j in 1..=n {
                let s: f64 = (j..=n).map(|i| t.phi()[n - i] * t.g()[i - j]).sum();
                if (s - 1.0).abs() > 1e-12 {
                    return CheckResult::fail(
                        NAME,
                        format!("alpha={a} n={n} j={j}: sum = {s:.17e}"),
                    );
                }
            }
        }
    }
    CheckResult::pass(NAME, "9 orders, all 1 ≤ j ≤ n ≤ 200, 1e-12 absolute")
}

/// (d) Summed-φ bounds: Σφ/Γ(α) ≤ n^α/Γ(1+α) for n ≤ 200, and the weighted
/// variant with i^{(k−1)α} for k ≤ 3, n ≤ 100.
pub fn check_phi_bounds() -> CheckResult {
    const NAME: &str = "phi-bounds";
    for &a in &ALPHA_SWEEP {
        let t = gl_weights(order(a), 200);
        let gamma_a = libm::tgamma(a);
        for n in 1..=200usize {
            let lhs: f64 = (0..n).map(|i| t.phi()[i]).sum::<f64>() / gamma_a;
            let rhs = (n as f64).powf(a) / libm::tgamma(1.0 + a);
            if lhs > rhs * (1.0 + 1e-10) {
                return CheckResult::fail(NAME, format!("sum bound: alpha={a} n={n} {lhs} > {rhs}"));
            }
        }
        for k in 1..=3usize {
            let ka = (k as f64 - 1.0) * a;
            let denom = gamma_a * libm::tgamma(1.0 + ka);
            for n in 1..=100usize {
                let lhs: f64 = (1..n)
                    .map(|i| t.phi()[n - i] * (i as f64).powf(ka))
                    .sum::<f64>()
                    / denom;
                let rhs = (n as f64).powf(k as f64 * a) / libm::tgamma(1.0 + k as f64 * a);
                if lhs > rhs * (1.0 + 1e-10) {
                    return CheckResult::fail(
                        NAME,
                        format!("weighted bound: alpha={a} k={k} n={n} {lhs} > {rhs}"),
                    );
                }
            }
        }
    }
    CheckResult::pass(NAME, "sum bound n ≤ 200; weighted bound k ≤ 3, n ≤ 100")
}

/// (e) Coercivity ⟨D^α e^k, (1−α/2)e^k + (α/2)e^{k−1}⟩ ≥ ½ D^α ‖e^k‖² − 1e−12
/// on 1000 random sequences with zero initial entry.
pub fn check_coercivity() -> CheckResult {
    const NAME: &str = "coercivity";
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0e8);
    let alphas = [0.2, 0.5, 0.8];
    for case in 0..1000usize {
        let a = alphas[case % alphas.len()];
        let k = rng.random_range(1..=50usize);
        let dim = rng.random_range(1..=8usize);
        let table = gl_weights(order(a), k);
        let mut seq: Vec<Vec<f64>> = vec![vec![0.0; dim]];
        for _ in 1..=k {
            seq.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
        let d = discrete_frac_deriv(&seq, &table, 1.0).expect("valid history");
        let lhs: f64 = d
            .iter()
            .enumerate()
            .map(|(i, &di)| di * ((1.0 - a / 2.0) * seq[k][i] + a / 2.0 * seq[k - 1][i]))
            .sum();
        let norms: Vec<Vec<f64>> = seq
            .iter()
            .map(|e| vec![e.iter().map(|v| v * v).sum::<f64>()])
            .collect();
        let rhs = 0.5 * discrete_frac_deriv(&norms, &table, 1.0).expect("valid history")[0];
        if lhs < rhs - 1e-12 {
            return CheckResult::fail(
                NAME,
                format!("case {case}: alpha={a} k={k} dim={dim} lhs={lhs:.17e} rhs={rhs:.17e}"),
            );
        }
    }
    CheckResult::pass(NAME, "1000 random sequences, k ≤ 50, dim ≤ 8")
}

/// (f) Analytic step Jacobian vs central differences of the residual on 20
/// random states, 1e−5 relative on the largest entry scale.
pub fn check_jacobian_fd() -> CheckResult {
    const NAME: &str = "jacobian-fd";
    let mut rng = ChaCha8Rng::seed_from_u64(0xfdc0de);
    let alpha = order(0.4);
    let mesh = build_mesh_1d(4).expect("mesh");
    let mass = assemble_mass(&mesh);
    let stiffness = assemble_stiffness(&mesh);
    let config = SolverConfig::new(alpha, 0.125, 8).expect("config");
    let table = gl_weights(alpha, 8);
    let problem = fisher_1d(alpha);
    let sys = StepSystem::new(&mesh, &mass, &stiffness, &problem, &table, &config).expect("system");

    for case in 0..20usize {
        let n_hist = rng.random_range(1..=3usize);
        let mut history = vec![StateVector::zeros(3, 0)];
        for i in 1..n_hist {
            history.push(StateVector {
                coeffs: (0..3).map(|_| rng.random_range(-0.5..0.5)).collect(),
                time_index: i,
            });
        }
        let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
        let prev = &history[history.len() - 1].coeffs;
        let a = alpha.value();
        let combo: Vec<f64> = beta
            .iter()
            .zip(prev)
            .map(|(&b, &p)| (1.0 - a / 2.0) * b + a / 2.0 * p)
            .collect();
        let jac = assemble_jacobian(
            &mass,
            &stiffness,
            &mesh,
            &combo,
            &*problem.f_prime,
            alpha,
            0.125,
            sys.load_rule(),
        )
        .expect("jacobian");
        let fd = fd_jacobian(&beta, &history, &sys, 1e-7).expect("fd jacobian");
        let scale = jac
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                worst = worst.max((jac.get(r, c) - fd[r][c]).abs());
            }
        }
        if worst > 1e-5 * scale {
            return CheckResult::fail(
                NAME,
                format!("case {case}: max deviation {worst:.3e} vs scale {scale:.3e}"),
            );
        }
    }
    CheckResult::pass(NAME, "20 random states, 1e-5 relative")
}

/// Caputo derivative of a solution with known time derivative u_t, via the
/// substitution s = t(1 − v^{1/(1−α)}), which absorbs the endpoint
/// singularity exactly:
/// (1/Γ(1−α)) ∫₀ᵗ (t−s)^{−α} u_t(s) ds = t^{1−α}/Γ(2−α) ∫₀¹ u_t(s(v)) dv.
fn caputo_from_time_derivative(alpha: f64, u_t: impl Fn(f64) -> f64, t: f64) -> f64 {
    let (nodes, weights) = gauss_legendre_unit(64);
    let p = 1.0 / (1.0 - alpha);
    let integral: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&v, &w)| w * u_t(t * (1.0 - v.powf(p))))
        .sum();
    t.powf(1.0 - alpha) / libm::tgamma(2.0 - alpha) * integral
}

struct OracleParts {
    u_t: Box<dyn Fn(Point, f64) -> f64>,
    laplacian: Box<dyn Fn(Point, f64) -> f64>,
}

/// Independent analytic pieces of the manufactured solutions, written out
/// separately from the shipped sources on purpose.
fn oracle_parts(problem: &ProblemSpec) -> OracleParts {
    use std::f64::consts::PI;
    match problem.name {
        "fisher1d" => OracleParts {
            u_t: Box::new(|x, t| 4.0 * t.powi(3) * (2.0 * PI * x[0]).sin()),
            laplacian: Box::new(|x, t| {
                -4.0 * PI * PI * t.powi(4) * (2.0 * PI * x[0]).sin()
            }),
        },
        "huxley2d" => OracleParts {
            u_t: Box::new(|x, t| {
                3.0 * t.powi(2)
                    * (1.0 - x[0]) * x[0].sin()
                    * (1.0 - x[1]) * x[1].sin()
            }),
            laplacian: Box::new(|x, t| {
                let a = |y: f64| (1.0 - y) * y.sin();
                let a2 = |y: f64| -2.0 * y.cos() - (1.0 - y) * y.sin();
                t.powi(3) * (a2(x[0]) * a(x[1]) + a(x[0]) * a2(x[1]))
            }),
        },
        other => panic!("no oracle for problem '{other}'"),
    }
}

/// (g) PDE residual of the manufactured problems at random space-time
/// points: |Caputo(u) − Δu − f(u) − g| < 1e−6 with the quadrature oracle
/// supplying the Caputo term.
pub fn check_residual_oracle() -> CheckResult {
    const NAME: &str = "residual-oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(0x0bac1e);
    for &a in &[0.4, 0.6] {
        let alpha = order(a);
        for problem in [fisher_1d(alpha), huxley_2d(alpha)] {
            let parts = oracle_parts(&problem);
            let exact = problem.exact.as_ref().expect("manufactured problem");
            for point in 0..100usize {
                let x: Point = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
                let t = rng.random_range(0.05..1.0);
                let caputo = caputo_from_time_derivative(a, |s| (parts.u_t)(x, s), t);
                let u = exact(x, t);
                let res = caputo - (parts.laplacian)(x, t) - (problem.f)(u) - (problem.g)(x, t);
                if res.abs() > 1e-6 {
                    return CheckResult::fail(
                        NAME,
                        format!(
                            "{} alpha={a} point {point}: residual {res:.3e} at x=({},{}), t={t}",
                            problem.name, x[0], x[1]
                        ),
                    );
                }
            }
        }
    }
    CheckResult::pass(NAME, "2 problems × 2 orders × 100 random points, 1e-6")
}

/// (h) At α = 1 the scheme reproduces an independently coded classical
/// Crank-Nicolson stepper on a linear problem to 1e−12.
pub fn check_crank_nicolson_regression() -> CheckResult {
    const NAME: &str = "crank-nicolson-regression";
    use std::f64::consts::PI;
    let alpha = order(1.0);
    // Linear problem manufactured for u = t⁴ sin(2πx) at α = 1:
    // u_t − u_xx = 4t³ sin(2πx) + 4π² t⁴ sin(2πx).
    let source = |x: Point, t: f64| {
        let s = (2.0 * PI * x[0]).sin();
        4.0 * t.powi(3) * s + 4.0 * PI * PI * t.powi(4) * s
    };
    let problem = ProblemSpec {
        name: "cn-regression",
        dim: 1,
        alpha,
        f: Box::new(|_| 0.0),
        f_prime: Box::new(|_| 0.0),
        g: Box::new(source),
        exact: None,
    };

    let mesh = build_mesh_1d(16).expect("mesh");
    let n_steps = 8usize;
    let dt = 1.0 / n_steps as f64;
    let config = SolverConfig::new(alpha, dt, n_steps).expect("config");
    let history = match run_simulation(&mesh, &problem, &config) {
        Ok(h) => h,
        Err(e) => return CheckResult::fail(NAME, format!("scheme run failed: {e}")),
    };

    // Independent classical Crank-Nicolson loop:
    // (M/Δt + K/2) βⁿ = (M/Δt − K/2) βⁿ⁻¹ + src(t_{n−1/2}).
    let mass = assemble_mass(&mesh);
    let stiffness = assemble_stiffness(&mesh);
    let mut lhs = mass.clone();
    let mut rhs_mat = mass.clone();
    for ((l, r), (&mv, &kv)) in lhs
        .values_mut()
        .iter_mut()
        .zip(rhs_mat.values_mut())
        .zip(mass.values().iter().zip(stiffness.values()))
    {
        *l = mv / dt + 0.5 * kv;
        *r = mv / dt - 0.5 * kv;
    }
    // Same source quadrature as the scheme, so the two time loops see
    // identical load vectors.
    let rule = crate::mesh::reference_quadrature(1, crate::stepper::default_load_degree(1))
        .expect("rule");
    let mut cn_state = vec![0.0; mesh.n_interior()];
    let mut worst = 0.0f64;
    for n in 1..=n_steps {
        let t_mid = (n as f64 - 0.5) * dt;
        let src = assemble_source(&mesh, &source, t_mid, &rule).expect("source");
        let mut rhs = rhs_mat.mul_vec(&cn_state);
        for (r, s) in rhs.iter_mut().zip(&src) {
            *r += s;
        }
        cn_state = match linear_solve(&lhs, &rhs) {
            Ok(x) => x,
            Err(e) => return CheckResult::fail(NAME, format!("cn solve failed: {e}")),
        };
        for (a, b) in history.states()[n].coeffs.iter().zip(&cn_state) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst > 1e-12 {
        return CheckResult::fail(NAME, format!("max deviation {worst:.3e} exceeds 1e-12"));
    }
    CheckResult::pass(NAME, format!("max deviation {worst:.3e} over {n_steps} steps"))
}
