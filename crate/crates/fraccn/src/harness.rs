//! Convergence-study driver: L2 error norms, observed rates, reference
//! solutions for problems without exact solutions, and CSV reports.
//!
//! Grid points of a study are independent simulations; with the `parallel`
//! feature (default) they run on a rayon pool, otherwise sequentially.
//! [`run_study_serial`] always runs sequentially and produces identical
//! reports, which the benches use as the comparison baseline. Row order is
//! grid order regardless of completion order, and rerunning a study
//! reproduces error values bit for bit.

pub mod verify;

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::assembly::{assemble_mass, SparseMatrix};
use crate::mesh::{build_mesh_1d, build_mesh_2d, reference_quadrature, Element, Mesh, Point};
use crate::problems::ProblemSpec;
use crate::stepper::{run_simulation, SolverConfig};
use crate::{Error, Result};

/// Refinement axis of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Spatial,
    Temporal,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Spatial => "spatial",
            Axis::Temporal => "temporal",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Axis::Spatial),
            "temporal" => Ok(Axis::Temporal),
            other => Err(Error::InvalidInput(format!(
                "axis must be 'spatial' or 'temporal', got '{other}'"
            ))),
        }
    }
}

/// One study grid point: mesh subdivisions and time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub m: usize,
    pub dt: f64,
}

/// Study-wide settings; the config file overrides the defaults.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub final_time: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Override for the load/source quadrature exactness (default 5/4 by dim).
    pub load_quad_degree: Option<usize>,
    /// Override for the error-norm quadrature exactness (default 9/5 by dim).
    pub error_quad_degree: Option<usize>,
    pub cache_dir: PathBuf,
    /// Reference mesh subdivisions for problems without an exact solution.
    pub reference_m: usize,
    /// Reference time steps for problems without an exact solution.
    pub reference_steps: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            final_time: 1.0,
            newton_tol: 1e-7,
            newton_max_iter: 25,
            load_quad_degree: None,
            error_quad_degree: None,
            cache_dir: PathBuf::from("refcache"),
            reference_m: 256,
            reference_steps: 1024,
        }
    }
}

impl StudyConfig {
    /// Applies `key = value` overrides from a plain-text config file.
    /// Blank lines and lines starting with '#' are ignored; unknown keys are
    /// rejected.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidInput(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::InvalidInput(format!(
                    "{}:{}: invalid {what} '{value}'",
                    path.display(),
                    lineno + 1
                ))
            };
            match key {
                "T" | "final_time" => {
                    self.final_time = value.parse().map_err(|_| bad("final time"))?
                }
                "newton_tol" => self.newton_tol = value.parse().map_err(|_| bad("tolerance"))?,
                "newton_max_iter" => {
                    self.newton_max_iter = value.parse().map_err(|_| bad("iteration cap"))?
                }
                "load_quad_degree" => {
                    self.load_quad_degree = Some(value.parse().map_err(|_| bad("degree"))?)
                }
                "error_quad_degree" => {
                    self.error_quad_degree = Some(value.parse().map_err(|_| bad("degree"))?)
                }
                "cache_dir" => self.cache_dir = PathBuf::from(value),
                "reference_m" => self.reference_m = value.parse().map_err(|_| bad("mesh size"))?,
                "reference_steps" => {
                    self.reference_steps = value.parse().map_err(|_| bad("step count"))?
                }
                other => {
                    return Err(Error::InvalidInput(format!(
                        "{}:{}: unknown config key '{other}'",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        Ok(())
    }
}

/// One report row; `rate` is absent on the first row of a study.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub h: f64,
    pub dt: f64,
    pub l2_error: f64,
    pub rate: Option<f64>,
    pub newton_iters_max: usize,
    pub runtime_s: f64,
    /// max over all steps of the discrete L2 norm of the state.
    pub max_state_l2: f64,
}

/// Error/rate table for one (problem, α, axis) study.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub problem: String,
    pub alpha: f64,
    pub axis: Axis,
    pub rows: Vec<ReportRow>,
}

impl ConvergenceReport {
    /// CSV schema: problem,alpha,axis,h,dt,l2_error,rate,newton_iters_max,runtime_s
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "problem,alpha,axis,h,dt,l2_error,rate,newton_iters_max,runtime_s")?;
        for row in &self.rows {
            let rate = row.rate.map_or(String::new(), |r| format!("{r:.4}"));
            writeln!(
                out,
                "{},{},{},{},{},{:.6e},{},{},{:.3}",
                self.problem,
                self.alpha,
                self.axis.as_str(),
                row.h,
                row.dt,
                row.l2_error,
                rate,
                row.newton_iters_max,
                row.runtime_s
            )?;
        }
        Ok(())
    }

    /// Plain-text rendering for terminals.
    pub fn render(&self) -> String {
        let mut s = format!(
            "problem={} alpha={} axis={}\n{:>12} {:>12} {:>14} {:>8} {:>8} {:>10}\n",
            self.problem, self.alpha, self.axis.as_str(),
            "h", "dt", "l2_error", "rate", "newton", "runtime_s"
        );
        for row in &self.rows {
            let rate = row.rate.map_or("-".to_string(), |r| format!("{r:.4}"));
            s.push_str(&format!(
                "{:>12.6} {:>12.6} {:>14.4e} {:>8} {:>8} {:>10.3}\n",
                row.h, row.dt, row.l2_error, rate, row.newton_iters_max, row.runtime_s
            ));
        }
        s
    }
}

/// Default error-norm quadrature exactness per dimension.
pub fn default_error_degree(dim: usize) -> usize {
    if dim == 1 {
        9
    } else {
        5
    }
}

fn error_rule(dim: usize, degree: Option<usize>) -> Result<crate::mesh::QuadratureRule> {
    reference_quadrature(dim, degree.unwrap_or_else(|| default_error_degree(dim)))
}

fn element_scale(mesh: &Mesh, e: &Element) -> f64 {
    match *e {
        Element::Segment([a, b]) => mesh.nodes()[b][0] - mesh.nodes()[a][0],
        Element::Triangle([a, b, c]) => {
            let pa = mesh.nodes()[a];
            let pb = mesh.nodes()[b];
            let pc = mesh.nodes()[c];
            (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        }
    }
}

fn element_point(mesh: &Mesh, e: &Element, refp: Point) -> Point {
    match *e {
        Element::Segment([a, b]) => {
            let xa = mesh.nodes()[a][0];
            let xb = mesh.nodes()[b][0];
            [xa + refp[0] * (xb - xa), 0.0]
        }
        Element::Triangle([a, b, c]) => {
            let pa = mesh.nodes()[a];
            let pb = mesh.nodes()[b];
            let pc = mesh.nodes()[c];
            [
                pa[0] + refp[0] * (pb[0] - pa[0]) + refp[1] * (pc[0] - pa[0]),
                pa[1] + refp[0] * (pb[1] - pa[1]) + refp[1] * (pc[1] - pa[1]),
            ]
        }
    }
}

fn local_basis(dim: usize, refp: Point) -> [f64; 3] {
    if dim == 1 {
        [1.0 - refp[0], refp[0], 0.0]
    } else {
        [1.0 - refp[0] - refp[1], refp[0], refp[1]]
    }
}

/// ‖U_h − u(·, t)‖_{L²(Ω)} by per-element quadrature of the squared
/// difference, at the default degree (9 in 1D, 5 in 2D).
pub fn l2_error(
    mesh: &Mesh,
    state: &[f64],
    exact: &(dyn Fn(Point, f64) -> f64 + Sync),
    t: f64,
) -> f64 {
    l2_error_with_degree(mesh, state, exact, t, None).expect("default degree is supported")
}

pub fn l2_error_with_degree(
    mesh: &Mesh,
    state: &[f64],
    exact: &(dyn Fn(Point, f64) -> f64 + Sync),
    t: f64,
    degree: Option<usize>,
) -> Result<f64> {
    assert_eq!(state.len(), mesh.n_interior());
    let rule = error_rule(mesh.dim(), degree)?;
    let mut acc = 0.0;
    for e in mesh.elements() {
        let verts = e.vertices();
        let scale = element_scale(mesh, e);
        for (q, &w) in rule.weights().iter().enumerate() {
            let basis = local_basis(mesh.dim(), rule.points()[q]);
            let mut u = 0.0;
            for (loc, &v) in verts.iter().enumerate() {
                if let Some(dof) = mesh.interior_index(v) {
                    u += basis[loc] * state[dof];
                }
            }
            let x = element_point(mesh, e, rule.points()[q]);
            let d = u - exact(x, t);
            acc += w * scale * d * d;
        }
    }
    Ok(acc.sqrt())
}

/// Error of a coarse solution against a reference solution on a nested finer
/// mesh, integrating the squared difference of both P1 interpolants over the
/// reference mesh's quadrature points.
pub fn l2_error_vs_reference(
    coarse_state: &[f64],
    coarse_mesh: &Mesh,
    ref_state: &[f64],
    ref_mesh: &Mesh,
) -> Result<f64> {
    l2_error_vs_reference_with_degree(coarse_state, coarse_mesh, ref_state, ref_mesh, None)
}

pub fn l2_error_vs_reference_with_degree(
    coarse_state: &[f64],
    coarse_mesh: &Mesh,
    ref_state: &[f64],
    ref_mesh: &Mesh,
    degree: Option<usize>,
) -> Result<f64> {
    if coarse_mesh.dim() != ref_mesh.dim() {
        return Err(Error::InvalidInput("meshes have different dimensions".into()));
    }
    if ref_mesh.subdivisions() % coarse_mesh.subdivisions() != 0 {
        return Err(Error::InvalidInput(format!(
            "reference mesh (m={}) is not a nested refinement of the coarse mesh (m={})",
            ref_mesh.subdivisions(),
            coarse_mesh.subdivisions()
        )));
    }
    assert_eq!(coarse_state.len(), coarse_mesh.n_interior());
    assert_eq!(ref_state.len(), ref_mesh.n_interior());
    let rule = error_rule(ref_mesh.dim(), degree)?;
    let coarse_nodal = coarse_mesh.nodal_from_interior(coarse_state);
    let mut acc = 0.0;
    for e in ref_mesh.elements() {
        let verts = e.vertices();
        let scale = element_scale(ref_mesh, e);
        for (q, &w) in rule.weights().iter().enumerate() {
            let basis = local_basis(ref_mesh.dim(), rule.points()[q]);
            let mut u_ref = 0.0;
            for (loc, &v) in verts.iter().enumerate() {
                if let Some(dof) = ref_mesh.interior_index(v) {
                    u_ref += basis[loc] * ref_state[dof];
                }
            }
            let x = element_point(ref_mesh, e, rule.points()[q]);
            let u_coarse = coarse_mesh.eval_p1(&coarse_nodal, x);
            let d = u_coarse - u_ref;
            acc += w * scale * d * d;
        }
    }
    Ok(acc.sqrt())
}

/// Observed convergence rate log(e1/e2) / log(s1/s2) between two refinement
/// levels with step sizes s1 and s2.
pub fn observed_rate(e1: f64, s1: f64, e2: f64, s2: f64) -> Result<f64> {
    if !(e1 > 0.0 && e2 > 0.0 && s1 > 0.0 && s2 > 0.0) {
        return Err(Error::InvalidInput(
            "errors and step sizes must be positive to compute a rate".into(),
        ));
    }
    if s1 == s2 {
        return Err(Error::InvalidInput("step sizes must differ".into()));
    }
    Ok((e1 / e2).ln() / (s1 / s2).ln())
}

/// Discrete L2 norm √(βᵀMβ) of a state.
pub fn state_l2_norm(mass: &SparseMatrix, coeffs: &[f64]) -> f64 {
    mass.mul_vec(coeffs)
        .iter()
        .zip(coeffs)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Reference solution: final-time state of a fine run, cached on disk.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub mesh: Mesh,
    pub state: Vec<f64>,
}

const REF_MAGIC: &[u8; 8] = b"FCNREF01";

fn reference_path(cfg: &StudyConfig, problem: &ProblemSpec) -> PathBuf {
    cfg.cache_dir.join(format!(
        "{}_a{}_m{}_nt{}.fcnref",
        problem.name,
        problem.alpha.value(),
        cfg.reference_m,
        cfg.reference_steps
    ))
}

fn write_reference_file(
    path: &Path,
    dim: usize,
    m: usize,
    n_steps: usize,
    alpha: f64,
    state: &[f64],
) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::with_capacity(8 + 4 + 4 + 8 + 8 + 8 + 8 * state.len());
    buf.extend_from_slice(REF_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.extend_from_slice(&(n_steps as u64).to_le_bytes());
    buf.extend_from_slice(&alpha.to_le_bytes());
    buf.extend_from_slice(&(state.len() as u64).to_le_bytes());
    for v in state {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)
}

fn read_reference_file(
    path: &Path,
    dim: usize,
    m: usize,
    n_steps: usize,
    alpha: f64,
) -> Option<Vec<f64>> {
    let mut file = fs::File::open(path).ok()?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).ok()?;
    if buf.len() < 40 || &buf[0..8] != REF_MAGIC {
        return None;
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    if u32_at(8) != dim || u32_at(12) != m || u64_at(16) != n_steps || f64_at(24) != alpha {
        return None;
    }
    let count = u64_at(32);
    if buf.len() != 40 + 8 * count {
        return None;
    }
    Some((0..count).map(|i| f64_at(40 + 8 * i)).collect())
}

/// Loads the cached reference solution for a problem or computes and caches
/// it. The cache key is (problem, α, reference mesh, reference steps).
pub fn get_reference(problem: &ProblemSpec, cfg: &StudyConfig) -> Result<ReferenceSolution> {
    let mesh = build_mesh(problem.dim, cfg.reference_m)?;
    let path = reference_path(cfg, problem);
    if let Some(state) = read_reference_file(
        &path,
        problem.dim,
        cfg.reference_m,
        cfg.reference_steps,
        problem.alpha.value(),
    ) {
        if state.len() == mesh.n_interior() {
            return Ok(ReferenceSolution { mesh, state });
        }
    }
    let dt = cfg.final_time / cfg.reference_steps as f64;
    let solver_cfg = solver_config(problem, dt, cfg.reference_steps, cfg)?;
    let history = run_simulation(&mesh, problem, &solver_cfg)?;
    let state = history.last().coeffs.clone();
    write_reference_file(
        &path,
        problem.dim,
        cfg.reference_m,
        cfg.reference_steps,
        problem.alpha.value(),
        &state,
    )?;
    Ok(ReferenceSolution { mesh, state })
}

fn build_mesh(dim: usize, m: usize) -> Result<Mesh> {
    match dim {
        1 => build_mesh_1d(m),
        2 => build_mesh_2d(m),
        other => Err(Error::InvalidInput(format!("unsupported dimension {other}"))),
    }
}

fn solver_config(
    problem: &ProblemSpec,
    dt: f64,
    n_steps: usize,
    cfg: &StudyConfig,
) -> Result<SolverConfig> {
    let mut sc = SolverConfig::new(problem.alpha, dt, n_steps)?;
    sc.newton_tol = cfg.newton_tol;
    sc.newton_max_iter = cfg.newton_max_iter;
    sc.load_quad_degree = cfg.load_quad_degree;
    Ok(sc)
}

/// Number of steps of size `dt` reaching `final_time`; errors when dt does
/// not divide the final time.
pub fn steps_for(final_time: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let n = (final_time / dt).round();
    if n < 1.0 || (n * dt - final_time).abs() > 1e-9 * final_time.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "time step {dt} does not divide the final time {final_time}"
        )));
    }
    Ok(n as usize)
}

struct RowOutcome {
    l2_error: f64,
    newton_iters_max: usize,
    runtime_s: f64,
    max_state_l2: f64,
}

fn run_row(
    problem: &ProblemSpec,
    gp: GridPoint,
    cfg: &StudyConfig,
    reference: Option<&ReferenceSolution>,
) -> Result<RowOutcome> {
    let start = Instant::now();
    let mesh = build_mesh(problem.dim, gp.m)?;
    let n_steps = steps_for(cfg.final_time, gp.dt)?;
    let solver_cfg = solver_config(problem, gp.dt, n_steps, cfg)?;
    let history = run_simulation(&mesh, problem, &solver_cfg)?;
    let final_state = &history.last().coeffs;

    let l2 = match (&problem.exact, reference) {
        (Some(exact), _) => l2_error_with_degree(
            &mesh,
            final_state,
            &**exact,
            cfg.final_time,
            cfg.error_quad_degree,
        )?,
        (None, Some(r)) => l2_error_vs_reference_with_degree(
            final_state,
            &mesh,
            &r.state,
            &r.mesh,
            cfg.error_quad_degree,
        )?,
        (None, None) => {
            return Err(Error::InvalidInput(format!(
                "problem '{}' has no exact solution and no reference was supplied",
                problem.name
            )))
        }
    };

    let mass = assemble_mass(&mesh);
    let max_state_l2 = history
        .states()
        .iter()
        .map(|s| state_l2_norm(&mass, &s.coeffs))
        .fold(0.0f64, f64::max);

    Ok(RowOutcome {
        l2_error: l2,
        newton_iters_max: history.max_newton_iters(),
        runtime_s: start.elapsed().as_secs_f64(),
        max_state_l2,
    })
}

fn validate_grid(axis: Axis, grid: &[GridPoint]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("study grid is empty".into()));
    }
    match axis {
        Axis::Spatial => {
            if grid.iter().any(|g| g.dt != grid[0].dt) {
                return Err(Error::InvalidInput(
                    "spatial studies require a single time step across the grid".into(),
                ));
            }
        }
        Axis::Temporal => {
            if grid.iter().any(|g| g.m != grid[0].m) {
                return Err(Error::InvalidInput(
                    "temporal studies require a single mesh size across the grid".into(),
                ));
            }
        }
    }
    Ok(())
}

fn assemble_report(
    problem: &ProblemSpec,
    axis: Axis,
    grid: &[GridPoint],
    outcomes: Vec<Result<RowOutcome>>,
) -> Result<ConvergenceReport> {
    let mut rows = Vec::with_capacity(grid.len());
    for (gp, outcome) in grid.iter().zip(outcomes) {
        let h = 1.0 / gp.m as f64;
        let data = outcome.map_err(|e| Error::GridPointFailed {
            h,
            dt: gp.dt,
            source: Box::new(e),
        })?;
        rows.push(ReportRow {
            h,
            dt: gp.dt,
            l2_error: data.l2_error,
            rate: None,
            newton_iters_max: data.newton_iters_max,
            runtime_s: data.runtime_s,
            max_state_l2: data.max_state_l2,
        });
    }
    for i in 1..rows.len() {
        let (s_prev, s_cur) = match axis {
            Axis::Spatial => (rows[i - 1].h, rows[i].h),
            Axis::Temporal => (rows[i - 1].dt, rows[i].dt),
        };
        rows[i].rate = Some(observed_rate(
            rows[i - 1].l2_error,
            s_prev,
            rows[i].l2_error,
            s_cur,
        )?);
    }
    Ok(ConvergenceReport {
        problem: problem.name.to_string(),
        alpha: problem.alpha.value(),
        axis,
        rows,
    })
}

fn prepare_reference(
    problem: &ProblemSpec,
    cfg: &StudyConfig,
) -> Result<Option<ReferenceSolution>> {
    if problem.exact.is_some() {
        Ok(None)
    } else {
        get_reference(problem, cfg).map(Some)
    }
}

/// Runs one simulation per grid point and reports errors and observed rates
/// in grid order. Grid points execute concurrently when the `parallel`
/// feature is enabled.
pub fn run_study(
    problem: &ProblemSpec,
    axis: Axis,
    grid: &[GridPoint],
    cfg: &StudyConfig,
) -> Result<ConvergenceReport> {
    validate_grid(axis, grid)?;
    let reference = prepare_reference(problem, cfg)?;
    let outcomes = map_grid(grid, |gp| run_row(problem, *gp, cfg, reference.as_ref()));
    assemble_report(problem, axis, grid, outcomes)
}

/// Sequential variant of [`run_study`]; identical output.
pub fn run_study_serial(
    problem: &ProblemSpec,
    axis: Axis,
    grid: &[GridPoint],
    cfg: &StudyConfig,
) -> Result<ConvergenceReport> {
    validate_grid(axis, grid)?;
    let reference = prepare_reference(problem, cfg)?;
    let outcomes = grid
        .iter()
        .map(|gp| run_row(problem, *gp, cfg, reference.as_ref()))
        .collect();
    assemble_report(problem, axis, grid, outcomes)
}

#[cfg(feature = "parallel")]
fn map_grid<T, F>(grid: &[GridPoint], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&GridPoint) -> T + Sync + Send,
{
    use rayon::prelude::*;
    grid.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_grid<T, F>(grid: &[GridPoint], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&GridPoint) -> T + Sync,
{
    grid.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{fisher_1d, nonsmooth_1d};
    use crate::quadrature::FractionalOrder;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn order(a: f64) -> FractionalOrder {
        FractionalOrder::new(a).unwrap()
    }

    #[test]
    fn l2_error_zero_for_interpolated_linear() {
        let mesh = build_mesh_1d(8).unwrap();
        let f = |x: Point, _t: f64| 0.5 * x[0];
        let state: Vec<f64> = (0..mesh.n_interior())
            .map(|d| {
                let p = mesh.nodes()[mesh.interior_node(d)];
                f(p, 0.0)
            })
            .collect();
        // P1 reproduces linears only away from the boundary clamp; this
        // linear vanishes at x=0 but not x=1, so restrict to the exact
        // interpolant of a tent instead.
        let tent = |x: Point, _t: f64| (x[0].min(1.0 - x[0])).max(0.0);
        let tent_state: Vec<f64> = (0..mesh.n_interior())
            .map(|d| tent(mesh.nodes()[mesh.interior_node(d)], 0.0))
            .collect();
        let err = l2_error(&mesh, &tent_state, &tent, 0.0);
        assert_abs_diff_eq!(err, 0.0, epsilon = 1e-14);
        let _ = state;
    }

    #[test]
    fn l2_error_of_zero_state_is_function_norm() {
        let mesh = build_mesh_1d(16).unwrap();
        let exact = |x: Point, t: f64| t.powi(4) * (2.0 * std::f64::consts::PI * x[0]).sin();
        let state = vec![0.0; mesh.n_interior()];
        let err = l2_error(&mesh, &state, &exact, 1.0);
        assert_relative_eq!(err, std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-9);
    }

    #[test]
    fn reference_error_zero_for_matching_states() {
        let coarse = build_mesh_1d(4).unwrap();
        let fine = build_mesh_1d(16).unwrap();
        // A tent function representable on both meshes.
        let tent = |x: f64| (x.min(1.0 - x)).max(0.0);
        let coarse_state: Vec<f64> = (0..coarse.n_interior())
            .map(|d| tent(coarse.nodes()[coarse.interior_node(d)][0]))
            .collect();
        let fine_state: Vec<f64> = (0..fine.n_interior())
            .map(|d| tent(fine.nodes()[fine.interior_node(d)][0]))
            .collect();
        let err = l2_error_vs_reference(&coarse_state, &coarse, &fine_state, &fine).unwrap();
        assert_abs_diff_eq!(err, 0.0, epsilon = 1e-14);

        let same =
            l2_error_vs_reference(&fine_state, &fine, &fine_state, &fine).unwrap();
        assert_abs_diff_eq!(same, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn reference_error_rejects_non_nested() {
        let coarse = build_mesh_1d(5).unwrap();
        let fine = build_mesh_1d(16).unwrap();
        let cs = vec![0.0; coarse.n_interior()];
        let fs = vec![0.0; fine.n_interior()];
        assert!(l2_error_vs_reference(&cs, &coarse, &fs, &fine).is_err());
    }

    #[test]
    fn observed_rate_examples() {
        assert_abs_diff_eq!(observed_rate(2.0, 0.5, 1.0, 0.25).unwrap(), 1.0, epsilon = 1e-14);
        // Reference pairs quoted to five digits, so the recomputed rate can
        // deviate by up to ~1.6e-4 from the quoted one.
        let r = observed_rate(2.2133e-1, 0.25, 5.7425e-2, 0.125).unwrap();
        assert_abs_diff_eq!(r, 1.9465, epsilon = 2e-4);
        let r = observed_rate(3.6934e-2, 0.25, 9.7834e-3, 0.125).unwrap();
        assert_abs_diff_eq!(r, 1.9165, epsilon = 2e-4);
        assert!(observed_rate(0.0, 1.0, 1.0, 0.5).is_err());
        assert!(observed_rate(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn config_file_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("solver.cfg");
        std::fs::write(
            &path,
            "# comment\nT = 2.0\nnewton_tol = 1e-9\nnewton_max_iter = 11\nerror_quad_degree = 5\n",
        )
        .unwrap();
        let mut cfg = StudyConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.final_time, 2.0);
        assert_eq!(cfg.newton_tol, 1e-9);
        assert_eq!(cfg.newton_max_iter, 11);
        assert_eq!(cfg.error_quad_degree, Some(5));

        std::fs::write(&path, "bogus_key = 3\n").unwrap();
        assert!(cfg.apply_file(&path).is_err());
        std::fs::write(&path, "no equals sign\n").unwrap();
        assert!(cfg.apply_file(&path).is_err());
    }

    #[test]
    fn single_point_study_has_no_rate() {
        let problem = fisher_1d(order(0.4));
        let cfg = StudyConfig::default();
        let grid = [GridPoint { m: 8, dt: 0.125 }];
        let report = run_study(&problem, Axis::Spatial, &grid, &cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].rate.is_none());
        assert!(report.rows[0].l2_error > 0.0);
    }

    #[test]
    fn grid_validation() {
        let problem = fisher_1d(order(0.4));
        let cfg = StudyConfig::default();
        assert!(run_study(&problem, Axis::Spatial, &[], &cfg).is_err());
        let mixed_dt = [GridPoint { m: 4, dt: 0.5 }, GridPoint { m: 8, dt: 0.25 }];
        assert!(run_study(&problem, Axis::Spatial, &mixed_dt, &cfg).is_err());
        let mixed_m = [GridPoint { m: 4, dt: 0.5 }, GridPoint { m: 8, dt: 0.25 }];
        assert!(run_study(&problem, Axis::Temporal, &mixed_m, &cfg).is_err());
    }

    #[test]
    fn study_reproducible_bit_for_bit() {
        let problem = fisher_1d(order(0.4));
        let cfg = StudyConfig::default();
        let grid = [GridPoint { m: 4, dt: 0.25 }, GridPoint { m: 8, dt: 0.25 }];
        let a = run_study(&problem, Axis::Spatial, &grid, &cfg).unwrap();
        let b = run_study(&problem, Axis::Spatial, &grid, &cfg).unwrap();
        let c = run_study_serial(&problem, Axis::Spatial, &grid, &cfg).unwrap();
        for ((ra, rb), rc) in a.rows.iter().zip(&b.rows).zip(&c.rows) {
            assert_eq!(ra.l2_error.to_bits(), rb.l2_error.to_bits());
            assert_eq!(ra.l2_error.to_bits(), rc.l2_error.to_bits());
        }
    }

    #[test]
    fn csv_layout() {
        let report = ConvergenceReport {
            problem: "fisher1d".into(),
            alpha: 0.4,
            axis: Axis::Spatial,
            rows: vec![
                ReportRow {
                    h: 0.25,
                    dt: 1e-3,
                    l2_error: 2.2133e-1,
                    rate: None,
                    newton_iters_max: 3,
                    runtime_s: 0.5,
                    max_state_l2: 0.7,
                },
                ReportRow {
                    h: 0.125,
                    dt: 1e-3,
                    l2_error: 5.7425e-2,
                    rate: Some(1.9465),
                    newton_iters_max: 3,
                    runtime_s: 0.6,
                    max_state_l2: 0.7,
                },
            ],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "problem,alpha,axis,h,dt,l2_error,rate,newton_iters_max,runtime_s"
        );
        assert!(lines[1].starts_with("fisher1d,0.4,spatial,0.25,0.001,2.213300e-1,,3,"));
        assert!(lines[2].contains(",1.9465,"));
    }

    #[test]
    fn reference_cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = StudyConfig::default();
        cfg.cache_dir = dir.path().to_path_buf();
        cfg.reference_m = 16;
        cfg.reference_steps = 8;
        let problem = nonsmooth_1d(order(0.4));

        let first = get_reference(&problem, &cfg).unwrap();
        let path = reference_path(&cfg, &problem);
        assert!(path.exists());
        let second = get_reference(&problem, &cfg).unwrap();
        assert_eq!(first.state, second.state);

        // Corrupt header is ignored and recomputed.
        std::fs::write(&path, b"garbage").unwrap();
        let third = get_reference(&problem, &cfg).unwrap();
        assert_eq!(first.state, third.state);

        // Different α gets a different cache key.
        let other = nonsmooth_1d(order(0.6));
        let other_path = reference_path(&cfg, &other);
        assert_ne!(path, other_path);
    }

    #[test]
    fn grid_point_failure_is_annotated() {
        let problem = fisher_1d(order(0.4));
        let cfg = StudyConfig::default();
        // dt does not divide T=1.
        let grid = [GridPoint { m: 4, dt: 0.3 }];
        match run_study(&problem, Axis::Spatial, &grid, &cfg) {
            Err(Error::GridPointFailed { h, dt, .. }) => {
                assert_eq!(h, 0.25);
                assert_eq!(dt, 0.3);
            }
            other => panic!("expected grid-point failure, got {other:?}"),
        }
    }
}
