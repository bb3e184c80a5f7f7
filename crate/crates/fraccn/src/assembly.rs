//! P1 Galerkin assembly on interior degrees of freedom.
//!
//! Mass and stiffness entries use exact closed-form element integrals;
//! load vectors and the linearized-reaction matrix use reference-element
//! quadrature. Boundary rows are eliminated, not penalized, so every matrix
//! lives on the interior DOFs only.

use crate::mesh::{Element, Mesh, Point, QuadratureRule};
use crate::quadrature::FractionalOrder;
use crate::{Error, Result};

/// Coefficients β of a finite element function U = Σ βᵢ φᵢ at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub coeffs: Vec<f64>,
    pub time_index: usize,
}

impl StateVector {
    pub fn zeros(n: usize, time_index: usize) -> Self {
        Self { coeffs: vec![0.0; n], time_index }
    }

    pub fn all_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }
}

/// Shared nonzero structure for all matrices assembled on one mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Interior-to-interior adjacency (including the diagonal) induced by
    /// the element connectivity.
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let n = mesh.n_interior();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in mesh.elements() {
            let verts = e.vertices();
            for &a in verts {
                let Some(ia) = mesh.interior_index(a) else { continue };
                for &b in verts {
                    if let Some(ib) = mesh.interior_index(b) {
                        neighbors[ia].push(ib);
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut neighbors {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx }
    }

    pub fn zeros(&self) -> SparseMatrix {
        SparseMatrix {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: vec![0.0; self.col_idx.len()],
        }
    }
}

/// Compressed sparse row matrix with sorted, duplicate-free columns per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    #[inline]
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        self.col_idx[lo..hi].binary_search(&col).ok().map(|k| lo + k)
    }

    /// Adds into an entry that must exist in the pattern.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        let k = self
            .slot(row, col)
            .unwrap_or_else(|| panic!("entry ({row},{col}) outside sparsity pattern"));
        self.values[k] += value;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slot(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        for row in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            out[row] = acc;
        }
    }

    /// Maximum |A − Aᵀ| entry; zero for exactly symmetric matrices.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(col, row)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                dense[row][self.col_idx[k]] = self.values[k];
            }
        }
        dense
    }
}

/// Mass matrix M_{li} = ∫ φ_l φ_i, from exact per-element closed forms.
pub fn assemble_mass(mesh: &Mesh) -> SparseMatrix {
    let mut mat = SparsityPattern::from_mesh(mesh).zeros();
    for e in mesh.elements() {
        match *e {
            Element::Segment([a, b]) => {
                let he = mesh.nodes()[b][0] - mesh.nodes()[a][0];
                let local = [[he / 3.0, he / 6.0], [he / 6.0, he / 3.0]];
                scatter(&mut mat, mesh, &[a, b], &local);
            }
            Element::Triangle(tri) => {
                let area = triangle_area(mesh, tri);
                let d = area / 6.0;
                let o = area / 12.0;
                let local = [[d, o, o], [o, d, o], [o, o, d]];
                scatter(&mut mat, mesh, &tri, &local);
            }
        }
    }
    mat
}

/// Stiffness matrix K_{li} = ∫ ∇φ_l·∇φ_i, from exact per-element closed
/// forms.
pub fn assemble_stiffness(mesh: &Mesh) -> SparseMatrix {
    let mut mat = SparsityPattern::from_mesh(mesh).zeros();
    for e in mesh.elements() {
        match *e {
            Element::Segment([a, b]) => {
                let he = mesh.nodes()[b][0] - mesh.nodes()[a][0];
                let k = 1.0 / he;
                let local = [[k, -k], [-k, k]];
                scatter(&mut mat, mesh, &[a, b], &local);
            }
            Element::Triangle(tri) => {
                let area = triangle_area(mesh, tri);
                let [pa, pb, pc] = [
                    mesh.nodes()[tri[0]],
                    mesh.nodes()[tri[1]],
                    mesh.nodes()[tri[2]],
                ];
                // Gradient of λ_a is [y_b − y_c, x_c − x_b] / (2A), cyclically.
                let bvec = [pb[1] - pc[1], pc[1] - pa[1], pa[1] - pb[1]];
                let cvec = [pc[0] - pb[0], pa[0] - pc[0], pb[0] - pa[0]];
                let mut local = [[0.0; 3]; 3];
                for r in 0..3 {
                    for s in 0..3 {
                        local[r][s] = (bvec[r] * bvec[s] + cvec[r] * cvec[s]) / (4.0 * area);
                    }
                }
                scatter(&mut mat, mesh, &tri, &local);
            }
        }
    }
    mat
}

fn triangle_area(mesh: &Mesh, tri: [usize; 3]) -> f64 {
    let [pa, pb, pc] = [
        mesh.nodes()[tri[0]],
        mesh.nodes()[tri[1]],
        mesh.nodes()[tri[2]],
    ];
    0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]))
}

fn scatter<const V: usize>(
    mat: &mut SparseMatrix,
    mesh: &Mesh,
    verts: &[usize; V],
    local: &[[f64; V]; V],
) {
    for r in 0..V {
        let Some(row) = mesh.interior_index(verts[r]) else { continue };
        for s in 0..V {
            if let Some(col) = mesh.interior_index(verts[s]) {
                mat.add(row, col, local[r][s]);
            }
        }
    }
}

/// Per-element geometry shared by the quadrature-based assemblies: local
/// basis values at each rule point plus the measure scale factor.
struct ElementQuad {
    /// basis[q][local vertex]
    basis: Vec<[f64; 3]>,
}

impl ElementQuad {
    fn new(rule: &QuadratureRule) -> Self {
        let basis = rule
            .points()
            .iter()
            .map(|&[xi, eta]| {
                if rule.dim() == 1 {
                    [1.0 - xi, xi, 0.0]
                } else {
                    [1.0 - xi - eta, xi, eta]
                }
            })
            .collect();
        Self { basis }
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

fn element_scale(mesh: &Mesh, e: &Element) -> f64 {
    match *e {
        Element::Segment([a, b]) => mesh.nodes()[b][0] - mesh.nodes()[a][0],
        Element::Triangle(tri) => 2.0 * triangle_area(mesh, tri),
    }
}

fn interior_coeff(mesh: &Mesh, coeffs: &[f64], node: usize) -> f64 {
    mesh.interior_index(node).map_or(0.0, |dof| coeffs[dof])
}

/// Load vector b_i = ∫ f(U(x)) φ_i(x) dx by element quadrature, where U is
/// the finite element function with interior coefficients `state_combo`.
pub fn assemble_nonlinear_load(
    mesh: &Mesh,
    state_combo: &[f64],
    f: &(dyn Fn(f64) -> f64 + Sync),
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    assert_eq!(state_combo.len(), mesh.n_interior());
    let eq = ElementQuad::new(rule);
    let mut b = vec![0.0; mesh.n_interior()];
    for (ei, e) in mesh.elements().iter().enumerate() {
        let verts = e.vertices();
        let scale = element_scale(mesh, e);
        for (q, &w) in rule.weights().iter().enumerate() {
            let mut u = 0.0;
            for (loc, &v) in verts.iter().enumerate() {
                u += eq.basis[q][loc] * interior_coeff(mesh, state_combo, v);
            }
            let fu = f(u);
            if !fu.is_finite() {
                return Err(Error::NonFinite {
                    what: "f(u)".into(),
                    location: format!("element {ei}, quadrature point {q}, u={u}"),
                });
            }
            let wj = w * scale * fu;
            for (loc, &v) in verts.iter().enumerate() {
                if let Some(dof) = mesh.interior_index(v) {
                    b[dof] += wj * eq.basis[q][loc];
                }
            }
        }
    }
    Ok(b)
}

/// Source vector b_i = ∫ g(x, t) φ_i(x) dx at a fixed evaluation time.
pub fn assemble_source(
    mesh: &Mesh,
    g: &(dyn Fn(Point, f64) -> f64 + Sync),
    t_eval: f64,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    let eq = ElementQuad::new(rule);
    let mut b = vec![0.0; mesh.n_interior()];
    for (ei, e) in mesh.elements().iter().enumerate() {
        let verts = e.vertices();
        let scale = element_scale(mesh, e);
        for (q, &w) in rule.weights().iter().enumerate() {
            let x = element_point(mesh, e, rule.points()[q]);
            let gv = g(x, t_eval);
            if !gv.is_finite() {
                return Err(Error::NonFinite {
                    what: "g(x,t)".into(),
                    location: format!("element {ei}, x=({},{}), t={t_eval}", x[0], x[1]),
                });
            }
            let wj = w * scale * gv;
            for (loc, &v) in verts.iter().enumerate() {
                if let Some(dof) = mesh.interior_index(v) {
                    b[dof] += wj * eq.basis[q][loc];
                }
            }
        }
    }
    Ok(b)
}

/// Weighted mass matrix W_{li} = ∫ f′(U(x)) φ_l φ_i dx by element quadrature.
pub fn assemble_weighted_mass(
    mesh: &Mesh,
    state_combo: &[f64],
    f_prime: &(dyn Fn(f64) -> f64 + Sync),
    rule: &QuadratureRule,
) -> Result<SparseMatrix> {
    let mut mat = SparsityPattern::from_mesh(mesh).zeros();
    add_weighted_mass(&mut mat, 1.0, mesh, state_combo, f_prime, rule)?;
    Ok(mat)
}

fn add_weighted_mass(
    mat: &mut SparseMatrix,
    factor: f64,
    mesh: &Mesh,
    state_combo: &[f64],
    f_prime: &(dyn Fn(f64) -> f64 + Sync),
    rule: &QuadratureRule,
) -> Result<()> {
    assert_eq!(state_combo.len(), mesh.n_interior());
    let eq = ElementQuad::new(rule);
    for (ei, e) in mesh.elements().iter().enumerate() {
        let verts = e.vertices();
        let scale = element_scale(mesh, e);
        for (q, &w) in rule.weights().iter().enumerate() {
            let mut u = 0.0;
            for (loc, &v) in verts.iter().enumerate() {
                u += eq.basis[q][loc] * interior_coeff(mesh, state_combo, v);
            }
            let fp = f_prime(u);
            if !fp.is_finite() {
                return Err(Error::NonFinite {
                    what: "f'(u)".into(),
                    location: format!("element {ei}, quadrature point {q}, u={u}"),
                });
            }
            let wj = factor * w * scale * fp;
            for (r, &vr) in verts.iter().enumerate() {
                let Some(row) = mesh.interior_index(vr) else { continue };
                for (s, &vs) in verts.iter().enumerate() {
                    if let Some(col) = mesh.interior_index(vs) {
                        mat.add(row, col, wj * eq.basis[q][r] * eq.basis[q][s]);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Newton Jacobian of the fully discrete step,
/// J = Δt^{−α} w₀ M + (1−α/2) K − (1−α/2) W(U),
/// where W is the weighted mass matrix of f′ at the combined state U and
/// w₀ = 1. The sparsity pattern equals that of the mass matrix.
#[allow(clippy::too_many_arguments)]
pub fn assemble_jacobian(
    mass: &SparseMatrix,
    stiffness: &SparseMatrix,
    mesh: &Mesh,
    state_combo: &[f64],
    f_prime: &(dyn Fn(f64) -> f64 + Sync),
    alpha: FractionalOrder,
    dt: f64,
    rule: &QuadratureRule,
) -> Result<SparseMatrix> {
    assert!(mass.same_pattern(stiffness), "mass/stiffness pattern mismatch");
    let a = alpha.value();
    let cm = dt.powf(-a);
    let ck = 1.0 - a / 2.0;
    let mut jac = mass.clone();
    for (jv, (&mv, &kv)) in jac
        .values
        .iter_mut()
        .zip(mass.values().iter().zip(stiffness.values()))
    {
        *jv = cm * mv + ck * kv;
    }
    add_weighted_mass(&mut jac, -ck, mesh, state_combo, f_prime, rule)?;
    Ok(jac)
}
