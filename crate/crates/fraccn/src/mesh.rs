//! Structured meshes with P1 basis bookkeeping and reference-element
//! quadrature.
//!
//! 1D meshes partition [0, 1] into m equal segments; 2D meshes partition
//! the unit square into an m×m grid of cells, each split into two right
//! triangles along the lower-left to upper-right diagonal. Basis functions
//! are continuous piecewise-linear hats that vanish on the boundary, so the
//! linear algebra runs on interior degrees of freedom only.

use std::io::{self, Write};

use crate::{Error, Result};

/// A point in the plane; 1D meshes use the x component only.
pub type Point = [f64; 2];

/// Mesh element: a segment in 1D, a positively oriented triangle in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Element {
    Segment([usize; 2]),
    Triangle([usize; 3]),
}

impl Element {
    pub fn vertices(&self) -> &[usize] {
        match self {
            Element::Segment(v) => v,
            Element::Triangle(v) => v,
        }
    }
}

/// Uniform mesh of [0,1] or [0,1]² with interior-DOF indexing.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    m: usize,
    h: f64,
    nodes: Vec<Point>,
    elements: Vec<Element>,
    /// node index → interior DOF index, or None on the boundary.
    interior_index: Vec<Option<usize>>,
    /// interior DOF index → node index.
    interior_nodes: Vec<usize>,
}

impl Mesh {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn subdivisions(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    #[inline]
    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Number of interior degrees of freedom.
    #[inline]
    pub fn n_interior(&self) -> usize {
        self.interior_nodes.len()
    }

    #[inline]
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_index[node]
    }

    #[inline]
    pub fn interior_node(&self, dof: usize) -> usize {
        self.interior_nodes[dof]
    }

    /// Expands an interior coefficient vector to all mesh nodes, with zeros
    /// on the boundary.
    pub fn nodal_from_interior(&self, interior: &[f64]) -> Vec<f64> {
        assert_eq!(interior.len(), self.n_interior(), "coefficient length mismatch");
        let mut nodal = vec![0.0; self.nodes.len()];
        for (dof, &node) in self.interior_nodes.iter().enumerate() {
            nodal[node] = interior[dof];
        }
        nodal
    }

    /// Evaluates the P1 interpolant of nodal values at an arbitrary point of
    /// the domain (clamped to [0,1] per coordinate).
    pub fn eval_p1(&self, nodal: &[f64], p: Point) -> f64 {
        assert_eq!(nodal.len(), self.nodes.len(), "nodal length mismatch");
        let m = self.m;
        let cell = |x: f64| -> (usize, f64) {
            let clamped = x.clamp(0.0, 1.0);
            let mut i = (clamped / self.h).floor() as usize;
            if i >= m {
                i = m - 1;
            }
            (i, (clamped - i as f64 * self.h) / self.h)
        };
        match self.dim {
            1 => {
                let (i, xi) = cell(p[0]);
                nodal[i] * (1.0 - xi) + nodal[i + 1] * xi
            }
            _ => {
                let (i, xi) = cell(p[0]);
                let (j, eta) = cell(p[1]);
                let idx = |ii: usize, jj: usize| jj * (m + 1) + ii;
                let va = nodal[idx(i, j)];
                let vc = nodal[idx(i + 1, j + 1)];
                if xi >= eta {
                    let vb = nodal[idx(i + 1, j)];
                    va * (1.0 - xi) + vb * (xi - eta) + vc * eta
                } else {
                    let vd = nodal[idx(i, j + 1)];
                    va * (1.0 - eta) + vc * xi + vd * (eta - xi)
                }
            }
        }
    }

    /// Writes a plain-text listing: one node per line (index, coordinates),
    /// then one element per line (vertex indices).
    pub fn dump<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# nodes {}", self.nodes.len())?;
        for (i, p) in self.nodes.iter().enumerate() {
            if self.dim == 1 {
                writeln!(out, "{} {:.17e}", i, p[0])?;
            } else {
                writeln!(out, "{} {:.17e} {:.17e}", i, p[0], p[1])?;
            }
        }
        writeln!(out, "# elements {}", self.elements.len())?;
        for e in &self.elements {
            let v = e.vertices();
            let joined: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", joined.join(" "))?;
        }
        Ok(())
    }
}

/// Uniform interval mesh with h = 1/m and interior DOFs numbered left to
/// right.
pub fn build_mesh_1d(m: usize) -> Result<Mesh> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 subdivisions, got {m}")));
    }
    let h = 1.0 / m as f64;
    let nodes: Vec<Point> = (0..=m).map(|i| [i as f64 * h, 0.0]).collect();
    let elements: Vec<Element> = (0..m).map(|i| Element::Segment([i, i + 1])).collect();
    let mut interior_index = vec![None; m + 1];
    let mut interior_nodes = Vec::with_capacity(m - 1);
    for i in 1..m {
        interior_index[i] = Some(i - 1);
        interior_nodes.push(i);
    }
    Ok(Mesh {
        dim: 1,
        m,
        h,
        nodes,
        elements,
        interior_index,
        interior_nodes,
    })
}

/// Structured triangulation of the unit square: (m+1)² nodes, 2m² positively
/// oriented right triangles, (m−1)² interior DOFs. Every cell is split along
/// the same lower-left to upper-right diagonal.
pub fn build_mesh_2d(m: usize) -> Result<Mesh> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 subdivisions, got {m}")));
    }
    let h = 1.0 / m as f64;
    let idx = |i: usize, j: usize| j * (m + 1) + i;
    let mut nodes = Vec::with_capacity((m + 1) * (m + 1));
    for j in 0..=m {
        for i in 0..=m {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut elements = Vec::with_capacity(2 * m * m);
    for j in 0..m {
        for i in 0..m {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i + 1, j + 1);
            let d = idx(i, j + 1);
            elements.push(Element::Triangle([a, b, c]));
            elements.push(Element::Triangle([a, c, d]));
        }
    }
    let mut interior_index = vec![None; nodes.len()];
    let mut interior_nodes = Vec::with_capacity((m - 1) * (m - 1));
    for j in 1..m {
        for i in 1..m {
            interior_index[idx(i, j)] = Some(interior_nodes.len());
            interior_nodes.push(idx(i, j));
        }
    }
    Ok(Mesh {
        dim: 2,
        m,
        h,
        nodes,
        elements,
        interior_index,
        interior_nodes,
    })
}

/// Quadrature rule on the reference element: the unit interval in 1D, the
/// unit right triangle {ξ, η ≥ 0, ξ+η ≤ 1} in 2D. Weights are positive and
/// sum to the reference measure (1 resp. 1/2).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    dim: usize,
    degree: usize,
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Highest total polynomial degree integrated exactly.
    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Gauss-Legendre nodes and weights on [0, 1], computed by Newton iteration
/// on the Legendre recurrence. Accurate to machine precision for the modest
/// point counts used here (≤ 64).
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Initial guess (Chebyshev-like), then Newton on P_n.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map from [-1,1] to [0,1]; cos ordering puts large k at small x.
        nodes[n - 1 - k] = 0.5 * (x + 1.0);
        weights[n - 1 - k] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

// Symmetric positive-weight triangle rules; weights below are for a
// unit-area convention and get halved to the reference measure.
const TRI_DEG2: &[(f64, f64, f64)] = &[
    (1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0),
    (2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0),
    (1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0),
];

const TRI_DEG4: &[(f64, f64, f64)] = &[
    (0.445_948_490_915_964_9, 0.445_948_490_915_964_9, 0.223_381_589_678_011_46),
    (0.108_103_018_168_070_23, 0.445_948_490_915_964_9, 0.223_381_589_678_011_46),
    (0.445_948_490_915_964_9, 0.108_103_018_168_070_23, 0.223_381_589_678_011_46),
    (0.091_576_213_509_770_74, 0.091_576_213_509_770_74, 0.109_951_743_655_321_87),
    (0.816_847_572_980_458_5, 0.091_576_213_509_770_74, 0.109_951_743_655_321_87),
    (0.091_576_213_509_770_74, 0.816_847_572_980_458_5, 0.109_951_743_655_321_87),
];

const TRI_DEG5: &[(f64, f64, f64)] = &[
    (1.0 / 3.0, 1.0 / 3.0, 0.225),
    (0.470_142_064_105_115_1, 0.470_142_064_105_115_1, 0.132_394_152_788_506_18),
    (0.059_715_871_789_769_84, 0.470_142_064_105_115_1, 0.132_394_152_788_506_18),
    (0.470_142_064_105_115_1, 0.059_715_871_789_769_84, 0.132_394_152_788_506_18),
    (0.101_286_507_323_456_33, 0.101_286_507_323_456_33, 0.125_939_180_544_827_15),
    (0.797_426_985_353_087_3, 0.101_286_507_323_456_33, 0.125_939_180_544_827_15),
    (0.101_286_507_323_456_33, 0.797_426_985_353_087_3, 0.125_939_180_544_827_15),
];

/// Rule exact for polynomials of total degree ≤ `degree` on the reference
/// element. Supports degree ≤ 9 in 1D and ≤ 5 in 2D.
pub fn reference_quadrature(dim: usize, degree: usize) -> Result<QuadratureRule> {
    match dim {
        1 => {
            if degree > 9 {
                return Err(Error::InvalidInput(format!(
                    "1d quadrature supports degree <= 9, got {degree}"
                )));
            }
            let n = degree / 2 + 1;
            let (x, w) = gauss_legendre_unit(n);
            Ok(QuadratureRule {
                dim: 1,
                degree: 2 * n - 1,
                points: x.iter().map(|&xi| [xi, 0.0]).collect(),
                weights: w,
            })
        }
        2 => {
            let table: &[(f64, f64, f64)] = match degree {
                0 | 1 => &[(1.0 / 3.0, 1.0 / 3.0, 1.0)],
                2 => TRI_DEG2,
                3 | 4 => TRI_DEG4,
                5 => TRI_DEG5,
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "2d quadrature supports degree <= 5, got {degree}"
                    )))
                }
            };
            let exact = match degree {
                0 | 1 => 1,
                2 => 2,
                3 | 4 => 4,
                _ => 5,
            };
            Ok(QuadratureRule {
                dim: 2,
                degree: exact,
                points: table.iter().map(|&(x, y, _)| [x, y]).collect(),
                weights: table.iter().map(|&(_, _, w)| 0.5 * w).collect(),
            })
        }
        _ => Err(Error::InvalidInput(format!("unsupported dimension {dim}"))),
    }
}
