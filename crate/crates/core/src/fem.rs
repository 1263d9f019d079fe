//! P1 finite elements on [`Mesh2D`]: conductivity, Helmholtz and plane
//! elasticity, with adjoints, objectives and point evaluation.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh2d::{dist, Mesh2D, Point};
use crate::quadrature::{gauss_legendre_01, triangle_deg5, TriPoint};
use crate::region::{arcs_of, InterfacePoint};

/// Spatially varying real coefficient.
pub type Coef = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

pub fn constant(c: f64) -> Coef {
    Arc::new(move |_| c)
}

/// Field scalar: `f64` or `c64`.
pub trait Scalar:
    faer::traits::ComplexField
    + Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + From<f64>
{
    fn conj_s(self) -> Self;
    fn abs_sq(self) -> f64;
}

impl Scalar for f64 {
    fn conj_s(self) -> Self {
        self
    }
    fn abs_sq(self) -> f64 {
        self * self
    }
}

impl Scalar for c64 {
    fn conj_s(self) -> Self {
        self.conj()
    }
    fn abs_sq(self) -> f64 {
        self.norm_sqr()
    }
}

/// Part [t0, t1] of a boundary edge carrying a coefficient that is linear in
/// the edge parameter, with values `va` at t = 0 and `vb` at t = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Flat index into [`Mesh2D::boundary_edges`].
    pub edge: usize,
    pub t0: f64,
    pub t1: f64,
    pub va: f64,
    pub vb: f64,
}

impl Segment {
    pub fn full(edge: usize, va: f64, vb: f64) -> Self {
        Segment {
            edge,
            t0: 0.0,
            t1: 1.0,
            va,
            vb,
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.va *= c;
        self.vb *= c;
        self
    }
}

/// Boundary conditions of one solve.
///
/// Robin terms add `∫ c u v`, loads add `∫ g v` on the right-hand side.
/// Dirichlet entries are (dof, value) pairs imposed by elimination.
#[derive(Debug, Clone, Default)]
pub struct BcSpec {
    pub robin: Vec<Segment>,
    pub load: Vec<Segment>,
    /// Second load component for vector problems.
    pub load_y: Vec<Segment>,
    pub dirichlet: Vec<(usize, f64)>,
}

impl BcSpec {
    pub fn has_robin(&self) -> bool {
        self.robin.iter().any(|s| s.va > 0.0 || s.vb > 0.0)
    }
}

/// One segment per edge of a loop, with nodal values given per loop vertex.
pub fn nodal_segments(mesh: &Mesh2D, loop_id: usize, nodal: &[f64]) -> Vec<Segment> {
    let l = &mesh.loops[loop_id];
    let n = l.len();
    (0..n)
        .map(|i| {
            let e = mesh.edge_flat_index(crate::mesh2d::EdgeId { loop_id, index: i });
            Segment::full(e, nodal[i], nodal[(i + 1) % n])
        })
        .collect()
}

/// Constant-value segments covering exactly the region bounded by `interface`.
pub fn region_segments(mesh: &Mesh2D, loop_id: usize, interface: &[InterfacePoint], value: f64) -> Vec<Segment> {
    let l = &mesh.loops[loop_id];
    let p = l.perimeter;
    let mut pieces = Vec::new();
    for (a, b) in arcs_of(interface, p) {
        if b > p {
            pieces.push((a, p));
            pieces.push((0.0, b - p));
        } else {
            pieces.push((a, b));
        }
    }
    arc_segments(mesh, loop_id, &pieces, value)
}

/// Constant-value segments covering the given arclength intervals (each within [0, perimeter]).
pub fn arc_segments(mesh: &Mesh2D, loop_id: usize, pieces: &[(f64, f64)], value: f64) -> Vec<Segment> {
    let l = &mesh.loops[loop_id];
    let mut out = Vec::new();
    for i in 0..l.len() {
        let (s0, s1) = (l.arclength[i], l.edge_end_s(i));
        let len = s1 - s0;
        for &(a, b) in pieces {
            let lo = a.max(s0);
            let hi = b.min(s1);
            if hi > lo {
                let e = mesh.edge_flat_index(crate::mesh2d::EdgeId { loop_id, index: i });
                out.push(Segment {
                    edge: e,
                    t0: ((lo - s0) / len).clamp(0.0, 1.0),
                    t1: ((hi - s0) / len).clamp(0.0, 1.0),
                    va: value,
                    vb: value,
                });
            }
        }
    }
    out
}

/// Full-edge constant segments on every boundary edge with the given label.
pub fn label_segments(mesh: &Mesh2D, label: u32, value: f64) -> Vec<Segment> {
    mesh.boundary_edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label == label)
        .map(|(k, _)| Segment::full(k, value, value))
        .collect()
}

/// Vertices of the flagged boundary edges (flat order), sorted and deduplicated.
pub fn edge_vertices(mesh: &Mesh2D, flags: &[bool]) -> Vec<usize> {
    let mut v: Vec<usize> = mesh
        .boundary_edges()
        .iter()
        .zip(flags)
        .filter(|(_, &f)| f)
        .flat_map(|(e, _)| [e.a, e.b])
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Which model produced a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    Conductivity,
    Helmholtz,
    Elasticity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValues {
    Real(Vec<f64>),
    Complex(Vec<c64>),
    Vector(Vec<[f64; 2]>),
}

/// Nodal solution with solve metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FemField {
    pub values: FieldValues,
    pub model: Model,
    pub eps_smooth: Option<f64>,
    pub objective: Option<String>,
    /// Relative residual of the linear solve.
    pub residual: f64,
}

impl FemField {
    pub fn real(&self) -> &[f64] {
        match &self.values {
            FieldValues::Real(v) => v,
            _ => panic!("field is not real scalar"),
        }
    }

    pub fn complex(&self) -> &[c64] {
        match &self.values {
            FieldValues::Complex(v) => v,
            _ => panic!("field is not complex scalar"),
        }
    }

    pub fn vector(&self) -> &[[f64; 2]] {
        match &self.values {
            FieldValues::Vector(v) => v,
            _ => panic!("field is not a vector field"),
        }
    }

    pub fn len(&self) -> usize {
        match &self.values {
            FieldValues::Real(v) => v.len(),
            FieldValues::Complex(v) => v.len(),
            FieldValues::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        match &self.values {
            FieldValues::Real(v) => v.iter().all(|x| x.is_finite()),
            FieldValues::Complex(v) => v.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
            FieldValues::Vector(v) => v.iter().all(|x| x[0].is_finite() && x[1].is_finite()),
        }
    }

    /// Interleaved dof vector (2 per vertex for vector fields, real part only otherwise).
    pub fn dofs(&self) -> Vec<f64> {
        match &self.values {
            FieldValues::Real(v) => v.clone(),
            FieldValues::Complex(v) => v.iter().map(|z| z.re).collect(),
            FieldValues::Vector(v) => v.iter().flat_map(|x| [x[0], x[1]]).collect(),
        }
    }
}

/// Point value of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldValue {
    Real(f64),
    Complex(c64),
    Vector([f64; 2]),
}

// ---------------------------------------------------------------------------
// Local element quantities

/// Gradients of the three barycentric functions and the triangle area.
pub fn p1_gradients(tri: [Point; 3]) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = tri;
    let d = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let g = [
        [(b[1] - c[1]) / d, (c[0] - b[0]) / d],
        [(c[1] - a[1]) / d, (a[0] - c[0]) / d],
        [(a[1] - b[1]) / d, (b[0] - a[0]) / d],
    ];
    (g, 0.5 * d)
}

fn map_point(tri: &[Point; 3], q: &TriPoint) -> (Point, [f64; 3]) {
    let l = [1.0 - q.xi - q.eta, q.xi, q.eta];
    let x = [
        l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
        l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
    ];
    (x, l)
}

type Trip = (usize, usize, f64);

fn par_triangles<F>(mesh: &Mesh2D, f: F) -> Vec<Trip>
where
    F: Fn(usize, &mut Vec<Trip>) + Sync,
{
    let chunks: Vec<Vec<Trip>> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let mut v = Vec::with_capacity(9);
            f(t, &mut v);
            v
        })
        .collect();
    chunks.concat()
}

/// Scalar stiffness `∫ γ ∇φ_i · ∇φ_j`.
pub fn assemble_stiffness(mesh: &Mesh2D, gamma: &Coef) -> Vec<Trip> {
    let rule = triangle_deg5();
    par_triangles(mesh, |t, out| {
        let tri = mesh.tri_points(t);
        let (g, area) = p1_gradients(tri);
        let gint: f64 = rule
            .iter()
            .map(|q| 2.0 * q.w * gamma(map_point(&tri, q).0))
            .sum::<f64>()
            * area;
        let idx = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                out.push((idx[i], idx[j], gint * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
            }
        }
    })
}

/// Scalar mass `∫ c φ_i φ_j`.
pub fn assemble_mass(mesh: &Mesh2D, c: &Coef) -> Vec<Trip> {
    let rule = triangle_deg5();
    par_triangles(mesh, |t, out| {
        let tri = mesh.tri_points(t);
        let area = mesh.tri_area(t);
        let idx = mesh.triangles[t];
        let mut m = [[0.0; 3]; 3];
        for q in &rule {
            let (x, l) = map_point(&tri, q);
            let w = 2.0 * q.w * area * c(x);
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += w * l[i] * l[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                out.push((idx[i], idx[j], m[i][j]));
            }
        }
    })
}

/// Unit-coefficient mass matrix with exact entries.
pub fn mass_matrix(mesh: &Mesh2D) -> Vec<Trip> {
    let mut out = Vec::with_capacity(9 * mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let a = mesh.tri_area(t);
        let idx = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                out.push((idx[i], idx[j], if i == j { a / 6.0 } else { a / 12.0 }));
            }
        }
    }
    out
}

fn gauss2() -> [(f64, f64); 2] {
    let d = 0.5 / 3f64.sqrt();
    [(0.5 - d, 0.5), (0.5 + d, 0.5)]
}

/// Boundary mass `∫ c φ_i φ_j ds` over segments (two-point Gauss, exact for linear c).
pub fn assemble_boundary_mass(mesh: &Mesh2D, segs: &[Segment]) -> Vec<Trip> {
    let edges = mesh.boundary_edges();
    let mut out = Vec::with_capacity(4 * segs.len());
    for s in segs {
        let e = &edges[s.edge];
        let len = dist(mesh.vertices[e.a], mesh.vertices[e.b]) * (s.t1 - s.t0);
        let mut m = [[0.0; 2]; 2];
        for (x, w) in gauss2() {
            let t = s.t0 + x * (s.t1 - s.t0);
            let c = s.va + t * (s.vb - s.va);
            let phi = [1.0 - t, t];
            for i in 0..2 {
                for j in 0..2 {
                    m[i][j] += w * len * c * phi[i] * phi[j];
                }
            }
        }
        let v = [e.a, e.b];
        for i in 0..2 {
            for j in 0..2 {
                out.push((v[i], v[j], m[i][j]));
            }
        }
    }
    out
}

/// Boundary load `∫ g φ_i ds` over segments.
pub fn boundary_load(mesh: &Mesh2D, segs: &[Segment], n: usize) -> Vec<f64> {
    let edges = mesh.boundary_edges();
    let mut b = vec![0.0; n];
    for s in segs {
        let e = &edges[s.edge];
        let len = dist(mesh.vertices[e.a], mesh.vertices[e.b]) * (s.t1 - s.t0);
        for (x, w) in gauss2() {
            let t = s.t0 + x * (s.t1 - s.t0);
            let g = s.va + t * (s.vb - s.va);
            b[e.a] += w * len * g * (1.0 - t);
            b[e.b] += w * len * g * t;
        }
    }
    b
}

/// Volume load `∫ f φ_i` (degree-5 rule).
pub fn volume_load(mesh: &Mesh2D, f: &Coef) -> Vec<f64> {
    let rule = triangle_deg5();
    let mut b = vec![0.0; mesh.n_vertices()];
    let local: Vec<[f64; 3]> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let tri = mesh.tri_points(t);
            let area = mesh.tri_area(t);
            let mut r = [0.0; 3];
            for q in &rule {
                let (x, l) = map_point(&tri, q);
                let w = 2.0 * q.w * area * f(x);
                for i in 0..3 {
                    r[i] += w * l[i];
                }
            }
            r
        })
        .collect();
    for (t, r) in local.iter().enumerate() {
        for i in 0..3 {
            b[mesh.triangles[t][i]] += r[i];
        }
    }
    b
}

/// Plane elasticity stiffness with interleaved dofs (2v, 2v+1).
pub fn assemble_elasticity(mesh: &Mesh2D, lambda: f64, mu: f64) -> Vec<Trip> {
    par_triangles(mesh, |t, out| {
        let (g, area) = p1_gradients(mesh.tri_points(t));
        let idx = mesh.triangles[t];
        // B rows: e_xx, e_yy, 2 e_xy; columns: (u_x, u_y) per local vertex.
        let mut bm = [[0.0; 6]; 3];
        for i in 0..3 {
            bm[0][2 * i] = g[i][0];
            bm[1][2 * i + 1] = g[i][1];
            bm[2][2 * i] = g[i][1];
            bm[2][2 * i + 1] = g[i][0];
        }
        let d = [
            [lambda + 2.0 * mu, lambda, 0.0],
            [lambda, lambda + 2.0 * mu, 0.0],
            [0.0, 0.0, mu],
        ];
        for a in 0..6 {
            for b in 0..6 {
                let mut s = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        s += bm[p][a] * d[p][q] * bm[q][b];
                    }
                }
                let ga = 2 * idx[a / 2] + a % 2;
                let gb = 2 * idx[b / 2] + b % 2;
                out.push((ga, gb, area * s));
            }
        }
    })
}

/// Lamé parameters of plane stress from Young's modulus and Poisson ratio.
pub fn plane_stress(e: f64, nu: f64) -> (f64, f64) {
    (e * nu / (1.0 - nu * nu), e / (2.0 * (1.0 + nu)))
}

fn vectorize(trips: &[Trip]) -> Vec<Trip> {
    let mut out = Vec::with_capacity(2 * trips.len());
    for &(i, j, v) in trips {
        out.push((2 * i, 2 * j, v));
        out.push((2 * i + 1, 2 * j + 1, v));
    }
    out
}

fn interleave(bx: &[f64], by: &[f64]) -> Vec<f64> {
    bx.iter().zip(by).flat_map(|(&x, &y)| [x, y]).collect()
}

// ---------------------------------------------------------------------------
// Linear systems

/// Sparse direct solver with Dirichlet elimination.
pub struct LinearSystem<T: Scalar> {
    n: usize,
    free_index: Vec<Option<usize>>,
    free: Vec<usize>,
    fixed: Vec<(usize, T)>,
    a_ff: Vec<(usize, usize, T)>,
    a_fd: Vec<(usize, usize, T)>,
    lu: faer::sparse::linalg::solvers::Lu<usize, T>,
}

impl<T: Scalar> LinearSystem<T> {
    /// Factorizes the free-free block of the matrix given by triplets.
    pub fn new(n: usize, trips: &[(usize, usize, T)], dirichlet: &[(usize, T)]) -> Result<Self> {
        let mut free_index = vec![None; n];
        let mut is_fixed = vec![false; n];
        let mut fixed = Vec::new();
        for &(d, v) in dirichlet {
            if !is_fixed[d] {
                is_fixed[d] = true;
                fixed.push((d, v));
            }
        }
        let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();
        for (k, &i) in free.iter().enumerate() {
            free_index[i] = Some(k);
        }
        let mut a_ff = Vec::with_capacity(trips.len());
        let mut a_fd = Vec::new();
        for &(i, j, v) in trips {
            if let Some(fi) = free_index[i] {
                match free_index[j] {
                    Some(fj) => a_ff.push((fi, fj, v)),
                    None => a_fd.push((fi, j, v)),
                }
            }
        }
        if free.is_empty() {
            return Err(Error::Solvability("every degree of freedom is fixed".into()));
        }
        let entries: Vec<Triplet<usize, usize, T>> = a_ff.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let mat = SparseColMat::<usize, T>::try_new_from_triplets(free.len(), free.len(), &entries)
            .map_err(|e| Error::Solver(format!("sparse matrix construction failed: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;
        Ok(LinearSystem {
            n,
            free_index,
            free,
            fixed,
            a_ff,
            a_fd,
            lu,
        })
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    fn apply(&self, x: &[T], adjoint: bool) -> Vec<T> {
        let mut y = vec![T::from(0.0); x.len()];
        for &(i, j, v) in &self.a_ff {
            if adjoint {
                y[j] += v.conj_s() * x[i];
            } else {
                y[i] += v * x[j];
            }
        }
        y
    }

    fn raw_solve(&self, rhs: &[T], adjoint: bool) -> Result<(Vec<T>, f64)> {
        let m = rhs.len();
        let mut b = Mat::<T>::zeros(m, 1);
        for i in 0..m {
            b[(i, 0)] = rhs[i];
        }
        let mut x = b.clone();
        if adjoint {
            self.lu.solve_adjoint_in_place(x.as_mut());
        } else {
            self.lu.solve_in_place(x.as_mut());
        }
        let mut sol: Vec<T> = (0..m).map(|i| x[(i, 0)]).collect();
        let norm_b = rhs.iter().map(|v| v.abs_sq()).sum::<f64>().sqrt();
        let mut res = self.residual_of(&sol, rhs, adjoint);
        // one step of iterative refinement
        if norm_b > 0.0 && res > 1e-13 * norm_b {
            let ax = self.apply(&sol, adjoint);
            let mut r = Mat::<T>::zeros(m, 1);
            for i in 0..m {
                r[(i, 0)] = rhs[i] - ax[i];
            }
            if adjoint {
                self.lu.solve_adjoint_in_place(r.as_mut());
            } else {
                self.lu.solve_in_place(r.as_mut());
            }
            for i in 0..m {
                sol[i] += r[(i, 0)];
            }
            res = self.residual_of(&sol, rhs, adjoint);
        }
        let rel = if norm_b > 0.0 { res / norm_b } else { res };
        if !rel.is_finite() || sol.iter().any(|v| !v.abs_sq().is_finite()) {
            return Err(Error::Solvability("linear system is singular".into()));
        }
        if rel > 1e-8 {
            return Err(Error::Solvability(format!(
                "relative residual {rel:e} after factorization"
            )));
        }
        Ok((sol, rel))
    }

    fn residual_of(&self, x: &[T], rhs: &[T], adjoint: bool) -> f64 {
        let ax = self.apply(x, adjoint);
        ax.iter().zip(rhs).map(|(&a, &b)| (a - b).abs_sq()).sum::<f64>().sqrt()
    }

    /// Solves `A u = b` with the stored Dirichlet values.
    pub fn solve(&self, b: &[T]) -> Result<(Vec<T>, f64)> {
        let mut rhs: Vec<T> = self.free.iter().map(|&i| b[i]).collect();
        let fixed_val: std::collections::HashMap<usize, T> = self.fixed.iter().cloned().collect();
        for &(fi, j, v) in &self.a_fd {
            rhs[fi] = rhs[fi] - v * fixed_val[&j];
        }
        let (xf, rel) = self.raw_solve(&rhs, false)?;
        let mut u = vec![T::from(0.0); self.n];
        for (k, &i) in self.free.iter().enumerate() {
            u[i] = xf[k];
        }
        for &(d, v) in &self.fixed {
            u[d] = v;
        }
        Ok((u, rel))
    }

    /// Solves `A^H p = b` with homogeneous Dirichlet values.
    pub fn solve_adjoint(&self, b: &[T]) -> Result<(Vec<T>, f64)> {
        let rhs: Vec<T> = self.free.iter().map(|&i| b[i]).collect();
        let (xf, rel) = self.raw_solve(&rhs, true)?;
        let mut p = vec![T::from(0.0); self.n];
        for (k, &i) in self.free.iter().enumerate() {
            p[i] = xf[k];
        }
        Ok((p, rel))
    }

    pub fn is_free(&self, dof: usize) -> bool {
        self.free_index[dof].is_some()
    }
}

fn to_scalar<T: Scalar>(trips: &[Trip], factor: T) -> impl Iterator<Item = (usize, usize, T)> + '_ {
    trips.iter().map(move |&(i, j, v)| (i, j, factor * T::from(v)))
}

// ---------------------------------------------------------------------------
// Objectives

pub type PointwiseFn = Arc<dyn Fn(f64, Point) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn([f64; 2], Point) -> f64 + Send + Sync>;
pub type GradDerivFn = Arc<dyn Fn([f64; 2], Point) -> [f64; 2] + Send + Sync>;

/// Objective functional J(u).
#[derive(Clone)]
pub enum Objective {
    /// `∫ j(u)` with `j` and `j'` supplied (real scalar fields).
    Pointwise {
        name: String,
        j: PointwiseFn,
        dj: PointwiseFn,
    },
    /// `∫ j(∇u)` with `j` and its gradient supplied (real scalar fields).
    Gradient { name: String, j: GradFn, dj: GradDerivFn },
    /// `∫ |u|^2` for real, complex or vector fields.
    AbsSquare,
    /// `∫ |u|^2 / (2 Vol)`.
    MeanSquare,
}

impl Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Objective({})", self.name())
    }
}

impl Objective {
    pub fn name(&self) -> String {
        match self {
            Objective::Pointwise { name, .. } | Objective::Gradient { name, .. } => name.clone(),
            Objective::AbsSquare => "abs_square".into(),
            Objective::MeanSquare => "mean_square".into(),
        }
    }

    /// `j(∇u) = -γ |∇u|^2`.
    pub fn gradient_energy(gamma: Coef) -> Self {
        let g2 = gamma.clone();
        Objective::Gradient {
            name: "gradient_energy".into(),
            j: Arc::new(move |v, x| -gamma(x) * (v[0] * v[0] + v[1] * v[1])),
            dj: Arc::new(move |v, x| {
                let c = -2.0 * g2(x);
                [c * v[0], c * v[1]]
            }),
        }
    }
}

/// Value of the objective for a field.
pub fn evaluate_objective(obj: &Objective, u: &FemField, mesh: &Mesh2D) -> f64 {
    let rule = triangle_deg5();
    let vol = mesh.total_area();
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let tri = mesh.tri_points(t);
        let idx = mesh.triangles[t];
        let area = mesh.tri_area(t);
        match obj {
            Objective::Gradient { j, .. } => {
                let (g, _) = p1_gradients(tri);
                let uv = u.real();
                let grad = [
                    (0..3).map(|i| g[i][0] * uv[idx[i]]).sum::<f64>(),
                    (0..3).map(|i| g[i][1] * uv[idx[i]]).sum::<f64>(),
                ];
                for q in &rule {
                    let (x, _) = map_point(&tri, q);
                    total += 2.0 * q.w * area * j(grad, x);
                }
            }
            _ => {
                for q in &rule {
                    let (x, l) = map_point(&tri, q);
                    let w = 2.0 * q.w * area;
                    let val = match (&u.values, obj) {
                        (FieldValues::Real(v), Objective::Pointwise { j, .. }) => {
                            j((0..3).map(|i| l[i] * v[idx[i]]).sum(), x)
                        }
                        (FieldValues::Real(v), _) => (0..3).map(|i| l[i] * v[idx[i]]).sum::<f64>().powi(2),
                        (FieldValues::Complex(v), _) => {
                            let z: c64 = (0..3).map(|i| v[idx[i]] * l[i]).sum();
                            z.norm_sqr()
                        }
                        (FieldValues::Vector(v), _) => {
                            let a: f64 = (0..3).map(|i| l[i] * v[idx[i]][0]).sum();
                            let b: f64 = (0..3).map(|i| l[i] * v[idx[i]][1]).sum();
                            a * a + b * b
                        }
                    };
                    total += w * val;
                }
            }
        }
    }
    if let Objective::MeanSquare = obj {
        total / (2.0 * vol)
    } else {
        total
    }
}

fn mass_apply<T: Scalar>(mesh: &Mesh2D, u: &[T]) -> Vec<T> {
    let mut out = vec![T::from(0.0); u.len()];
    for (i, j, v) in mass_matrix(mesh) {
        out[i] += T::from(v) * u[j];
    }
    out
}

fn scale_vec<T: Scalar>(v: Vec<T>, c: f64) -> Vec<T> {
    v.into_iter().map(|x| x * T::from(c)).collect()
}

/// dJ/dU for a real scalar field.
pub fn objective_gradient_real(obj: &Objective, u: &[f64], mesh: &Mesh2D) -> Vec<f64> {
    let rule = triangle_deg5();
    match obj {
        Objective::AbsSquare => scale_vec(mass_apply(mesh, u), 2.0),
        Objective::MeanSquare => scale_vec(mass_apply(mesh, u), 1.0 / mesh.total_area()),
        Objective::Pointwise { dj, .. } => {
            let mut b = vec![0.0; u.len()];
            for t in 0..mesh.n_triangles() {
                let tri = mesh.tri_points(t);
                let idx = mesh.triangles[t];
                let area = mesh.tri_area(t);
                for q in &rule {
                    let (x, l) = map_point(&tri, q);
                    let uq: f64 = (0..3).map(|i| l[i] * u[idx[i]]).sum();
                    let w = 2.0 * q.w * area * dj(uq, x);
                    for i in 0..3 {
                        b[idx[i]] += w * l[i];
                    }
                }
            }
            b
        }
        Objective::Gradient { dj, .. } => {
            let mut b = vec![0.0; u.len()];
            for t in 0..mesh.n_triangles() {
                let tri = mesh.tri_points(t);
                let idx = mesh.triangles[t];
                let (g, area) = p1_gradients(tri);
                let grad = [
                    (0..3).map(|i| g[i][0] * u[idx[i]]).sum::<f64>(),
                    (0..3).map(|i| g[i][1] * u[idx[i]]).sum::<f64>(),
                ];
                let mut d = [0.0; 2];
                for q in &rule {
                    let (x, _) = map_point(&tri, q);
                    let v = dj(grad, x);
                    d[0] += 2.0 * q.w * area * v[0];
                    d[1] += 2.0 * q.w * area * v[1];
                }
                for i in 0..3 {
                    b[idx[i]] += d[0] * g[i][0] + d[1] * g[i][1];
                }
            }
            b
        }
    }
}

/// The vector `M j'(u)` for complex fields, with `j' = 2u` for [`Objective::AbsSquare`].
pub fn objective_gradient_complex(obj: &Objective, u: &[c64], mesh: &Mesh2D) -> Result<Vec<c64>> {
    match obj {
        Objective::AbsSquare => Ok(scale_vec(mass_apply(mesh, u), 2.0)),
        Objective::MeanSquare => Ok(scale_vec(mass_apply(mesh, u), 1.0 / mesh.total_area())),
        _ => Err(Error::Consistency("objective not supported for complex fields".into())),
    }
}

/// dJ/dU (interleaved) for vector fields.
pub fn objective_gradient_vector(obj: &Objective, u: &[[f64; 2]], mesh: &Mesh2D) -> Result<Vec<f64>> {
    let ux: Vec<f64> = u.iter().map(|v| v[0]).collect();
    let uy: Vec<f64> = u.iter().map(|v| v[1]).collect();
    let c = match obj {
        Objective::AbsSquare => 2.0,
        Objective::MeanSquare => 1.0 / mesh.total_area(),
        _ => return Err(Error::Consistency("objective not supported for vector fields".into())),
    };
    Ok(interleave(
        &scale_vec(mass_apply(mesh, &ux), c),
        &scale_vec(mass_apply(mesh, &uy), c),
    ))
}

// ---------------------------------------------------------------------------
// Problems

/// Conductivity data: `-div(γ ∇u) = f`.
#[derive(Clone)]
pub struct Conductivity {
    pub gamma: Coef,
    pub f: Coef,
}

/// Factorized conductivity system for one set of boundary conditions.
pub struct ConductivitySolver<'m> {
    pub mesh: &'m Mesh2D,
    pub system: LinearSystem<f64>,
    rhs: Vec<f64>,
    eps_smooth: Option<f64>,
}

impl<'m> ConductivitySolver<'m> {
    pub fn new(mesh: &'m Mesh2D, data: &Conductivity, bc: &BcSpec, eps_smooth: Option<f64>) -> Result<Self> {
        if bc.dirichlet.is_empty() && !bc.has_robin() {
            return Err(Error::Solvability(
                "no Dirichlet or Robin condition: pure Neumann conductivity is singular".into(),
            ));
        }
        let n = mesh.n_vertices();
        let mut trips = assemble_stiffness(mesh, &data.gamma);
        trips.extend(assemble_boundary_mass(mesh, &bc.robin));
        let system = LinearSystem::new(n, &trips, &bc.dirichlet)?;
        let mut rhs = volume_load(mesh, &data.f);
        for (r, b) in rhs.iter_mut().zip(boundary_load(mesh, &bc.load, n)) {
            *r += b;
        }
        Ok(ConductivitySolver {
            mesh,
            system,
            rhs,
            eps_smooth,
        })
    }

    pub fn state(&self) -> Result<FemField> {
        let (u, residual) = self.system.solve(&self.rhs)?;
        Ok(FemField {
            values: FieldValues::Real(u),
            model: Model::Conductivity,
            eps_smooth: self.eps_smooth,
            objective: None,
            residual,
        })
    }

    /// Adjoint with source `-j'(u)` and homogeneous Dirichlet values.
    pub fn adjoint(&self, u: &FemField, obj: &Objective) -> Result<FemField> {
        let g = objective_gradient_real(obj, u.real(), self.mesh);
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let (p, residual) = self.system.solve_adjoint(&rhs)?;
        Ok(FemField {
            values: FieldValues::Real(p),
            model: Model::Conductivity,
            eps_smooth: self.eps_smooth,
            objective: Some(obj.name()),
            residual,
        })
    }
}

/// Smoothed conductivity state: Robin coefficient per vertex of `loop_id`, Neumann loads on `neumann`.
pub fn solve_conductivity_smoothed(
    mesh: &Mesh2D,
    data: &Conductivity,
    neumann: &[Segment],
    robin: &crate::smoothing::RobinCoefficient,
    loop_id: usize,
) -> Result<FemField> {
    let bc = BcSpec {
        robin: nodal_segments(mesh, loop_id, &robin.values),
        load: neumann.to_vec(),
        ..Default::default()
    };
    ConductivitySolver::new(mesh, data, &bc, Some(robin.eps))?.state()
}

/// Adjoint of [`solve_conductivity_smoothed`].
pub fn solve_conductivity_adjoint(
    mesh: &Mesh2D,
    data: &Conductivity,
    robin: &crate::smoothing::RobinCoefficient,
    loop_id: usize,
    u: &FemField,
    obj: &Objective,
) -> Result<FemField> {
    let bc = BcSpec {
        robin: nodal_segments(mesh, loop_id, &robin.values),
        ..Default::default()
    };
    ConductivitySolver::new(mesh, data, &bc, Some(robin.eps))?.adjoint(u, obj)
}

/// Sharp conductivity state: Dirichlet value `u_d` on the vertices of flagged boundary edges.
pub fn solve_conductivity_sharp(
    mesh: &Mesh2D,
    data: &Conductivity,
    neumann: &[Segment],
    dirichlet_edges: &[bool],
    u_d: f64,
) -> Result<FemField> {
    let dirichlet = edge_vertices(mesh, dirichlet_edges)
        .into_iter()
        .map(|v| (v, u_d))
        .collect();
    let bc = BcSpec {
        load: neumann.to_vec(),
        dirichlet,
        ..Default::default()
    };
    ConductivitySolver::new(mesh, data, &bc, None)?.state()
}

/// Helmholtz data: `-div(γ ∇u) - k^2 u = f`, impedance `γ ∂u/∂n + i (k/Z) u = 0` on Γ_R.
#[derive(Clone)]
pub struct Helmholtz {
    pub gamma: Coef,
    pub k: f64,
    pub z: f64,
    pub f: Coef,
    /// Imaginary part of the source, if any.
    pub f_im: Option<Coef>,
}

/// Factorized Helmholtz system.
pub struct HelmholtzSolver<'m> {
    pub mesh: &'m Mesh2D,
    pub system: LinearSystem<c64>,
    rhs: Vec<c64>,
}

impl<'m> HelmholtzSolver<'m> {
    /// `impedance` segments carry the indicator of Γ_R (value 1 for full absorption weight).
    pub fn new(mesh: &'m Mesh2D, data: &Helmholtz, impedance: &[Segment]) -> Result<Self> {
        if !(data.k > 0.0 && data.z > 0.0) {
            return Err(Error::param("wavenumber and impedance must be positive"));
        }
        if impedance.is_empty() {
            return Err(Error::Solvability("impedance boundary is empty".into()));
        }
        let n = mesh.n_vertices();
        let k2 = data.k * data.k;
        let mut trips: Vec<(usize, usize, c64)> =
            to_scalar(&assemble_stiffness(mesh, &data.gamma), c64::new(1.0, 0.0)).collect();
        trips.extend(to_scalar(&mass_matrix(mesh), c64::new(-k2, 0.0)));
        trips.extend(to_scalar(
            &assemble_boundary_mass(mesh, impedance),
            c64::new(0.0, data.k / data.z),
        ));
        let system = LinearSystem::new(n, &trips, &[])?;
        let re = volume_load(mesh, &data.f);
        let im = match &data.f_im {
            Some(g) => volume_load(mesh, g),
            None => vec![0.0; n],
        };
        let rhs = re.into_iter().zip(im).map(|(a, b)| c64::new(a, b)).collect();
        Ok(HelmholtzSolver { mesh, system, rhs })
    }

    pub fn state(&self) -> Result<FemField> {
        let (u, residual) = self.system.solve(&self.rhs)?;
        Ok(FemField {
            values: FieldValues::Complex(u),
            model: Model::Helmholtz,
            eps_smooth: None,
            objective: None,
            residual,
        })
    }

    /// Adjoint: conjugate-transposed system with source `-M j'(u)`.
    pub fn adjoint(&self, u: &FemField, obj: &Objective) -> Result<FemField> {
        let g = objective_gradient_complex(obj, u.complex(), self.mesh)?;
        let rhs: Vec<c64> = g.iter().map(|x| -x).collect();
        let (p, residual) = self.system.solve_adjoint(&rhs)?;
        Ok(FemField {
            values: FieldValues::Complex(p),
            model: Model::Helmholtz,
            eps_smooth: None,
            objective: Some(obj.name()),
            residual,
        })
    }
}

pub fn solve_helmholtz(mesh: &Mesh2D, data: &Helmholtz, impedance: &[Segment]) -> Result<FemField> {
    HelmholtzSolver::new(mesh, data, impedance)?.state()
}

pub fn solve_helmholtz_adjoint(
    mesh: &Mesh2D,
    data: &Helmholtz,
    impedance: &[Segment],
    u: &FemField,
    obj: &Objective,
) -> Result<FemField> {
    HelmholtzSolver::new(mesh, data, impedance)?.adjoint(u, obj)
}

/// Plane elasticity data: `-div(A e(u)) = f`, tractions from [`BcSpec::load`] / [`BcSpec::load_y`].
#[derive(Clone)]
pub struct Elasticity {
    pub lambda: f64,
    pub mu: f64,
    pub f: [Coef; 2],
}

/// Factorized elasticity system.
pub struct ElasticitySolver<'m> {
    pub mesh: &'m Mesh2D,
    pub system: LinearSystem<f64>,
    rhs: Vec<f64>,
    eps_smooth: Option<f64>,
}

impl<'m> ElasticitySolver<'m> {
    /// Robin segments act on both components; Dirichlet entries use interleaved dofs.
    pub fn new(mesh: &'m Mesh2D, data: &Elasticity, bc: &BcSpec, eps_smooth: Option<f64>) -> Result<Self> {
        if !(data.mu > 0.0 && data.lambda > -data.mu) {
            return Err(Error::param("elastic moduli must be positive"));
        }
        let fixed: std::collections::HashSet<usize> = bc.dirichlet.iter().map(|d| d.0).collect();
        if !bc.has_robin() && fixed.len() < 3 {
            return Err(Error::Solvability("rigid-body motions are not constrained".into()));
        }
        let n = mesh.n_vertices();
        let mut trips = assemble_elasticity(mesh, data.lambda, data.mu);
        trips.extend(vectorize(&assemble_boundary_mass(mesh, &bc.robin)));
        let system = LinearSystem::new(2 * n, &trips, &bc.dirichlet)?;
        let fx = volume_load(mesh, &data.f[0]);
        let fy = volume_load(mesh, &data.f[1]);
        let gx = boundary_load(mesh, &bc.load, n);
        let gy = boundary_load(mesh, &bc.load_y, n);
        let bx: Vec<f64> = fx.iter().zip(&gx).map(|(a, b)| a + b).collect();
        let by: Vec<f64> = fy.iter().zip(&gy).map(|(a, b)| a + b).collect();
        Ok(ElasticitySolver {
            mesh,
            system,
            rhs: interleave(&bx, &by),
            eps_smooth,
        })
    }

    fn to_field(&self, v: Vec<f64>, residual: f64, objective: Option<String>) -> FemField {
        let vals = v.chunks(2).map(|c| [c[0], c[1]]).collect();
        FemField {
            values: FieldValues::Vector(vals),
            model: Model::Elasticity,
            eps_smooth: self.eps_smooth,
            objective,
            residual,
        }
    }

    pub fn state(&self) -> Result<FemField> {
        let (u, residual) = self.system.solve(&self.rhs)?;
        Ok(self.to_field(u, residual, None))
    }

    pub fn adjoint(&self, u: &FemField, obj: &Objective) -> Result<FemField> {
        let g = objective_gradient_vector(obj, u.vector(), self.mesh)?;
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let (p, residual) = self.system.solve_adjoint(&rhs)?;
        Ok(self.to_field(p, residual, Some(obj.name())))
    }
}

pub fn solve_elasticity(mesh: &Mesh2D, data: &Elasticity, bc: &BcSpec) -> Result<FemField> {
    ElasticitySolver::new(mesh, data, bc, None)?.state()
}

pub fn solve_elasticity_adjoint(
    mesh: &Mesh2D,
    data: &Elasticity,
    bc: &BcSpec,
    u: &FemField,
    obj: &Objective,
) -> Result<FemField> {
    ElasticitySolver::new(mesh, data, bc, None)?.adjoint(u, obj)
}

/// Interleaved Dirichlet entries fixing both components at the given vertices.
pub fn clamp_dofs(vertices: &[usize], value: [f64; 2]) -> Vec<(usize, f64)> {
    vertices
        .iter()
        .flat_map(|&v| [(2 * v, value[0]), (2 * v + 1, value[1])])
        .collect()
}

// ---------------------------------------------------------------------------
// Point evaluation

/// Containing triangle and barycentric weights of `p` (boundary edges first).
pub fn locate(mesh: &Mesh2D, p: Point) -> Result<(usize, [f64; 3])> {
    let (lo, hi) = mesh.edge_length_range();
    let _ = lo;
    let tol = 1e-10 * hi.max(1.0);
    // boundary: closest boundary edge within tolerance
    for e in mesh.boundary_edges() {
        let (a, b) = (mesh.vertices[e.a], mesh.vertices[e.b]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let l2 = d[0] * d[0] + d[1] * d[1];
        let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0);
        let q = [a[0] + t * d[0], a[1] + t * d[1]];
        if dist(p, q) <= tol {
            let owner = mesh
                .triangles
                .iter()
                .position(|tr| (0..3).any(|k| tr[k] == e.a && tr[(k + 1) % 3] == e.b))
                .ok_or_else(|| Error::Topology("boundary edge without triangle".into()))?;
            let tr = mesh.triangles[owner];
            let mut w = [0.0; 3];
            for k in 0..3 {
                if tr[k] == e.a {
                    w[k] = 1.0 - t;
                } else if tr[k] == e.b {
                    w[k] = t;
                }
            }
            return Ok((owner, w));
        }
    }
    let rel = 1e-12;
    for t in 0..mesh.n_triangles() {
        let tri = mesh.tri_points(t);
        let (xmin, xmax) = (
            tri.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min),
            tri.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max),
        );
        let (ymin, ymax) = (
            tri.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min),
            tri.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max),
        );
        if p[0] < xmin - tol || p[0] > xmax + tol || p[1] < ymin - tol || p[1] > ymax + tol {
            continue;
        }
        let bc = mesh.barycentric(t, p);
        if bc.iter().all(|&x| x >= -rel) {
            return Ok((t, bc));
        }
    }
    Err(Error::geom(format!("point ({}, {}) is outside the mesh", p[0], p[1])))
}

/// Barycentric interpolation of nodal values at `p`.
pub fn interpolate<T: Copy + Add<Output = T> + Mul<f64, Output = T>>(
    mesh: &Mesh2D,
    values: &[T],
    p: Point,
) -> Result<T> {
    let (t, w) = locate(mesh, p)?;
    let idx = mesh.triangles[t];
    Ok(values[idx[0]] * w[0] + values[idx[1]] * w[1] + values[idx[2]] * w[2])
}

pub fn interpolate_at(u: &FemField, mesh: &Mesh2D, p: Point) -> Result<FieldValue> {
    let (t, w) = locate(mesh, p)?;
    let idx = mesh.triangles[t];
    Ok(match &u.values {
        FieldValues::Real(v) => FieldValue::Real((0..3).map(|i| w[i] * v[idx[i]]).sum()),
        FieldValues::Complex(v) => FieldValue::Complex((0..3).map(|i| v[idx[i]] * w[i]).sum()),
        FieldValues::Vector(v) => FieldValue::Vector([
            (0..3).map(|i| w[i] * v[idx[i]][0]).sum(),
            (0..3).map(|i| w[i] * v[idx[i]][1]).sum(),
        ]),
    })
}

/// L² norm of a nodal real function (exact for P1).
pub fn l2_norm(mesh: &Mesh2D, v: &[f64]) -> f64 {
    v.iter()
        .zip(mass_apply(mesh, v))
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// L² distance between the P1 interpolant of `u` and an exact function (degree-5 rule).
pub fn l2_error(mesh: &Mesh2D, u: &[f64], exact: &dyn Fn(Point) -> f64) -> f64 {
    let rule = triangle_deg5();
    let mut e = 0.0;
    for t in 0..mesh.n_triangles() {
        let tri = mesh.tri_points(t);
        let idx = mesh.triangles[t];
        let area = mesh.tri_area(t);
        for q in &rule {
            let (x, l) = map_point(&tri, q);
            let uh: f64 = (0..3).map(|i| l[i] * u[idx[i]]).sum();
            e += 2.0 * q.w * area * (uh - exact(x)).powi(2);
        }
    }
    e.sqrt()
}

/// Gauss points on [0, 1] reused by boundary integrals elsewhere.
pub fn edge_rule(n: usize) -> Vec<(f64, f64)> {
    gauss_legendre_01(n)
}
