//! Regularized Galerkin boundary elements on the flat unit-disk screen
//! (P1 densities), with the closed-form kernels used by the insertion
//! asymptotics.

use std::f64::consts::PI;
use std::sync::OnceLock;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh2d::{dist, DiskSurfaceMesh, Point};
use crate::quadrature::{gauss_legendre_01, triangle_deg5};

/// Default order of the singular pair rules.
pub const DEFAULT_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// 1/(4π|x−y|).
    Laplace3d,
    /// −log|x−y| / (2π).
    Laplace2dLog,
    /// Free-space elasticity, Lamé μ and λ.
    Kelvin3d { mu: f64, lambda: f64 },
    /// Traction-free lower half-space x₃ < 0, source on x₃ = 0.
    Mindlin3d { mu: f64, nu: f64 },
    /// Traction-free lower half-plane, source and target on its boundary line.
    Mindlin2d { mu: f64, nubar: f64 },
}

/// Value of a kernel at one point pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelValue {
    Scalar(f64),
    Matrix2([[f64; 2]; 2]),
    Matrix3([[f64; 3]; 3]),
}

impl Kernel {
    /// Number of density components.
    pub fn arity(&self) -> usize {
        match self {
            Kernel::Laplace3d | Kernel::Laplace2dLog => 1,
            Kernel::Mindlin2d { .. } => 2,
            Kernel::Kelvin3d { .. } | Kernel::Mindlin3d { .. } => 3,
        }
    }

    /// Space dimension of the points.
    pub fn dim(&self) -> usize {
        match self {
            Kernel::Laplace2dLog | Kernel::Mindlin2d { .. } => 2,
            _ => 3,
        }
    }

    /// Coefficient c with kernel ≈ c/(4π|x−y|) on the diagonal; used to
    /// scale the regularizer so that η keeps its scalar meaning.
    pub fn compliance_scale(&self) -> f64 {
        match *self {
            Kernel::Laplace3d | Kernel::Laplace2dLog => 1.0,
            Kernel::Kelvin3d { mu, lambda } => 0.5 * (1.0 / mu + 1.0 / (2.0 * mu + lambda)),
            Kernel::Mindlin3d { mu, nu } => 2.0 * (1.0 - nu) / mu,
            Kernel::Mindlin2d { mu, nubar } => 4.0 * (1.0 - nubar) / mu,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            Kernel::Laplace3d | Kernel::Laplace2dLog => true,
            Kernel::Kelvin3d { mu, lambda } => mu > 0.0 && 3.0 * lambda + 2.0 * mu > 0.0,
            Kernel::Mindlin3d { mu, nu } => mu > 0.0 && nu > -1.0 && nu < 0.5,
            Kernel::Mindlin2d { mu, nubar } => mu > 0.0 && nubar < 0.5,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("inadmissible kernel parameters {self:?}")))
        }
    }

    /// Kernel on the plane x₃ = 0 for the offset d = x − y (3D kernels only);
    /// writes the arity² row-major entries into `out`.
    #[inline]
    fn planar_into(&self, d: [f64; 2], out: &mut [f64]) {
        let r2 = d[0] * d[0] + d[1] * d[1];
        let r = r2.sqrt();
        match *self {
            Kernel::Laplace3d => out[0] = 1.0 / (4.0 * PI * r),
            Kernel::Kelvin3d { mu, lambda } => {
                let a = 0.5 * (1.0 / mu + 1.0 / (2.0 * mu + lambda)) / (4.0 * PI * r);
                let b = 0.5 * (1.0 / mu - 1.0 / (2.0 * mu + lambda)) / (4.0 * PI * r * r2);
                out[0] = a + b * d[0] * d[0];
                out[1] = b * d[0] * d[1];
                out[2] = 0.0;
                out[3] = out[1];
                out[4] = a + b * d[1] * d[1];
                out[5] = 0.0;
                out[6] = 0.0;
                out[7] = 0.0;
                out[8] = a;
            }
            Kernel::Mindlin3d { mu, nu } => {
                let a = (1.0 - nu) / (2.0 * PI * mu * r);
                let b = nu / (2.0 * PI * mu * r * r2);
                let c = (1.0 - 2.0 * nu) / (4.0 * PI * mu * r2);
                out[0] = a + b * d[0] * d[0];
                out[1] = b * d[0] * d[1];
                out[2] = c * d[0];
                out[3] = out[1];
                out[4] = a + b * d[1] * d[1];
                out[5] = c * d[1];
                out[6] = -c * d[0];
                out[7] = -c * d[1];
                out[8] = a;
            }
            Kernel::Laplace2dLog | Kernel::Mindlin2d { .. } => unreachable!("planar kernels are 3D"),
        }
    }
}

/// Closed-form kernel value. For `Mindlin3d` the source y must lie on the
/// plane x₃ = 0 and x in the closed lower half-space.
pub fn kernel_eval(kernel: &Kernel, x: &[f64], y: &[f64]) -> Result<KernelValue> {
    kernel.check()?;
    let dim = kernel.dim();
    if x.len() != dim || y.len() != dim {
        return Err(Error::param(format!("{kernel:?} expects {dim}-dimensional points")));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(Error::Singularity(format!("{kernel:?} evaluated at x = y")));
    }
    Ok(match *kernel {
        Kernel::Laplace3d => KernelValue::Scalar(1.0 / (4.0 * PI * r)),
        Kernel::Laplace2dLog => KernelValue::Scalar(-r.ln() / (2.0 * PI)),
        Kernel::Kelvin3d { mu, lambda } => {
            let alpha = 0.5 * (1.0 / mu + 1.0 / (2.0 * mu + lambda));
            let beta = 0.5 * (1.0 / mu - 1.0 / (2.0 * mu + lambda));
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    m[i][j] = alpha / (4.0 * PI) * delta / r + beta / (4.0 * PI) * d[i] * d[j] / (r * r * r);
                }
            }
            KernelValue::Matrix3(m)
        }
        Kernel::Mindlin3d { mu, nu } => {
            if y[2] != 0.0 || x[2] > 0.0 {
                return Err(Error::param("Mindlin kernel needs y on x3 = 0 and x3 <= 0"));
            }
            KernelValue::Matrix3(mindlin_half_space(mu, nu, [d[0], d[1]], -x[2]))
        }
        Kernel::Mindlin2d { mu, nubar } => {
            let log = -(1.0 - nubar) / (PI * mu) * r.ln();
            let theta = if x[0] > y[0] { 0.5 * PI } else { -0.5 * PI };
            let l12 = -(1.0 - 2.0 * nubar) / (2.0 * PI * mu) * theta;
            KernelValue::Matrix2([
                [log + (3.0 - 4.0 * nubar) / (8.0 * PI * mu * (1.0 - nubar)), l12],
                [-l12, log],
            ])
        }
    })
}

/// Displacement at horizontal offset d and depth z ≥ 0 below a unit surface
/// load (columns e₁, e₂, e₃; e₃ points out of the solid).
fn mindlin_half_space(mu: f64, nu: f64, d: [f64; 2], z: f64) -> [[f64; 3]; 3] {
    let rho = (d[0] * d[0] + d[1] * d[1] + z * z).sqrt();
    let rz = rho + z;
    let c = 1.0 / (4.0 * PI * mu);
    let k = 1.0 - 2.0 * nu;
    let mut m = [[0.0; 3]; 3];
    for j in 0..2 {
        // tangential load along e_j
        for i in 0..2 {
            let delta = if i == j { 1.0 } else { 0.0 };
            m[i][j] = c * (delta / rho + d[i] * d[j] / rho.powi(3) + k * (delta / rz - d[i] * d[j] / (rho * rz * rz)));
        }
        m[2][j] = -c * (d[j] * z / rho.powi(3) + k * d[j] / (rho * rz));
        // load along e₃
        m[j][2] = -c * (d[j] * z / rho.powi(3) - k * d[j] / (rho * rz));
    }
    m[2][2] = c * (z * z / rho.powi(3) + 2.0 * (1.0 - nu) / rho);
    m
}

// ---------------------------------------------------------------------------
// Reference rules. Reference triangle {0 ≤ x₂ ≤ x₁ ≤ 1} mapped by
// P₀ + x₁ (P₁ − P₀) + x₂ (P₂ − P₁).

#[derive(Debug, Clone, Copy)]
struct PairPoint {
    x: [f64; 2],
    y: [f64; 2],
    w: f64,
}

/// Relation between two triangles of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairCase {
    Identical,
    SharedEdge,
    SharedVertex,
    Disjoint,
}

fn identical_rule(q: usize) -> Vec<PairPoint> {
    let g = gauss_legendre_01(q);
    let mut out = Vec::with_capacity(6 * q.pow(4));
    for &(xi, w0) in &g {
        for &(e1, w1) in &g {
            for &(e2, w2) in &g {
                for &(e3, w3) in &g {
                    let w = w0 * w1 * w2 * w3 * xi.powi(3) * e1 * e1 * e2;
                    let (e12, e123) = (e1 * e2, e1 * e2 * e3);
                    let pairs = [
                        ([xi, xi * (1.0 - e1 + e12)], [xi * (1.0 - e123), xi * (1.0 - e1)]),
                        ([xi * (1.0 - e123), xi * (1.0 - e1)], [xi, xi * (1.0 - e1 + e12)]),
                        ([xi, xi * (e1 - e12 + e123)], [xi * (1.0 - e12), xi * (e1 - e12)]),
                        ([xi * (1.0 - e12), xi * (e1 - e12)], [xi, xi * (e1 - e12 + e123)]),
                        ([xi * (1.0 - e123), xi * (e1 - e123)], [xi, xi * (e1 - e12)]),
                        ([xi, xi * (e1 - e12)], [xi * (1.0 - e123), xi * (e1 - e123)]),
                    ];
                    out.extend(pairs.iter().map(|&(x, y)| PairPoint { x, y, w }));
                }
            }
        }
    }
    out
}

/// Shared edge from local vertex 0 to local vertex 1 in both triangles.
fn edge_rule(q: usize) -> Vec<PairPoint> {
    let g = gauss_legendre_01(q);
    let mut out = Vec::with_capacity(5 * q.pow(4));
    for &(xi, w0) in &g {
        for &(e1, w1) in &g {
            for &(e2, w2) in &g {
                for &(e3, w3) in &g {
                    let w = w0 * w1 * w2 * w3 * xi.powi(3) * e1 * e1;
                    let (e12, e123) = (e1 * e2, e1 * e2 * e3);
                    out.push(PairPoint {
                        x: [xi, xi * e1 * e3],
                        y: [xi * (1.0 - e12), xi * (e1 - e12)],
                        w,
                    });
                    let pairs = [
                        ([xi, xi * e1], [xi * (1.0 - e123), xi * (e12 - e123)]),
                        ([xi * (1.0 - e12), xi * (e1 - e12)], [xi, xi * e123]),
                        ([xi * (1.0 - e123), xi * (e12 - e123)], [xi, xi * e1]),
                        ([xi * (1.0 - e123), xi * (e1 - e123)], [xi, xi * e12]),
                    ];
                    out.extend(pairs.iter().map(|&(x, y)| PairPoint { x, y, w: w * e2 }));
                }
            }
        }
    }
    out
}

/// Shared vertex at local vertex 0 of both triangles.
fn vertex_rule(q: usize) -> Vec<PairPoint> {
    let g = gauss_legendre_01(q);
    let mut out = Vec::with_capacity(2 * q.pow(4));
    for &(xi, w0) in &g {
        for &(e1, w1) in &g {
            for &(e2, w2) in &g {
                for &(e3, w3) in &g {
                    let w = w0 * w1 * w2 * w3 * xi.powi(3) * e2;
                    out.push(PairPoint {
                        x: [xi, xi * e1],
                        y: [xi * e2, xi * e2 * e3],
                        w,
                    });
                    out.push(PairPoint {
                        x: [xi * e2, xi * e2 * e3],
                        y: [xi, xi * e1],
                        w,
                    });
                }
            }
        }
    }
    out
}

/// Collapsed tensor Gauss rule of order n on the reference triangle.
fn triangle_rule(n: usize) -> Vec<([f64; 2], f64)> {
    let g = gauss_legendre_01(n);
    let mut out = Vec::with_capacity(n * n);
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            out.push(([u, u * v], wu * wv * u));
        }
    }
    out
}

#[inline]
fn basis(x: [f64; 2]) -> [f64; 3] {
    [1.0 - x[0], x[0] - x[1], x[1]]
}

#[inline]
fn map(p: &[Point; 3], x: [f64; 2]) -> Point {
    [
        p[0][0] + x[0] * (p[1][0] - p[0][0]) + x[1] * (p[2][0] - p[1][0]),
        p[0][1] + x[0] * (p[1][1] - p[0][1]) + x[1] * (p[2][1] - p[1][1]),
    ]
}

/// The four-case pair rules of one order.
#[derive(Debug, Clone)]
pub struct PairRules {
    pub order: usize,
    identical: Vec<PairPoint>,
    edge: Vec<PairPoint>,
    vertex: Vec<PairPoint>,
    far: Vec<([f64; 2], f64)>,
}

impl PairRules {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::param(format!("quadrature order {order} below 2")));
        }
        Ok(PairRules {
            order,
            identical: identical_rule(order),
            edge: edge_rule(order),
            vertex: vertex_rule(order),
            far: triangle_rule(order.saturating_sub(1).max(2)),
        })
    }
}

/// Galerkin block of one triangle pair: entry [a][b][ci·c + cj] couples
/// test basis a (component ci) of `tk` with trial basis b (component cj) of `tl`.
pub type PairBlock = [[Vec<f64>; 3]; 3];

/// Element pair (k, l) with its vertex indices and integrated block.
type PairEntry = (usize, [usize; 3], [usize; 3], PairBlock);

fn twice_area(p: &[Point; 3]) -> f64 {
    ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0])).abs()
}

fn empty_block(c2: usize) -> PairBlock {
    std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; c2]))
}

fn integrate_rule(kernel: &Kernel, tk: &[Point; 3], tl: &[Point; 3], rule: &[PairPoint]) -> PairBlock {
    let c2 = kernel.arity().pow(2);
    let jac = twice_area(tk) * twice_area(tl);
    let mut block = empty_block(c2);
    let mut g = [0.0; 9];
    for r in rule {
        let (x, y) = (map(tk, r.x), map(tl, r.y));
        kernel.planar_into([x[0] - y[0], x[1] - y[1]], &mut g);
        let (bx, by) = (basis(r.x), basis(r.y));
        let w = r.w * jac;
        for a in 0..3 {
            for b in 0..3 {
                let f = w * bx[a] * by[b];
                for m in 0..c2 {
                    block[a][b][m] += f * g[m];
                }
            }
        }
    }
    block
}

fn integrate_far(kernel: &Kernel, tk: &[Point; 3], tl: &[Point; 3], rule: &[([f64; 2], f64)]) -> PairBlock {
    let c2 = kernel.arity().pow(2);
    let n = rule.len();
    let (jk, jl) = (twice_area(tk), twice_area(tl));
    let xs: Vec<Point> = rule.iter().map(|r| map(tk, r.0)).collect();
    let ys: Vec<Point> = rule.iter().map(|r| map(tl, r.0)).collect();
    let wb: Vec<[f64; 3]> = rule.iter().map(|r| basis(r.0).map(|b| b * r.1)).collect();
    // t[a][q][m] = Σ_p w_p b_a(x_p) G(x_p, y_q)
    let mut t = vec![0.0; 3 * n * c2];
    let mut g = [0.0; 9];
    for (p, x) in xs.iter().enumerate() {
        for (q, y) in ys.iter().enumerate() {
            kernel.planar_into([x[0] - y[0], x[1] - y[1]], &mut g);
            for a in 0..3 {
                let f = wb[p][a];
                let base = (a * n + q) * c2;
                for m in 0..c2 {
                    t[base + m] += f * g[m];
                }
            }
        }
    }
    let mut block = empty_block(c2);
    for a in 0..3 {
        for b in 0..3 {
            for q in 0..n {
                let f = wb[q][b] * jk * jl;
                let base = (a * n + q) * c2;
                for m in 0..c2 {
                    block[a][b][m] += f * t[base + m];
                }
            }
        }
    }
    block
}

/// Approximates ∫_{T_k}∫_{T_l} b_a(x) L(x, y) b_b(y) for every local basis
/// pair. `case` must describe the vertex ordering: identical triangles in
/// the same order, a shared edge as local vertices 0 → 1 of both, a shared
/// vertex as local vertex 0 of both. Disjoint pairs use the collapsed tensor
/// rule, or the vertex transform when `near` is set.
pub fn singular_pair_integral(
    tk: &[Point; 3],
    tl: &[Point; 3],
    kernel: &Kernel,
    case: PairCase,
    near: bool,
    rules: &PairRules,
) -> Result<PairBlock> {
    kernel.check()?;
    if kernel.dim() != 3 {
        return Err(Error::param("screen integrals need a 3D kernel"));
    }
    for t in [tk, tl] {
        if twice_area(t) <= 1e-14 * (dist(t[0], t[1]) + dist(t[1], t[2])).powi(2) {
            return Err(Error::geom("degenerate triangle in pair integral"));
        }
    }
    Ok(match case {
        PairCase::Identical => integrate_rule(kernel, tk, tl, &rules.identical),
        PairCase::SharedEdge => integrate_rule(kernel, tk, tl, &rules.edge),
        PairCase::SharedVertex => integrate_rule(kernel, tk, tl, &rules.vertex),
        PairCase::Disjoint if near => integrate_rule(kernel, tk, tl, &rules.vertex),
        PairCase::Disjoint => integrate_far(kernel, tk, tl, &rules.far),
    })
}

/// Classifies a triangle pair and returns local vertex orders matching
/// [`singular_pair_integral`]'s conventions.
fn orient_pair(mesh: &DiskSurfaceMesh, k: usize, l: usize, near: bool) -> (PairCase, [usize; 3], [usize; 3]) {
    let (a, b) = (mesh.triangles[k], mesh.triangles[l]);
    let shared: Vec<(usize, usize)> = (0..3)
        .flat_map(|i| (0..3).filter(move |&j| a[i] == b[j]).map(move |j| (i, j)))
        .collect();
    match shared.len() {
        3 => (PairCase::Identical, [0, 1, 2], [0, 1, 2]),
        2 => {
            let (i0, j0) = shared[0];
            let (i1, j1) = shared[1];
            (PairCase::SharedEdge, [i0, i1, 3 - i0 - i1], [j0, j1, 3 - j0 - j1])
        }
        1 => {
            let (i, j) = shared[0];
            (
                PairCase::SharedVertex,
                [i, (i + 1) % 3, (i + 2) % 3],
                [j, (j + 1) % 3, (j + 2) % 3],
            )
        }
        _ if near => {
            // closest vertex pair becomes the common origin of the vertex transform
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..3 {
                for j in 0..3 {
                    let d = dist(mesh.vertices[a[i]], mesh.vertices[b[j]]);
                    if d < best.0 {
                        best = (d, i, j);
                    }
                }
            }
            let (i, j) = (best.1, best.2);
            (
                PairCase::Disjoint,
                [i, (i + 1) % 3, (i + 2) % 3],
                [j, (j + 1) % 3, (j + 2) % 3],
            )
        }
        _ => (PairCase::Disjoint, [0, 1, 2], [0, 1, 2]),
    }
}

// ---------------------------------------------------------------------------
// Assembly

/// How the regularized matrix was factorized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Factorization {
    Cholesky,
    Lu,
}

enum Factor {
    Llt(faer::linalg::solvers::Llt<f64>),
    Lu(PartialPivLu<f64>),
}

/// Dense regularized screen system A = η·K_reg + B.
pub struct ScreenSystem {
    pub mesh: DiskSurfaceMesh,
    pub kernel: Kernel,
    pub eta: f64,
    /// Galerkin matrix of the integral operator; dofs interleaved per vertex.
    pub b: Mat<f64>,
    /// Regularizer stiffness (same dof layout).
    pub k_reg: Mat<f64>,
    pub warnings: Vec<String>,
    factor: OnceLock<std::result::Result<(Factor, Factorization, f64), String>>,
}

impl std::fmt::Debug for ScreenSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScreenSystem")
            .field("kernel", &self.kernel)
            .field("eta", &self.eta)
            .field("dofs", &self.b.nrows())
            .finish()
    }
}

impl ScreenSystem {
    pub fn n_dofs(&self) -> usize {
        self.b.nrows()
    }

    /// η·K_reg + B.
    pub fn matrix(&self) -> Mat<f64> {
        let n = self.n_dofs();
        Mat::from_fn(n, n, |i, j| self.b[(i, j)] + self.eta * self.k_reg[(i, j)])
    }

    /// Same integral operator with another regularization weight.
    pub fn with_eta(&self, eta: f64) -> Result<ScreenSystem> {
        if !(eta >= 0.0) {
            return Err(Error::param(format!("eta {eta} must be non-negative")));
        }
        Ok(ScreenSystem {
            mesh: self.mesh.clone(),
            kernel: self.kernel,
            eta,
            b: self.b.clone(),
            k_reg: self.k_reg.clone(),
            warnings: eta_warnings(&self.mesh, eta),
            factor: OnceLock::new(),
        })
    }

    fn factor(&self) -> Result<(&Factor, Factorization, f64)> {
        let f = self.factor.get_or_init(|| {
            let a = self.matrix();
            if let Ok(llt) = a.llt(Side::Lower) {
                let d: Vec<f64> = (0..a.nrows()).map(|i| llt.L()[(i, i)].powi(2)).collect();
                return Ok((Factor::Llt(llt), Factorization::Cholesky, pivot_ratio(&d)));
            }
            let lu = a.partial_piv_lu();
            let d: Vec<f64> = (0..a.nrows()).map(|i| lu.U()[(i, i)].abs()).collect();
            let ratio = pivot_ratio(&d);
            if !(ratio > 1e-14) {
                return Err(format!(
                    "screen matrix is numerically singular (pivot ratio {ratio:.3e}); use eta > 0"
                ));
            }
            Ok((Factor::Lu(lu), Factorization::Lu, ratio))
        });
        match f {
            Ok((fac, kind, ratio)) => Ok((fac, *kind, *ratio)),
            Err(msg) => Err(Error::Solver(msg.clone())),
        }
    }

    /// Factorization kind and the smallest-to-largest pivot ratio.
    pub fn conditioning(&self) -> Result<(Factorization, f64)> {
        self.factor().map(|(_, k, r)| (k, r))
    }

    fn solve_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_dofs();
        let (fac, _, _) = self.factor()?;
        let rhs = Mat::from_fn(n, 1, |i, _| load[i]);
        let x = match fac {
            Factor::Llt(f) => f.solve(&rhs),
            Factor::Lu(f) => f.solve(&rhs),
        };
        Ok((0..n).map(|i| x[(i, 0)]).collect())
    }
}

fn pivot_ratio(d: &[f64]) -> f64 {
    let max = d.iter().cloned().fold(0.0, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 {
        min / max
    } else {
        0.0
    }
}

fn eta_warnings(mesh: &DiskSurfaceMesh, eta: f64) -> Vec<String> {
    let guard = (mesh.h / 10.0).powi(2);
    if eta < guard {
        vec![format!(
            "eta {eta:e} below (h/10)^2 = {guard:e}; expect degraded accuracy"
        )]
    } else {
        Vec::new()
    }
}

/// Integral-operator matrix B, assembled over unordered triangle pairs.
pub fn assemble_operator(mesh: &DiskSurfaceMesh, kernel: &Kernel, rules: &PairRules) -> Result<Mat<f64>> {
    kernel.check()?;
    if kernel.dim() != 3 {
        return Err(Error::param(format!("{kernel:?} is not a screen kernel")));
    }
    let c = kernel.arity();
    let n = c * mesh.n_vertices();
    let nt = mesh.triangles.len();
    let tris: Vec<[Point; 3]> = (0..nt).map(|t| mesh.tri_points(t)).collect();
    let centroids: Vec<Point> = tris
        .iter()
        .map(|p| [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0])
        .collect();
    let near_dist = 2.0 * mesh.max_edge();
    let mut b = Mat::<f64>::zeros(n, n);
    let batch = 8 * rayon::current_num_threads();
    let mut k0 = 0;
    while k0 < nt {
        let k1 = (k0 + batch).min(nt);
        let rows: Vec<Result<Vec<PairEntry>>> = (k0..k1)
            .into_par_iter()
            .map(|k| {
                let mut out = Vec::with_capacity(nt - k);
                for l in k..nt {
                    let near = dist(centroids[k], centroids[l]) < near_dist;
                    let (case, ok, ol) = orient_pair(mesh, k, l, near);
                    let tk = ok.map(|i| tris[k][i]);
                    let tl = ol.map(|j| tris[l][j]);
                    let block = singular_pair_integral(&tk, &tl, kernel, case, near, rules)?;
                    out.push((l, ok, ol, block));
                }
                Ok(out)
            })
            .collect();
        for (k, row) in (k0..k1).zip(rows) {
            for (l, ok, ol, block) in row? {
                let (vk, vl) = (mesh.triangles[k], mesh.triangles[l]);
                for a in 0..3 {
                    for bb in 0..3 {
                        let (ga, gb) = (vk[ok[a]], vl[ol[bb]]);
                        for ci in 0..c {
                            for cj in 0..c {
                                let v = block[a][bb][ci * c + cj];
                                b[(ga * c + ci, gb * c + cj)] += v;
                                if l != k {
                                    b[(gb * c + cj, ga * c + ci)] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        k0 = k1;
    }
    Ok(b)
}

fn p1_gradients(p: &[Point; 3]) -> ([[f64; 2]; 3], f64) {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
    let g = std::array::from_fn(|a| {
        let (q, r) = (p[(a + 1) % 3], p[(a + 2) % 3]);
        [(q[1] - r[1]) / area2, (r[0] - q[0]) / area2]
    });
    (g, 0.5 * area2.abs())
}

/// Regularizer stiffness: ∫∇φ·∇ψ for scalar densities, and for vector
/// densities 2μ_A ∫e(φ):e(ψ) with e the symmetric part of the in-plane
/// gradient of all three components and μ_A the kernel's compliance scale.
pub fn regularizer(mesh: &DiskSurfaceMesh, kernel: &Kernel) -> Mat<f64> {
    let c = kernel.arity();
    let n = c * mesh.n_vertices();
    let scale = kernel.compliance_scale();
    let mut k = Mat::<f64>::zeros(n, n);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (g, area) = p1_gradients(&mesh.tri_points(t));
        for a in 0..3 {
            for b in 0..3 {
                let dot = g[a][0] * g[b][0] + g[a][1] * g[b][1];
                if c == 1 {
                    k[(tri[a], tri[b])] += area * dot;
                    continue;
                }
                for i in 0..c {
                    for j in 0..c {
                        let delta = if i == j { dot } else { 0.0 };
                        let cross = if i < 2 && j < 2 { g[a][j] * g[b][i] } else { 0.0 };
                        k[(tri[a] * c + i, tri[b] * c + j)] += scale * area * (delta + cross);
                    }
                }
            }
        }
    }
    k
}

/// P1 mass matrix applied to interleaved nodal data.
fn mass_apply(mesh: &DiskSurfaceMesh, c: usize, data: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.tri_area(t);
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                for i in 0..c {
                    out[tri[a] * c + i] += m * data[tri[b] * c + i];
                }
            }
        }
    }
    out
}

/// Assembles A = η·K_reg + B on the screen mesh with the default pair rules.
pub fn assemble_screen(mesh: &DiskSurfaceMesh, kernel: &Kernel, eta: f64) -> Result<ScreenSystem> {
    assemble_screen_with(mesh, kernel, eta, &PairRules::new(DEFAULT_ORDER)?)
}

pub fn assemble_screen_with(
    mesh: &DiskSurfaceMesh,
    kernel: &Kernel,
    eta: f64,
    rules: &PairRules,
) -> Result<ScreenSystem> {
    if !(eta >= 0.0) {
        return Err(Error::param(format!("eta {eta} must be non-negative")));
    }
    let b = assemble_operator(mesh, kernel, rules)?;
    if (0..b.nrows()).any(|i| (0..b.ncols()).any(|j| !b[(i, j)].is_finite())) {
        return Err(Error::Numeric("non-finite screen matrix entry".into()));
    }
    Ok(ScreenSystem {
        mesh: mesh.clone(),
        kernel: *kernel,
        eta,
        b,
        k_reg: regularizer(mesh, kernel),
        warnings: eta_warnings(mesh, eta),
        factor: OnceLock::new(),
    })
}

/// P1 density on the screen mesh, components interleaved per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenDensity {
    pub arity: usize,
    pub values: Vec<f64>,
    /// ‖A φ − F‖ / ‖F‖.
    pub residual: f64,
}

impl ScreenDensity {
    /// ∫ of each component.
    pub fn integral(&self, mesh: &DiskSurfaceMesh) -> Vec<f64> {
        let c = self.arity;
        let mut out = vec![0.0; c];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let area = mesh.tri_area(t);
            for i in 0..c {
                out[i] += area / 3.0 * tri.iter().map(|&v| self.values[v * c + i]).sum::<f64>();
            }
        }
        out
    }
}

/// Solves η∫∇φ·∇ψ + ∫T_L φ ψ = ∫f ψ for P1 data f (interleaved nodal values).
pub fn solve_screen(system: &ScreenSystem, rhs: &[f64]) -> Result<ScreenDensity> {
    let n = system.n_dofs();
    if rhs.len() != n {
        return Err(Error::param(format!(
            "rhs has {} values, system has {n} dofs",
            rhs.len()
        )));
    }
    let c = system.kernel.arity();
    let load = mass_apply(&system.mesh, c, rhs);
    let load_norm = load.iter().map(|v| v * v).sum::<f64>().sqrt();
    if load_norm == 0.0 {
        return Ok(ScreenDensity {
            arity: c,
            values: vec![0.0; n],
            residual: 0.0,
        });
    }
    let mut x = system.solve_load(&load)?;
    let a = system.matrix();
    let residual_of = |x: &[f64]| -> (Vec<f64>, f64) {
        let r: Vec<f64> = (0..n)
            .map(|i| load[i] - (0..n).map(|j| a[(i, j)] * x[j]).sum::<f64>())
            .collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt() / load_norm;
        (r, norm)
    };
    let (r, mut residual) = residual_of(&x);
    if residual > 1e-12 {
        // one step of iterative refinement
        let dx = system.solve_load(&r)?;
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        residual = residual_of(&x).1;
    }
    if !(residual <= 1e-10) {
        return Err(Error::Solver(format!(
            "screen solve residual {residual:.3e} above 1e-10"
        )));
    }
    Ok(ScreenDensity {
        arity: c,
        values: x,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Equilibrium distribution and error metrics

/// 4 / (π √(1 − r²)).
pub fn equilibrium_density(x: Point) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    4.0 / (PI * (1.0 - r2).sqrt())
}

/// Exact value of ∫ of the equilibrium distribution over the unit disk.
pub const EQUILIBRIUM_TOTAL: f64 = 8.0;

/// Residual R, mean error A and interior error E of a Laplace screen density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub r: f64,
    pub a: f64,
    pub e: f64,
}

fn interp(mesh: &DiskSurfaceMesh, t: usize, phi: &[f64], x: [f64; 2]) -> f64 {
    let tri = mesh.triangles[t];
    let b = basis(x);
    b[0] * phi[tri[0]] + b[1] * phi[tri[1]] + b[2] * phi[tri[2]]
}

/// ∫_T φ(y) / (4π|x − y|) dy, splitting T into cones with apex x when x is near.
fn single_layer_at(
    mesh: &DiskSurfaceMesh,
    t: usize,
    phi: &[f64],
    x: Point,
    near: bool,
    cone: &[([f64; 2], f64)],
    far: &[([f64; 2], f64)],
) -> f64 {
    let p = mesh.tri_points(t);
    let tri = mesh.triangles[t];
    if !near {
        let jac = twice_area(&p);
        return far
            .iter()
            .map(|&(r, w)| {
                let y = map(&p, r);
                w * jac * interp(mesh, t, phi, r) / (4.0 * PI * dist(x, y))
            })
            .sum();
    }
    // affine extension of φ on T
    let (g, _) = p1_gradients(&p);
    let grad = [
        (0..3).map(|a| g[a][0] * phi[tri[a]]).sum::<f64>(),
        (0..3).map(|a| g[a][1] * phi[tri[a]]).sum::<f64>(),
    ];
    let base = phi[tri[0]] - grad[0] * p[0][0] - grad[1] * p[0][1];
    let f = |y: Point| base + grad[0] * y[0] + grad[1] * y[1];
    let mut total = 0.0;
    for e in 0..3 {
        let (q1, q2) = (p[e], p[(e + 1) % 3]);
        let signed = (q1[0] - x[0]) * (q2[1] - x[1]) - (q1[1] - x[1]) * (q2[0] - x[0]);
        if signed.abs() < 1e-300 {
            continue;
        }
        // cone x → (q1, q2): y = x + u((q1 − x) + v(q2 − q1)), Jacobian u·|signed|;
        // the 1/r singularity cancels against u.
        for &(r, w) in cone {
            let (u, v) = (r[0], r[1] / r[0].max(1e-300));
            let dir = [q1[0] - x[0] + v * (q2[0] - q1[0]), q1[1] - x[1] + v * (q2[1] - q1[1])];
            let y = [x[0] + u * dir[0], x[1] + u * dir[1]];
            let len = dir[0].hypot(dir[1]);
            // cone rule weights already carry the factor u
            total += w * signed * f(y) / (4.0 * PI * u * len);
        }
    }
    // orientation of T fixes the sign of the cone sum
    let orient = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
    total * orient.signum()
}

/// Single-layer potential of a P1 density at x.
pub fn single_layer(mesh: &DiskSurfaceMesh, phi: &[f64], x: Point) -> f64 {
    let cone = triangle_rule(10);
    let far = triangle_rule(4);
    let near_dist = 3.0 * mesh.max_edge();
    (0..mesh.triangles.len())
        .map(|t| {
            let p = mesh.tri_points(t);
            let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
            single_layer_at(mesh, t, phi, x, dist(c, x) < near_dist, &cone, &far)
        })
        .sum()
}

/// R = ∫(Sφ − 1)², A = (∫φ − 8)², E = ∫_{|x|<0.9}(φ − φ_exact)² for the
/// Laplace equilibrium problem.
pub fn error_metrics(phi: &ScreenDensity, mesh: &DiskSurfaceMesh, kernel: &Kernel) -> Result<ErrorMetrics> {
    if *kernel != Kernel::Laplace3d || phi.arity != 1 || phi.values.len() != mesh.n_vertices() {
        return Err(Error::param("error metrics are defined for Laplace screen densities"));
    }
    let v = &phi.values;
    let outer = triangle_deg5();
    let targets: Vec<(Point, f64)> = (0..mesh.triangles.len())
        .flat_map(|t| {
            let p = mesh.tri_points(t);
            let jac = twice_area(&p);
            // deg5 rule lives on {ξ, η ≥ 0, ξ + η ≤ 1}; map through barycentrics
            outer
                .iter()
                .map(move |q| {
                    let x = [
                        p[0][0] + q.xi * (p[1][0] - p[0][0]) + q.eta * (p[2][0] - p[0][0]),
                        p[0][1] + q.xi * (p[1][1] - p[0][1]) + q.eta * (p[2][1] - p[0][1]),
                    ];
                    (x, q.w * jac)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let r: f64 = targets
        .par_iter()
        .map(|&(x, w)| w * (single_layer(mesh, v, x) - 1.0).powi(2))
        .sum();
    let a = (phi.integral(mesh)[0] - EQUILIBRIUM_TOTAL).powi(2);
    let e = interior_error(mesh, v, 0.9);
    Ok(ErrorMetrics { r, a, e })
}

fn interior_error(mesh: &DiskSurfaceMesh, v: &[f64], radius: f64) -> f64 {
    let rule = triangle_deg5();
    let mut total = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = mesh.tri_points(t);
        let rmin = p.iter().map(|q| q[0].hypot(q[1])).fold(f64::INFINITY, f64::min);
        if rmin >= radius {
            continue;
        }
        let rmax = p.iter().map(|q| q[0].hypot(q[1])).fold(0.0, f64::max);
        // straddling triangles are integrated on an 8 × 8 sub-grid
        let m = if rmax > radius { 8 } else { 1 };
        let h = 1.0 / m as f64;
        for i in 0..m {
            for j in 0..m - i {
                let subs: Vec<[[f64; 2]; 3]> = {
                    let (a, b) = (i as f64 * h, j as f64 * h);
                    let mut s = vec![[[a, b], [a + h, b], [a, b + h]]];
                    if i + j + 1 < m {
                        s.push([[a + h, b], [a + h, b + h], [a, b + h]]);
                    }
                    s
                };
                for s in subs {
                    let sj = h * h;
                    for q in &rule {
                        let bx = s[0][0] + q.xi * (s[1][0] - s[0][0]) + q.eta * (s[2][0] - s[0][0]);
                        let by = s[0][1] + q.xi * (s[1][1] - s[0][1]) + q.eta * (s[2][1] - s[0][1]);
                        let x = [
                            p[0][0] + bx * (p[1][0] - p[0][0]) + by * (p[2][0] - p[0][0]),
                            p[0][1] + bx * (p[1][1] - p[0][1]) + by * (p[2][1] - p[0][1]),
                        ];
                        if x[0].hypot(x[1]) >= radius {
                            continue;
                        }
                        let val = (1.0 - bx - by) * v[tri[0]] + bx * v[tri[1]] + by * v[tri[2]];
                        total += q.w * sj * twice_area(&p) * (val - equilibrium_density(x)).powi(2);
                    }
                }
            }
        }
    }
    total
}

/// Ring count of the screen mesh with nominal size h.
pub fn rings_for(h: f64) -> Result<usize> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::param(format!("screen mesh size {h} outside (0, 1]")));
    }
    Ok((1.0 / h).round().max(1.0) as usize)
}

/// One (h, η) cell of the equilibrium study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRow {
    pub h: f64,
    pub eta: f64,
    pub nodes: usize,
    /// ∫φ_η.
    pub integral: f64,
    /// φ_η at the disk center.
    pub center: f64,
    pub metrics: Option<ErrorMetrics>,
    pub warnings: Vec<String>,
}

/// Solves the equilibrium problem (data 1, Laplace kernel) on one mesh for
/// every η, reusing the integral-operator matrix.
pub fn equilibrium_rows(h: f64, etas: &[f64], with_metrics: bool) -> Result<Vec<EquilibriumRow>> {
    let mesh = crate::mesh2d::gen_screen_disk(rings_for(h)?)?;
    let base = assemble_screen(&mesh, &Kernel::Laplace3d, 0.0)?;
    let ones = vec![1.0; mesh.n_vertices()];
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let sys = base.with_eta(eta)?;
        let phi = solve_screen(&sys, &ones)?;
        let metrics = if with_metrics {
            Some(error_metrics(&phi, &mesh, &Kernel::Laplace3d)?)
        } else {
            None
        };
        let center = mesh
            .vertices
            .iter()
            .position(|v| v[0] == 0.0 && v[1] == 0.0)
            .map(|i| phi.values[i])
            .unwrap_or(f64::NAN);
        rows.push(EquilibriumRow {
            h: mesh.h,
            eta,
            nodes: mesh.n_vertices(),
            integral: phi.integral(&mesh)[0],
            center,
            metrics,
            warnings: sys.warnings.clone(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Polarization tensor

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationTensor {
    pub m: [[f64; 3]; 3],
    pub h: f64,
    pub eta: f64,
    pub mu: f64,
    pub nu: f64,
}

impl PolarizationTensor {
    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// max |M_ij − M_ji| / ‖M‖.
    pub fn asymmetry(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.m[i][j] - self.m[j][i]).abs());
            }
        }
        d / self.norm()
    }

    /// max off-diagonal |M_ij| / ‖M‖.
    pub fn off_diagonal(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    d = d.max(self.m[i][j].abs());
                }
            }
        }
        d / self.norm()
    }

    /// ‖self − other‖ / ‖other‖.
    pub fn relative_change(&self, other: &PolarizationTensor) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d += (self.m[i][j] - other.m[i][j]).powi(2);
            }
        }
        d.sqrt() / other.norm()
    }
}

/// M_ij = ∫ φ⁽ʲ⁾·e_i with φ⁽ʲ⁾ the regularized Mindlin screen density for data e_j.
pub fn polarization_tensor(mesh: &DiskSurfaceMesh, mu: f64, nu: f64, eta: f64) -> Result<PolarizationTensor> {
    if !(nu > 0.0 && nu < 0.5) {
        return Err(Error::param(format!("Poisson ratio {nu} outside (0, 0.5)")));
    }
    let sys = assemble_screen(mesh, &Kernel::Mindlin3d { mu, nu }, eta)?;
    polarization_from_system(&sys)
}

pub fn polarization_from_system(sys: &ScreenSystem) -> Result<PolarizationTensor> {
    let Kernel::Mindlin3d { mu, nu } = sys.kernel else {
        return Err(Error::param("polarization tensor needs the 3D Mindlin kernel"));
    };
    let nv = sys.mesh.n_vertices();
    let mut m = [[0.0; 3]; 3];
    for j in 0..3 {
        let rhs: Vec<f64> = (0..3 * nv).map(|k| if k % 3 == j { 1.0 } else { 0.0 }).collect();
        let phi = solve_screen(sys, &rhs)?;
        let total = phi.integral(&sys.mesh);
        for i in 0..3 {
            m[i][j] = total[i];
        }
    }
    Ok(PolarizationTensor {
        m,
        h: sys.mesh.h,
        eta: sys.eta,
        mu,
        nu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh2d::gen_screen_disk;
    use proptest::prelude::*;

    fn tri(a: Point, b: Point, c: Point) -> [Point; 3] {
        [a, b, c]
    }

    #[test]
    fn kernel_examples() {
        let x = [1.0, 0.0, 0.0];
        let o = [0.0, 0.0, 0.0];
        let KernelValue::Scalar(v) = kernel_eval(&Kernel::Laplace3d, &x, &o).unwrap() else {
            panic!()
        };
        assert!((v - 0.079_577_5).abs() < 1e-7);
        let KernelValue::Scalar(v) = kernel_eval(&Kernel::Laplace2dLog, &[1.0, 0.0], &[0.0, 0.0]).unwrap() else {
            panic!()
        };
        assert_eq!(v, 0.0);
        let KernelValue::Matrix3(m) = kernel_eval(&Kernel::Mindlin3d { mu: 1.0, nu: 0.3 }, &x, &o).unwrap() else {
            panic!()
        };
        assert!((m[2][2] - 0.111_408_5).abs() < 1e-7);
        assert!(matches!(
            kernel_eval(&Kernel::Laplace3d, &o, &o),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn planar_mindlin_matches_closed_form() {
        let k = Kernel::Mindlin3d { mu: 2.0, nu: 0.35 };
        let (x, y) = ([0.3, -0.2, 0.0], [-0.1, 0.4, 0.0]);
        let KernelValue::Matrix3(m) = kernel_eval(&k, &x, &y).unwrap() else {
            panic!()
        };
        let mut g = [0.0; 9];
        k.planar_into([x[0] - y[0], x[1] - y[1]], &mut g);
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - g[3 * i + j]).abs() < 1e-14, "{i}{j}");
            }
        }
        // reciprocity L(x, y)ᵀ = L(y, x)
        let KernelValue::Matrix3(n) = kernel_eval(&k, &y, &x).unwrap() else {
            panic!()
        };
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - n[j][i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mindlin_surface_is_traction_free() {
        let (mu, nu) = (1.3, 0.27);
        let lambda = 2.0 * mu * nu / (1.0 - 2.0 * nu);
        let k = Kernel::Mindlin3d { mu, nu };
        let y = [0.0, 0.0, 0.0];
        let step = 1e-5;
        for x0 in [[0.5, 0.0], [0.3, 0.6], [-0.7, 0.4], [0.0, -1.2]] {
            // displacement gradient at depth ~0 by central differences (analytic
            // continuation above the plane is smooth away from the load)
            let disp = |p: [f64; 3]| {
                let rho = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                assert!(rho > 0.4);
                mindlin_half_space(mu, nu, [p[0] - y[0], p[1] - y[1]], -p[2])
            };
            let base = [x0[0], x0[1], 0.0];
            let KernelValue::Matrix3(on) = kernel_eval(&k, &base, &y).unwrap() else {
                panic!()
            };
            let mut grad = [[[0.0; 3]; 3]; 3]; // grad[col][i][d] = ∂_d u_i
            for d in 0..3 {
                let (mut p, mut m) = (base, base);
                p[d] += step;
                m[d] -= step;
                let (up, um) = (disp(p), disp(m));
                for col in 0..3 {
                    for i in 0..3 {
                        grad[col][i][d] = (up[i][col] - um[i][col]) / (2.0 * step);
                    }
                }
            }
            for col in 0..3 {
                let g = grad[col];
                let div = g[0][0] + g[1][1] + g[2][2];
                let mut scale: f64 = 0.0;
                let mut traction = [0.0; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        let delta = if i == j { lambda * div } else { 0.0 };
                        let s = mu * (g[i][j] + g[j][i]) + delta;
                        scale = scale.max(s.abs());
                        if j == 2 {
                            traction[i] = s;
                        }
                    }
                }
                for t in traction {
                    assert!(t.abs() <= 1e-3 * scale, "x {x0:?} col {col}: {traction:?} vs {scale}");
                }
                // off-plane formula agrees with the planar one at depth 0
                let m = disp(base);
                for i in 0..3 {
                    assert!((m[i][col] - on[i][col]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn mindlin2d_reciprocity() {
        let k = Kernel::Mindlin2d { mu: 1.0, nubar: 0.2 };
        let KernelValue::Matrix2(a) = kernel_eval(&k, &[0.5, 0.0], &[0.0, 0.0]).unwrap() else {
            panic!()
        };
        let KernelValue::Matrix2(b) = kernel_eval(&k, &[0.0, 0.0], &[0.5, 0.0]).unwrap() else {
            panic!()
        };
        assert!((a[0][1] - b[1][0]).abs() < 1e-15);
        assert!((a[0][0] - b[0][0]).abs() < 1e-15);
    }

    /// ∫∫ f(x, y) over the product via nested collapsed Gauss (smooth f only).
    fn product_oracle(tk: &[Point; 3], tl: &[Point; 3], f: &dyn Fn([f64; 2], [f64; 2]) -> f64) -> f64 {
        let rule = triangle_rule(8);
        let jac = twice_area(tk) * twice_area(tl);
        let mut s = 0.0;
        for &(x, wx) in &rule {
            for &(y, wy) in &rule {
                s += wx * wy * f(x, y);
            }
        }
        s * jac
    }

    #[test]
    fn singular_rules_integrate_smooth_functions() {
        // all transforms must cover the product of reference triangles exactly once
        let f = |x: [f64; 2], y: [f64; 2]| 1.0 + x[0] * x[0] * y[1] + 3.0 * x[1] * y[0] * y[0] - x[0] * y[1] * x[1];
        let t = tri([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        let exact = product_oracle(&t, &t, &f);
        let rules = PairRules::new(6).unwrap();
        for (name, rule) in [
            ("identical", &rules.identical),
            ("edge", &rules.edge),
            ("vertex", &rules.vertex),
        ] {
            let s: f64 = rule.iter().map(|r| r.w * f(r.x, r.y)).sum::<f64>() * twice_area(&t).powi(2);
            assert!((s - exact).abs() < 1e-12, "{name}: {s} vs {exact}");
        }
    }

    /// Adaptive oracle for ∫_{T_k}∫_{T_l} b_a(x) b_b(y) / (4π|x − y|): inner
    /// integral exact in polar form around x, outer integral on a refined grid.
    fn inner_potential(tl: &[Point; 3], b: usize, x: Point) -> f64 {
        // affine basis b on tl, extended
        let (g, _) = p1_gradients(tl);
        let f = |y: Point| {
            let v = tl[b];
            1.0 + g[b][0] * (y[0] - v[0]) + g[b][1] * (y[1] - v[1])
        };
        let orient = (tl[1][0] - tl[0][0]) * (tl[2][1] - tl[0][1]) - (tl[1][1] - tl[0][1]) * (tl[2][0] - tl[0][0]);
        let mut total = 0.0;
        for e in 0..3 {
            let (q1, q2) = (tl[e], tl[(e + 1) % 3]);
            let signed = (q1[0] - x[0]) * (q2[1] - x[1]) - (q1[1] - x[1]) * (q2[0] - x[0]);
            if signed.abs() < 1e-300 {
                continue;
            }
            // ∫_0^1 dv ∫_0^1 du signed · f(x + u d(v)) / |d(v)|; linear in u, exact by midpoint
            let g = |v: f64| {
                let d = [q1[0] - x[0] + v * (q2[0] - q1[0]), q1[1] - x[1] + v * (q2[1] - q1[1])];
                signed * f([x[0] + 0.5 * d[0], x[1] + 0.5 * d[1]]) / d[0].hypot(d[1])
            };
            total += adaptive(&g, 0.0, 1.0, 1e-13, 30);
        }
        total * orient.signum() / (4.0 * PI)
    }

    fn gauss8(g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        thread_local!(static RULE: Vec<(f64, f64)> = gauss_legendre_01(8));
        RULE.with(|r| r.iter().map(|&(t, w)| w * (b - a) * g(a + t * (b - a))).sum())
    }

    fn adaptive(g: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let whole = gauss8(g, a, b);
        let m = 0.5 * (a + b);
        let halves = gauss8(g, a, m) + gauss8(g, m, b);
        if depth == 0 || (halves - whole).abs() <= tol {
            halves
        } else {
            adaptive(g, a, m, tol, depth - 1) + adaptive(g, m, b, tol, depth - 1)
        }
    }

    fn pair_oracle(tk: &[Point; 3], tl: &[Point; 3], a: usize, b: usize, levels: usize) -> f64 {
        let rule = triangle_deg5();
        let m = 1 << levels;
        let h = 1.0 / m as f64;
        let mut total = 0.0;
        let jac = twice_area(tk);
        for i in 0..m {
            for j in 0..m - i {
                let (u, v) = (i as f64 * h, j as f64 * h);
                let mut subs = vec![[[u, v], [u + h, v], [u, v + h]]];
                if i + j + 1 < m {
                    subs.push([[u + h, v], [u + h, v + h], [u, v + h]]);
                }
                for s in subs {
                    for q in &rule {
                        let bx = s[0][0] + q.xi * (s[1][0] - s[0][0]) + q.eta * (s[2][0] - s[0][0]);
                        let by = s[0][1] + q.xi * (s[1][1] - s[0][1]) + q.eta * (s[2][1] - s[0][1]);
                        let x = [
                            tk[0][0] + bx * (tk[1][0] - tk[0][0]) + by * (tk[2][0] - tk[0][0]),
                            tk[0][1] + bx * (tk[1][1] - tk[0][1]) + by * (tk[2][1] - tk[0][1]),
                        ];
                        let ba = [1.0 - bx - by, bx, by][a];
                        total += q.w * h * h * jac * ba * inner_potential(tl, b, x);
                    }
                }
            }
        }
        total
    }

    /// Reference-triangle basis index of physical vertex `a` under [`map`]:
    /// basis() returns weights of P0, P1, P2, the same vertex order.
    fn check_block(tk: &[Point; 3], tl: &[Point; 3], case: PairCase, near: bool, tol: f64, levels: usize) {
        let rules = PairRules::new(DEFAULT_ORDER).unwrap();
        let block = singular_pair_integral(tk, tl, &Kernel::Laplace3d, case, near, &rules).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let oracle = pair_oracle(tk, tl, a, b, levels);
                let got = block[a][b][0];
                assert!(
                    (got - oracle).abs() <= tol * oracle.abs(),
                    "{case:?} ({a},{b}): {got} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn identical_pair_matches_oracle() {
        let t = tri([0.0, 0.0], [1.0, 0.0], [0.3, 0.8]);
        check_block(&t, &t, PairCase::Identical, false, 1e-4, 5);
    }

    #[test]
    fn adjacent_pairs_match_oracle() {
        let tk = tri([0.0, 0.0], [1.0, 0.0], [0.4, 0.9]);
        let tl = tri([0.0, 0.0], [1.0, 0.0], [0.6, -0.7]);
        check_block(&tk, &tl, PairCase::SharedEdge, false, 1e-4, 5);
        let tl = tri([0.0, 0.0], [-0.8, 0.2], [-0.5, -0.9]);
        check_block(&tk, &tl, PairCase::SharedVertex, false, 1e-4, 5);
    }

    #[test]
    fn disjoint_pair_matches_oracle() {
        let tk = tri([0.0, 0.0], [0.1, 0.0], [0.04, 0.09]);
        let tl = tri([2.0, 1.0], [2.1, 1.05], [2.02, 1.1]);
        check_block(&tk, &tl, PairCase::Disjoint, false, 1e-6, 3);
    }

    #[test]
    fn pair_integral_is_linear_and_homogeneous() {
        let tk = tri([0.0, 0.0], [1.0, 0.0], [0.3, 0.8]);
        let tl = tri([0.0, 0.0], [1.0, 0.0], [0.6, -0.7]);
        let rules = PairRules::new(DEFAULT_ORDER).unwrap();
        let k1 = Kernel::Kelvin3d { mu: 1.0, lambda: 1.0 };
        let k2 = Kernel::Kelvin3d { mu: 0.5, lambda: 0.5 };
        let a = singular_pair_integral(&tk, &tl, &k1, PairCase::SharedEdge, false, &rules).unwrap();
        let b = singular_pair_integral(&tk, &tl, &k2, PairCase::SharedEdge, false, &rules).unwrap();
        let s = 0.37;
        let sk = tk.map(|p| [s * p[0], s * p[1]]);
        let sl = tl.map(|p| [s * p[0], s * p[1]]);
        let c = singular_pair_integral(&sk, &sl, &k1, PairCase::SharedEdge, false, &rules).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for m in 0..9 {
                    // halving the Lamé parameters doubles the kernel
                    assert!((2.0 * a[i][j][m] - b[i][j][m]).abs() <= 1e-14 * b[i][j][m].abs().max(1e-300));
                    // degree −1 kernel over two area elements: s³
                    assert!((s.powi(3) * a[i][j][m] - c[i][j][m]).abs() <= 1e-10 * c[i][j][m].abs().max(1e-12));
                }
            }
        }
        let degenerate = tri([0.0, 0.0], [1.0, 0.0], [2.0, 0.0]);
        assert!(singular_pair_integral(&degenerate, &tl, &k1, PairCase::Disjoint, false, &rules).is_err());
    }

    #[test]
    fn laplace_matrix_is_symmetric_and_eta_is_linear() {
        let mesh = gen_screen_disk(3).unwrap();
        let sys = assemble_screen(&mesh, &Kernel::Laplace3d, 1e-3).unwrap();
        let n = sys.n_dofs();
        let bmax = (0..n).map(|i| sys.b[(i, i)].abs()).fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..n {
                assert!((sys.b[(i, j)] - sys.b[(j, i)]).abs() <= 1e-10 * bmax);
            }
        }
        let sys2 = sys.with_eta(2e-3).unwrap();
        let (a1, a2) = (sys.matrix(), sys2.matrix());
        for i in 0..n {
            for j in 0..n {
                let d = a2[(i, j)] - a1[(i, j)] - 1e-3 * sys.k_reg[(i, j)];
                assert!(d.abs() <= 1e-15 * bmax);
            }
        }
    }

    #[test]
    fn spectral_floor_grows_with_eta() {
        let mesh = gen_screen_disk(3).unwrap();
        let sys = assemble_screen(&mesh, &Kernel::Laplace3d, 1e-5).unwrap();
        let lo = |s: &ScreenSystem| {
            let a = s.matrix();
            let sym = Mat::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
            sym.self_adjoint_eigenvalues(Side::Lower)
                .unwrap()
                .into_iter()
                .fold(f64::INFINITY, f64::min)
        };
        let l1 = lo(&sys);
        let l2 = lo(&sys.with_eta(1e-3).unwrap());
        assert!(l1 > 0.0 && l2 > l1, "{l1} {l2}");
    }

    #[test]
    fn mindlin_matrix_has_block_transpose_symmetry() {
        let mesh = gen_screen_disk(2).unwrap();
        let sys = assemble_screen(&mesh, &Kernel::Mindlin3d { mu: 1.0, nu: 0.3 }, 1e-4).unwrap();
        let n = sys.n_dofs();
        let bmax = (0..n).map(|i| sys.b[(i, i)].abs()).fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..n {
                assert!((sys.b[(i, j)] - sys.b[(j, i)]).abs() <= 1e-6 * bmax);
            }
        }
    }

    #[test]
    fn zero_rhs_gives_zero_density() {
        let mesh = gen_screen_disk(2).unwrap();
        let sys = assemble_screen(&mesh, &Kernel::Laplace3d, 1e-4).unwrap();
        let phi = solve_screen(&sys, &vec![0.0; mesh.n_vertices()]).unwrap();
        assert!(phi.values.iter().all(|&v| v == 0.0));
        assert!(solve_screen(&sys, &[1.0]).is_err());
    }

    #[test]
    fn metrics_examples() {
        let mesh = gen_screen_disk(25).unwrap();
        let zero = ScreenDensity {
            arity: 1,
            values: vec![0.0; mesh.n_vertices()],
            residual: 0.0,
        };
        assert!(interior_error(&mesh, &zero.values, 0.9) > 0.0);
        let a = (zero.integral(&mesh)[0] - EQUILIBRIUM_TOTAL).powi(2);
        assert_eq!(a, 64.0);
        let exact: Vec<f64> = mesh
            .vertices
            .iter()
            .map(|&x| {
                if x[0].hypot(x[1]) < 1.0 - 1e-9 {
                    equilibrium_density(x)
                } else {
                    0.0
                }
            })
            .collect();
        assert!(interior_error(&mesh, &exact, 0.9) <= 1e-2);
    }

    #[test]
    fn single_layer_of_exact_density_is_one() {
        // the cone quadrature reproduces S φ = 1 for a fine interpolant away from the rim
        let mesh = gen_screen_disk(12).unwrap();
        let exact: Vec<f64> = mesh
            .vertices
            .iter()
            .map(|&x| {
                let r = x[0].hypot(x[1]).min(1.0 - 0.25 * mesh.h);
                equilibrium_density([r, 0.0])
            })
            .collect();
        let s = single_layer(&mesh, &exact, [0.0, 0.0]);
        assert!((s - 1.0).abs() < 0.1, "{s}");
    }

    #[test]
    fn polarization_rejects_bad_poisson_ratio() {
        let mesh = gen_screen_disk(1).unwrap();
        assert!(polarization_tensor(&mesh, 1.0, 0.5, 1e-3).is_err());
    }

    #[test]
    fn polarization_matches_rigid_punch_stiffness() {
        // rigid disk on a half-space: 4μa/(1-ν) vertical, 32μa(1-ν)/(7-8ν) tangential;
        // the normal-tangential coupling scales with 1-2ν and is negligible here
        let (mu, nu) = (2.0, 0.49);
        let mesh = gen_screen_disk(10).unwrap();
        let t = polarization_tensor(&mesh, mu, nu, 1e-5).unwrap();
        let vertical = 4.0 * mu / (1.0 - nu);
        let tangential = 32.0 * mu * (1.0 - nu) / (7.0 - 8.0 * nu);
        assert!((t.m[2][2] / vertical - 1.0).abs() < 0.03, "{} vs {vertical}", t.m[2][2]);
        for i in 0..2 {
            assert!(
                (t.m[i][i] / tangential - 1.0).abs() < 0.03,
                "{} vs {tangential}",
                t.m[i][i]
            );
        }
    }

    proptest! {
        #[test]
        fn planar_kernels_are_homogeneous(dx in -1.0..1.0f64, dy in -1.0..1.0f64, s in 0.1..10.0f64) {
            prop_assume!(dx.hypot(dy) > 1e-3);
            for k in [Kernel::Laplace3d, Kernel::Kelvin3d { mu: 1.0, lambda: 2.0 }, Kernel::Mindlin3d { mu: 1.0, nu: 0.3 }] {
                let c2 = k.arity().pow(2);
                let (mut a, mut b) = ([0.0; 9], [0.0; 9]);
                k.planar_into([dx, dy], &mut a);
                k.planar_into([s * dx, s * dy], &mut b);
                for m in 0..c2 {
                    prop_assert!((a[m] - s * b[m]).abs() <= 1e-12 * a[m].abs().max(1e-12));
                }
            }
        }
    }
}
