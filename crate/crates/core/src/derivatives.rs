//! Shape gradients at interface points and topological derivative fields on
//! boundary vertices.

use std::f64::consts::PI;

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{interpolate_at, Coef, FemField, FieldValue};
use crate::mesh2d::Mesh2D;
use crate::quadrature::gauss_legendre_01;
use crate::region::{circ_dist, signed_distance, InterfacePoint};
use crate::smoothing::TransitionProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeVariant {
    DirichletSmoothed,
    NeumannInhom,
    MixerCathode,
    MixerAnode,
    ElasticSupport,
    ClampLoad,
    AreaPenalty,
    ContourPenalty,
    HelmholtzImpedance,
}

/// Evaluation of the smoothed Robin-transition derivative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothedForm {
    /// Collapsed formula using u and p at the interface point only.
    #[default]
    Endpoint,
    /// Full transition-band integral against h'; the exact derivative of the
    /// discrete smoothed objective.
    Band,
}

/// One value per interface point; positive means growing G increases J.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeGradient {
    pub variant: ShapeVariant,
    pub points: Vec<InterfacePoint>,
    pub values: Vec<f64>,
}

impl ShapeGradient {
    fn new(variant: ShapeVariant, points: &[InterfacePoint], values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite {variant:?} shape gradient")));
        }
        Ok(ShapeGradient {
            variant,
            points: points.to_vec(),
            values,
        })
    }

    /// Normal velocity θ·n of the descent direction.
    pub fn descent(&self) -> Vec<f64> {
        self.values.iter().map(|v| -v).collect()
    }

    /// J'(θ) for normal velocities θ·n at the interface points.
    pub fn predicted_change(&self, theta_n: &[f64]) -> f64 {
        self.values.iter().zip(theta_n).map(|(v, t)| v * t).sum()
    }

    /// dJ/ds_k for moving interface point k along increasing arclength.
    pub fn arclength_derivative(&self) -> Vec<f64> {
        self.points
            .iter()
            .zip(&self.values)
            .map(|(p, v)| p.conormal_sign * v)
            .collect()
    }

    /// Pointwise sum of gradients on the same interface, keeping `self.variant`.
    pub fn plus(&self, other: &ShapeGradient) -> Result<ShapeGradient> {
        if self.points.len() != other.points.len()
            || self
                .points
                .iter()
                .zip(&other.points)
                .any(|(a, b)| (a.s - b.s).abs() > 1e-12)
        {
            return Err(Error::Consistency(
                "shape gradients live on different interfaces".into(),
            ));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(ShapeGradient {
            variant: self.variant,
            points: self.points.clone(),
            values,
        })
    }
}

/// Smoothed transition region used by a state solve.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedRegion<'a> {
    pub loop_id: usize,
    pub interface: &'a [InterfacePoint],
    pub eps: f64,
    pub profile: TransitionProfile,
    /// Whether the Robin coefficient carries the 1/eps prefactor.
    pub scaled: bool,
}

impl SmoothedRegion<'_> {
    fn prefactor(&self) -> f64 {
        if self.scaled {
            1.0 / self.eps
        } else {
            1.0
        }
    }
}

fn check_eps(u: &FemField, eps: f64) -> Result<()> {
    match u.eps_smooth {
        Some(e) if (e - eps).abs() <= 1e-14 * eps => Ok(()),
        other => Err(Error::Consistency(format!(
            "field solved with eps {other:?}, derivative requested at {eps}"
        ))),
    }
}

fn check_len(u: &FemField, mesh: &Mesh2D) -> Result<()> {
    if u.len() != mesh.n_vertices() {
        return Err(Error::Consistency(format!(
            "field has {} values, mesh has {} vertices",
            u.len(),
            mesh.n_vertices()
        )));
    }
    Ok(())
}

fn real_at(u: &FemField, mesh: &Mesh2D, p: &InterfacePoint) -> Result<f64> {
    match interpolate_at(u, mesh, p.position)? {
        FieldValue::Real(v) => Ok(v),
        _ => Err(Error::Consistency("expected a real scalar field".into())),
    }
}

fn complex_at(u: &FemField, mesh: &Mesh2D, p: &InterfacePoint) -> Result<c64> {
    match interpolate_at(u, mesh, p.position)? {
        FieldValue::Complex(v) => Ok(v),
        _ => Err(Error::Consistency("expected a complex field".into())),
    }
}

fn vector_at(u: &FemField, mesh: &Mesh2D, p: &InterfacePoint) -> Result<[f64; 2]> {
    match interpolate_at(u, mesh, p.position)? {
        FieldValue::Vector(v) => Ok(v),
        _ => Err(Error::Consistency("expected a vector field".into())),
    }
}

/// Boundary integrals ∫ φ_j q ds for every loop vertex j, where q is the
/// product of two P1 traces given by `prod(a, b, t)` on edge (a, b).
fn band_weights(mesh: &Mesh2D, loop_id: usize, prod: &dyn Fn(usize, usize, f64) -> f64) -> Vec<f64> {
    let l = &mesh.loops[loop_id];
    let n = l.len();
    let rule = gauss_legendre_01(2);
    let mut w = vec![0.0; n];
    for i in 0..n {
        let (a, b) = l.edge(i);
        let len = l.edge_length(i);
        for &(t, wq) in &rule {
            let q = prod(a, b, t) * wq * len;
            w[i] += (1.0 - t) * q;
            w[(i + 1) % n] += t * q;
        }
    }
    w
}

/// Accumulates -prefactor h'(d/eps)/eps weighted band integrals onto the nearest interface point.
fn band_gradient(mesh: &Mesh2D, region: &SmoothedRegion, weights: &[f64]) -> Vec<f64> {
    let l = &mesh.loops[region.loop_id];
    let p = l.perimeter;
    let mut out = vec![0.0; region.interface.len()];
    if region.interface.is_empty() {
        return out;
    }
    for (j, &s) in l.arclength.iter().enumerate() {
        let d = signed_distance(s, region.interface, p);
        let dh = region.profile.dh(d / region.eps);
        if dh == 0.0 {
            continue;
        }
        let k = nearest(region.interface, s, p);
        out[k] -= region.prefactor() * dh / region.eps * weights[j];
    }
    out
}

fn nearest(interface: &[InterfacePoint], s: f64, perimeter: f64) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (k, q) in interface.iter().enumerate() {
        let d = circ_dist(s, q.s, perimeter);
        if d < bd {
            bd = d;
            best = k;
        }
    }
    best
}

fn trace_product<'a>(u: &'a [f64], p: &'a [f64]) -> impl Fn(usize, usize, f64) -> f64 + 'a {
    move |a, b, t| ((1.0 - t) * u[a] + t * u[b]) * ((1.0 - t) * p[a] + t * p[b])
}

/// Homogeneous Dirichlet region under Robin smoothing.
///
/// The endpoint form is prefactor·u·p; it is the first-order collapse of the band form.
pub fn dirichlet_smoothed(
    mesh: &Mesh2D,
    region: &SmoothedRegion,
    u: &FemField,
    p: &FemField,
    form: SmoothedForm,
) -> Result<ShapeGradient> {
    check_eps(u, region.eps)?;
    check_eps(p, region.eps)?;
    check_len(u, mesh)?;
    check_len(p, mesh)?;
    let values = match form {
        SmoothedForm::Endpoint => region
            .interface
            .iter()
            .map(|x| Ok(region.prefactor() * real_at(u, mesh, x)? * real_at(p, mesh, x)?))
            .collect::<Result<Vec<_>>>()?,
        SmoothedForm::Band => {
            let w = band_weights(mesh, region.loop_id, &trace_product(u.real(), p.real()));
            band_gradient(mesh, region, &w)
        }
    };
    ShapeGradient::new(ShapeVariant::DirichletSmoothed, region.interface, values)
}

/// Vector analogue of [`dirichlet_smoothed`] for a smoothed elastic support.
pub fn elastic_support(
    mesh: &Mesh2D,
    region: &SmoothedRegion,
    u: &FemField,
    p: &FemField,
    form: SmoothedForm,
) -> Result<ShapeGradient> {
    check_eps(u, region.eps)?;
    check_eps(p, region.eps)?;
    check_len(u, mesh)?;
    check_len(p, mesh)?;
    let values = match form {
        SmoothedForm::Endpoint => region
            .interface
            .iter()
            .map(|x| {
                let (a, b) = (vector_at(u, mesh, x)?, vector_at(p, mesh, x)?);
                Ok(region.prefactor() * (a[0] * b[0] + a[1] * b[1]))
            })
            .collect::<Result<Vec<_>>>()?,
        SmoothedForm::Band => {
            let (uv, pv) = (u.vector(), p.vector());
            let prod = |a: usize, b: usize, t: f64| {
                (0..2)
                    .map(|c| ((1.0 - t) * uv[a][c] + t * uv[b][c]) * ((1.0 - t) * pv[a][c] + t * pv[b][c]))
                    .sum()
            };
            let w = band_weights(mesh, region.loop_id, &prod);
            band_gradient(mesh, region, &w)
        }
    };
    ShapeGradient::new(ShapeVariant::ElasticSupport, region.interface, values)
}

/// Two-region mixer: cathode Σ_C (u = 0) and anode Σ_A (u = u_in), both
/// smoothed. Returns (cathode, anode) gradients.
pub fn mixer_two_region(
    mesh: &Mesh2D,
    cathode: &SmoothedRegion,
    anode: &SmoothedRegion,
    u: &FemField,
    p: &FemField,
    u_in: f64,
    form: SmoothedForm,
) -> Result<(ShapeGradient, ShapeGradient)> {
    for r in [cathode, anode] {
        check_eps(u, r.eps)?;
        check_eps(p, r.eps)?;
    }
    check_len(u, mesh)?;
    check_len(p, mesh)?;
    let (uv, pv) = (u.real(), p.real());
    let (vc, va) = match form {
        SmoothedForm::Endpoint => {
            let vc = cathode
                .interface
                .iter()
                .map(|x| Ok(cathode.prefactor() * real_at(u, mesh, x)? * real_at(p, mesh, x)?))
                .collect::<Result<Vec<_>>>()?;
            let va = anode
                .interface
                .iter()
                .map(|x| Ok(-anode.prefactor() * (u_in - real_at(u, mesh, x)?) * real_at(p, mesh, x)?))
                .collect::<Result<Vec<_>>>()?;
            (vc, va)
        }
        SmoothedForm::Band => {
            let wc = band_weights(mesh, cathode.loop_id, &trace_product(uv, pv));
            let drive = |a: usize, b: usize, t: f64| {
                -(u_in - ((1.0 - t) * uv[a] + t * uv[b])) * ((1.0 - t) * pv[a] + t * pv[b])
            };
            let wa = band_weights(mesh, anode.loop_id, &drive);
            (band_gradient(mesh, cathode, &wc), band_gradient(mesh, anode, &wa))
        }
    };
    Ok((
        ShapeGradient::new(ShapeVariant::MixerCathode, cathode.interface, vc)?,
        ShapeGradient::new(ShapeVariant::MixerAnode, anode.interface, va)?,
    ))
}

/// Inhomogeneous Neumann region carrying flux g: v = -g p.
pub fn neumann_inhom(mesh: &Mesh2D, interface: &[InterfacePoint], g: f64, p: &FemField) -> Result<ShapeGradient> {
    check_len(p, mesh)?;
    let values = interface
        .iter()
        .map(|x| Ok(-g * real_at(p, mesh, x)?))
        .collect::<Result<Vec<_>>>()?;
    ShapeGradient::new(ShapeVariant::NeumannInhom, interface, values)
}

/// Region carrying the normal traction f n: v = -f (p·n).
pub fn clamp_load(
    mesh: &Mesh2D,
    loop_id: usize,
    interface: &[InterfacePoint],
    f: f64,
    p: &FemField,
) -> Result<ShapeGradient> {
    check_len(p, mesh)?;
    let l = &mesh.loops[loop_id];
    let values = interface
        .iter()
        .map(|x| {
            let n = mesh.edge_normal(loop_id, l.edge_at(x.s.rem_euclid(l.perimeter)));
            let pv = vector_at(p, mesh, x)?;
            Ok(-f * (pv[0] * n[0] + pv[1] * n[1]))
        })
        .collect::<Result<Vec<_>>>()?;
    ShapeGradient::new(ShapeVariant::ClampLoad, interface, values)
}

/// Impedance region of the interior Helmholtz model: v = (k/Z) Im(conj(u) p).
pub fn helmholtz_impedance(
    mesh: &Mesh2D,
    interface: &[InterfacePoint],
    u: &FemField,
    p: &FemField,
    k: f64,
    z: f64,
) -> Result<ShapeGradient> {
    check_len(u, mesh)?;
    check_len(p, mesh)?;
    let values = interface
        .iter()
        .map(|x| Ok(k / z * (complex_at(u, mesh, x)?.conj() * complex_at(p, mesh, x)?).im))
        .collect::<Result<Vec<_>>>()?;
    ShapeGradient::new(ShapeVariant::HelmholtzImpedance, interface, values)
}

/// ℓ·Area(G): v = ℓ.
pub fn area_penalty(interface: &[InterfacePoint], ell: f64) -> Result<ShapeGradient> {
    ShapeGradient::new(ShapeVariant::AreaPenalty, interface, vec![ell; interface.len()])
}

/// Sum of a weight over the interface points; `weight_ds` is the weight's
/// derivative along increasing arclength.
pub fn contour_penalty(interface: &[InterfacePoint], weight_ds: &dyn Fn(f64) -> f64) -> Result<ShapeGradient> {
    let values = interface.iter().map(|x| x.conormal_sign * weight_ds(x.s)).collect();
    ShapeGradient::new(ShapeVariant::ContourPenalty, interface, values)
}

// ---------------------------------------------------------------------------
// Topological derivatives

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopoVariant {
    ConducDirichletHom,
    ConducDirichletInhom,
    ConducNeumannInhom,
    HelmholtzImpedance,
    ElastDirichlet2d,
    ElastDirichlet3d,
    ClampLoad2d,
    MixerCathode,
    MixerAnode,
}

/// ρ(ε) multiplying the stored coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScaleLaw {
    /// c / |log ε|
    InvLog(f64),
    /// c ε
    Linear(f64),
    /// c ε²
    Quadratic(f64),
}

impl ScaleLaw {
    pub fn rho(&self, eps: f64) -> f64 {
        match *self {
            ScaleLaw::InvLog(c) => c / eps.ln().abs(),
            ScaleLaw::Linear(c) => c * eps,
            ScaleLaw::Quadratic(c) => c * eps * eps,
        }
    }
}

impl TopoVariant {
    /// Scale law in dimension 2 or 3.
    pub fn scale_law(&self, dim: usize) -> ScaleLaw {
        use TopoVariant::*;
        match (self, dim) {
            (ConducDirichletHom | ConducDirichletInhom | MixerCathode | MixerAnode, 2) => ScaleLaw::InvLog(PI),
            (ConducDirichletHom | ConducDirichletInhom | MixerCathode | MixerAnode, _) => ScaleLaw::Linear(4.0),
            (ConducNeumannInhom | HelmholtzImpedance, 2) => ScaleLaw::Linear(2.0),
            (ConducNeumannInhom | HelmholtzImpedance, _) => ScaleLaw::Quadratic(PI),
            (ElastDirichlet2d, _) => ScaleLaw::InvLog(1.0),
            (ElastDirichlet3d | ClampLoad2d, _) => ScaleLaw::Linear(1.0),
        }
    }
}

/// Inputs of each topological derivative. Fields are sharp solves.
#[derive(Clone, Copy)]
pub enum TopoInputs<'a> {
    ConducDirichletHom {
        u0: &'a FemField,
        p0: &'a FemField,
        gamma: &'a Coef,
    },
    ConducDirichletInhom {
        u0: &'a FemField,
        p0: &'a FemField,
        gamma: &'a Coef,
        u_in: f64,
    },
    ConducNeumannInhom {
        p0: &'a FemField,
        g: f64,
    },
    HelmholtzImpedance {
        u0: &'a FemField,
        p0: &'a FemField,
        k: f64,
        z: f64,
    },
    /// Plane elasticity with Lamé μ and Poisson ratio ν; ν̄ = ν/(1+ν).
    ElastDirichlet2d {
        u0: &'a FemField,
        p0: &'a FemField,
        mu: f64,
        nu: f64,
    },
    /// 3-component traces per mesh vertex and the polarization tensor.
    ElastDirichlet3d {
        u0: &'a [[f64; 3]],
        p0: &'a [[f64; 3]],
        m: [[f64; 3]; 3],
    },
    ClampLoad2d {
        p0: &'a FemField,
        f: f64,
    },
    MixerCathode {
        u: &'a FemField,
        p: &'a FemField,
        gamma: &'a Coef,
    },
    MixerAnode {
        u: &'a FemField,
        p: &'a FemField,
        gamma: &'a Coef,
        u_in: f64,
    },
}

impl TopoInputs<'_> {
    pub fn variant(&self) -> TopoVariant {
        match self {
            TopoInputs::ConducDirichletHom { .. } => TopoVariant::ConducDirichletHom,
            TopoInputs::ConducDirichletInhom { .. } => TopoVariant::ConducDirichletInhom,
            TopoInputs::ConducNeumannInhom { .. } => TopoVariant::ConducNeumannInhom,
            TopoInputs::HelmholtzImpedance { .. } => TopoVariant::HelmholtzImpedance,
            TopoInputs::ElastDirichlet2d { .. } => TopoVariant::ElastDirichlet2d,
            TopoInputs::ElastDirichlet3d { .. } => TopoVariant::ElastDirichlet3d,
            TopoInputs::ClampLoad2d { .. } => TopoVariant::ClampLoad2d,
            TopoInputs::MixerCathode { .. } => TopoVariant::MixerCathode,
            TopoInputs::MixerAnode { .. } => TopoVariant::MixerAnode,
        }
    }

    fn fields(&self) -> Vec<&FemField> {
        match *self {
            TopoInputs::ConducDirichletHom { u0, p0, .. }
            | TopoInputs::ConducDirichletInhom { u0, p0, .. }
            | TopoInputs::HelmholtzImpedance { u0, p0, .. }
            | TopoInputs::ElastDirichlet2d { u0, p0, .. } => vec![u0, p0],
            TopoInputs::MixerCathode { u, p, .. } | TopoInputs::MixerAnode { u, p, .. } => vec![u, p],
            TopoInputs::ConducNeumannInhom { p0, .. } | TopoInputs::ClampLoad2d { p0, .. } => vec![p0],
            TopoInputs::ElastDirichlet3d { .. } => vec![],
        }
    }
}

/// Where a topological derivative is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Admissible {
    pub loop_id: usize,
    /// Arcs (start, end) of the current G and of fixed regions.
    pub excluded: Vec<(f64, f64)>,
    pub delta_excl: f64,
    /// Label of optimizable boundary edges.
    pub label: u32,
}

impl Admissible {
    pub fn new(loop_id: usize, excluded: Vec<(f64, f64)>, delta_excl: f64) -> Self {
        Admissible {
            loop_id,
            excluded,
            delta_excl,
            label: 0,
        }
    }

    fn allows(&self, mesh: &Mesh2D, j: usize) -> bool {
        let l = &mesh.loops[self.loop_id];
        let n = l.len();
        // both incident edges must be optimizable
        if l.labels[j] != self.label || l.labels[(j + n - 1) % n] != self.label {
            return false;
        }
        let s = l.arclength[j];
        self.excluded
            .iter()
            .all(|&(a, b)| arc_distance(s, a, b, l.perimeter) > self.delta_excl)
    }
}

/// Arclength distance from s to the arc [a, b] (b may exceed the perimeter).
fn arc_distance(s: f64, a: f64, b: f64, perimeter: f64) -> f64 {
    let rel = (s - a).rem_euclid(perimeter);
    if rel <= b - a {
        0.0
    } else {
        circ_dist(s, a, perimeter).min(circ_dist(s, b, perimeter))
    }
}

/// ε-independent coefficient d_T at admissible boundary vertices; the
/// expansion reads J(G ∪ ω_ε) = J(G) + ρ(ε) d_T + o(ρ(ε)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoField {
    pub variant: TopoVariant,
    pub law: ScaleLaw,
    pub vertices: Vec<usize>,
    pub s: Vec<f64>,
    pub values: Vec<f64>,
    pub delta_excl: f64,
}

impl TopoField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn vertex_normal(mesh: &Mesh2D, loop_id: usize, j: usize) -> [f64; 2] {
    let n = mesh.loops[loop_id].len();
    let a = mesh.edge_normal(loop_id, (j + n - 1) % n);
    let b = mesh.edge_normal(loop_id, j);
    let m = [a[0] + b[0], a[1] + b[1]];
    let l = m[0].hypot(m[1]);
    [m[0] / l, m[1] / l]
}

pub fn topo_field(mesh: &Mesh2D, inputs: &TopoInputs, adm: &Admissible) -> Result<TopoField> {
    for f in inputs.fields() {
        if f.eps_smooth.is_some() {
            return Err(Error::Consistency(
                "topological derivatives need sharp (unsmoothed) solves".into(),
            ));
        }
        check_len(f, mesh)?;
    }
    let l = &mesh.loops[adm.loop_id];
    let mut vertices = Vec::new();
    let mut s = Vec::new();
    let mut values = Vec::new();
    for j in 0..l.len() {
        if !adm.allows(mesh, j) {
            continue;
        }
        let v = l.verts[j];
        let x = mesh.vertices[v];
        let value = match *inputs {
            TopoInputs::ConducDirichletHom { u0, p0, gamma } => gamma(x) * u0.real()[v] * p0.real()[v],
            TopoInputs::ConducDirichletInhom { u0, p0, gamma, u_in } => gamma(x) * (u_in - u0.real()[v]) * p0.real()[v],
            TopoInputs::ConducNeumannInhom { p0, g } => -g * p0.real()[v],
            TopoInputs::HelmholtzImpedance { u0, p0, k, z } => k / z * (u0.complex()[v].conj() * p0.complex()[v]).im,
            TopoInputs::ElastDirichlet2d { u0, p0, mu, nu } => {
                let nubar = nu / (1.0 + nu);
                let (a, b) = (u0.vector()[v], p0.vector()[v]);
                PI * mu / (1.0 - nubar) * (a[0] * b[0] + a[1] * b[1])
            }
            TopoInputs::ElastDirichlet3d { u0, p0, m } => {
                let (a, b) = (u0[v], p0[v]);
                (0..3).map(|i| (0..3).map(|k| m[i][k] * a[k]).sum::<f64>() * b[i]).sum()
            }
            TopoInputs::ClampLoad2d { p0, f } => {
                let n = vertex_normal(mesh, adm.loop_id, j);
                let pv = p0.vector()[v];
                -2.0 * f * (n[0] * pv[0] + n[1] * pv[1])
            }
            TopoInputs::MixerCathode { u, p, gamma } => -gamma(x) * u.real()[v] * p.real()[v],
            TopoInputs::MixerAnode { u, p, gamma, u_in } => gamma(x) * (u_in - u.real()[v]) * p.real()[v],
        };
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite topological derivative at s = {}",
                l.arclength[j]
            )));
        }
        vertices.push(v);
        s.push(l.arclength[j]);
        values.push(value);
    }
    let variant = inputs.variant();
    Ok(TopoField {
        variant,
        law: variant.scale_law(2),
        vertices,
        s,
        values,
        delta_excl: adm.delta_excl,
    })
}

/// (vertex, coefficient, arclength) of the most negative coefficient, if any is negative.
/// Ties go to the smallest arclength.
pub fn select_insertion_point(tf: &TopoField, delta_excl: f64) -> Option<(usize, f64, f64)> {
    debug_assert!((tf.delta_excl - delta_excl).abs() <= 1e-14 * delta_excl.abs().max(1.0));
    let mut best: Option<(usize, f64, f64)> = None;
    for ((&v, &s), &d) in tf.vertices.iter().zip(&tf.s).zip(&tf.values) {
        if d >= 0.0 {
            continue;
        }
        best = match best {
            Some((_, bs, bd)) if bd < d || (bd == d && bs <= s) => best,
            _ => Some((v, s, d)),
        };
    }
    best.map(|(v, s, d)| (v, d, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{constant, nodal_segments, BcSpec, Conductivity, ConductivitySolver, Objective};
    use crate::mesh2d::gen_disk_domain;
    use crate::smoothing::{default_profile, robin_from_distance};
    use proptest::prelude::*;

    fn interface(mesh: &Mesh2D, a: f64, b: f64) -> Vec<InterfacePoint> {
        vec![
            InterfacePoint {
                s: a,
                position: mesh.point_at(0, a),
                conormal_sign: -1.0,
            },
            InterfacePoint {
                s: b,
                position: mesh.point_at(0, b),
                conormal_sign: 1.0,
            },
        ]
    }

    fn scalar(values: Vec<f64>, eps: Option<f64>) -> FemField {
        FemField {
            values: crate::fem::FieldValues::Real(values),
            model: crate::fem::Model::Conductivity,
            eps_smooth: eps,
            objective: None,
            residual: 0.0,
        }
    }

    fn zero_field(mesh: &Mesh2D) -> FemField {
        scalar(vec![0.0; mesh.n_vertices()], None)
    }

    #[test]
    fn neumann_with_zero_flux_vanishes() {
        let m = gen_disk_domain(1.0, 64, 0.3).unwrap();
        let itf = interface(&m, 1.0, 2.0);
        let p = scalar(vec![3.0; m.n_vertices()], None);
        let g = neumann_inhom(&m, &itf, 0.0, &p).unwrap();
        assert_eq!(g.values, vec![0.0, 0.0]);
        let g = neumann_inhom(&m, &itf, 2.0, &p).unwrap();
        assert!(g.values.iter().all(|v| (v + 6.0).abs() < 1e-12));
    }

    #[test]
    fn area_and_contour_examples() {
        let m = gen_disk_domain(1.0, 64, 0.3).unwrap();
        let itf = interface(&m, 1.0, 2.0);
        assert_eq!(area_penalty(&itf, 0.3).unwrap().values, vec![0.3, 0.3]);
        let c = contour_penalty(&itf, &|_| 0.0).unwrap();
        assert_eq!(c.values, vec![0.0, 0.0]);
        // w(s) = s: growing G moves the start point down and the end point up
        let c = contour_penalty(&itf, &|_| 1.0).unwrap();
        assert_eq!(c.values, vec![-1.0, 1.0]);
        assert_eq!(c.arclength_derivative(), vec![1.0, 1.0]);
    }

    #[test]
    fn descent_direction_decreases_prediction() {
        let m = gen_disk_domain(1.0, 64, 0.3).unwrap();
        let itf = interface(&m, 1.0, 2.0);
        let g = contour_penalty(&itf, &|s| s.sin() + 2.0).unwrap();
        let d = g.descent();
        let pred = g.predicted_change(&d);
        let norm2: f64 = g.values.iter().map(|v| v * v).sum();
        assert!((pred + norm2).abs() < 1e-14);
        assert!(pred < 0.0);
    }

    #[test]
    fn plus_requires_the_same_interface() {
        let m = gen_disk_domain(1.0, 64, 0.3).unwrap();
        let a = area_penalty(&interface(&m, 1.0, 2.0), 1.0).unwrap();
        let b = area_penalty(&interface(&m, 1.0, 2.5), 1.0).unwrap();
        assert!(a.plus(&b).is_err());
        assert_eq!(a.plus(&a).unwrap().values, vec![2.0, 2.0]);
    }

    #[test]
    fn inverse_log_law_example() {
        let r = ScaleLaw::InvLog(PI).rho(1e-3);
        assert!((r - 0.454_80).abs() < 5e-5, "{r}");
        assert_eq!(ScaleLaw::Linear(2.0).rho(0.1), 0.2);
        assert!((ScaleLaw::Quadratic(PI).rho(0.1) - 0.01 * PI).abs() < 1e-15);
    }

    #[test]
    fn smoothed_gradient_rejects_mismatched_eps() {
        let m = gen_disk_domain(1.0, 64, 0.3).unwrap();
        let itf = interface(&m, 1.0, 2.0);
        let u = scalar(vec![1.0; m.n_vertices()], Some(0.1));
        let region = SmoothedRegion {
            loop_id: 0,
            interface: &itf,
            eps: 0.05,
            profile: default_profile(),
            scaled: true,
        };
        assert!(matches!(
            dirichlet_smoothed(&m, &region, &u, &u, SmoothedForm::Endpoint),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn smoothed_endpoint_value() {
        let m = gen_disk_domain(1.0, 64, 0.3).unwrap();
        let itf = interface(&m, 1.0, 2.0);
        let u = scalar(vec![2.0; m.n_vertices()], Some(0.1));
        let p = scalar(vec![-0.5; m.n_vertices()], Some(0.1));
        let region = SmoothedRegion {
            loop_id: 0,
            interface: &itf,
            eps: 0.1,
            profile: default_profile(),
            scaled: true,
        };
        let g = dirichlet_smoothed(&m, &region, &u, &p, SmoothedForm::Endpoint).unwrap();
        assert!(g.values.iter().all(|v| (v + 10.0).abs() < 1e-12));
    }

    #[test]
    fn band_form_matches_finite_difference() {
        let m = gen_disk_domain(1.0, 314, 0.06).unwrap();
        let per = m.loops[0].perimeter;
        let eps = 0.1;
        let data = Conductivity {
            gamma: constant(1.0),
            f: constant(1.0),
        };
        let obj = Objective::AbsSquare;
        let solve = |itf: &[InterfacePoint]| {
            let phi: Vec<f64> = m.loops[0]
                .arclength
                .iter()
                .map(|&s| signed_distance(s, itf, per))
                .collect();
            let r = robin_from_distance(&phi, eps, default_profile(), true).unwrap();
            let bc = BcSpec {
                robin: nodal_segments(&m, 0, &r.values),
                ..Default::default()
            };
            let sol = ConductivitySolver::new(&m, &data, &bc, Some(eps)).unwrap();
            let u = sol.state().unwrap();
            let p = sol.adjoint(&u, &obj).unwrap();
            (crate::fem::evaluate_objective(&obj, &u, &m), u, p)
        };
        let (a0, b0) = (5.0 * per / 8.0, 7.0 * per / 8.0);
        let itf = interface(&m, a0, b0);
        let (_, u, p) = solve(&itf);
        let region = SmoothedRegion {
            loop_id: 0,
            interface: &itf,
            eps,
            profile: default_profile(),
            scaled: true,
        };
        let g = dirichlet_smoothed(&m, &region, &u, &p, SmoothedForm::Band).unwrap();
        let d = 1e-4 * per;
        let fd = (solve(&interface(&m, a0, b0 + d)).0 - solve(&interface(&m, a0, b0 - d)).0) / (2.0 * d);
        let pred = g.arclength_derivative()[1];
        assert!((pred - fd).abs() <= 1e-3 * fd.abs(), "band {pred} fd {fd}");
        // growing the Dirichlet part lowers u^2
        assert!(g.values[1] < 0.0);
    }

    fn field(vals: &[(f64, f64)]) -> TopoField {
        TopoField {
            variant: TopoVariant::ConducDirichletHom,
            law: ScaleLaw::InvLog(PI),
            vertices: (0..vals.len()).collect(),
            s: vals.iter().map(|v| v.0).collect(),
            values: vals.iter().map(|v| v.1).collect(),
            delta_excl: 0.1,
        }
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_insertion_point(&field(&[(0.0, 1.0), (1.0, 0.0)]), 0.1), None);
        assert_eq!(
            select_insertion_point(&field(&[(0.0, -1.0), (1.0, -2.0), (2.0, 3.0)]), 0.1),
            Some((1, -2.0, 1.0))
        );
        assert_eq!(
            select_insertion_point(&field(&[(2.0, -2.0), (0.5, -2.0), (1.0, -1.0)]), 0.1),
            Some((1, -2.0, 0.5))
        );
    }

    #[test]
    fn topo_field_rejects_smoothed_inputs_and_zero_state() {
        let m = gen_disk_domain(1.0, 64, 0.3).unwrap();
        let gamma = constant(1.0);
        let adm = Admissible::new(0, vec![], 0.1);
        let z = zero_field(&m);
        let tf = topo_field(
            &m,
            &TopoInputs::ConducDirichletHom {
                u0: &z,
                p0: &z,
                gamma: &gamma,
            },
            &adm,
        )
        .unwrap();
        assert_eq!(tf.len(), 64);
        assert!(tf.values.iter().all(|&v| v == 0.0));
        let sm = scalar(vec![0.0; m.n_vertices()], Some(0.1));
        assert!(topo_field(
            &m,
            &TopoInputs::ConducDirichletHom {
                u0: &sm,
                p0: &sm,
                gamma: &gamma
            },
            &adm
        )
        .is_err());
    }

    #[test]
    fn admissible_excludes_arcs() {
        let m = gen_disk_domain(1.0, 64, 0.3).unwrap();
        let per = m.loops[0].perimeter;
        let adm = Admissible::new(0, vec![(0.0, 0.25 * per)], 0.1);
        let z = scalar(vec![1.0; m.n_vertices()], None);
        let tf = topo_field(&m, &TopoInputs::ConducNeumannInhom { p0: &z, g: 1.0 }, &adm).unwrap();
        assert!(tf.s.iter().all(|&s| arc_distance(s, 0.0, 0.25 * per, per) > 0.1));
        assert!(tf.len() < 64 && tf.len() > 40);
    }

    proptest! {
        #[test]
        fn topo_coefficient_is_scale_invariant(c in 0.1..10.0f64, eps in 1e-4..0.1f64) {
            // d_T scales linearly with gamma while rho does not depend on the data
            let m = gen_disk_domain(1.0, 32, 0.5).unwrap();
            let adm = Admissible::new(0, vec![], 0.0);
            let u = scalar(m.vertices.iter().map(|x| 1.0 + x[0]).collect(), None);
            let g1 = constant(1.0);
            let gc = constant(c);
            let a = topo_field(&m, &TopoInputs::ConducDirichletHom { u0: &u, p0: &u, gamma: &g1 }, &adm).unwrap();
            let b = topo_field(&m, &TopoInputs::ConducDirichletHom { u0: &u, p0: &u, gamma: &gc }, &adm).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((c * x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
            prop_assert!(a.law.rho(eps) > 0.0);
        }
    }
}
