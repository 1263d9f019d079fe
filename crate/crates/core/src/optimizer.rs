//! Coupled shape and topology optimization of boundary regions.
//!
//! Each iteration either inserts a small arc where the topological derivative
//! is most negative, or moves the interface points of one region along the
//! descent direction of the penalized objective with a backtracking line search.

use serde::{Deserialize, Serialize};

use crate::derivatives::{
    area_penalty, contour_penalty, dirichlet_smoothed, elastic_support, helmholtz_impedance, mixer_two_region,
    select_insertion_point, topo_field, Admissible, ShapeGradient, SmoothedForm, SmoothedRegion, TopoField, TopoInputs,
};
use crate::error::{Error, Result};
use crate::fem::{
    clamp_dofs, constant, edge_vertices, evaluate_objective, nodal_segments, plane_stress, region_segments, BcSpec,
    Coef, Conductivity, ConductivitySolver, Elasticity, ElasticitySolver, FemField, Helmholtz, HelmholtzSolver,
    Objective,
};
use crate::mesh2d::{gen_disk_domain, gen_square_domain, Mesh2D};
use crate::region::{
    advect, arcs_of, area, cont, extend_velocity, extract_interface, fit_mesh_to_interface, fit_mesh_to_region,
    insert_disk, inside, BoundaryLevelSet, InterfacePoint,
};
use crate::smoothing::{default_profile, robin_from_distance, RobinCoefficient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemId {
    Conductivity,
    Mixer,
    Helmholtz,
    ElasticitySupport,
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    /// Initial step, as the largest interface displacement in arclength.
    pub tau0: f64,
    pub factor: f64,
    pub max_backtracks: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            tau0: 0.1,
            factor: 0.5,
            max_backtracks: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptConfig {
    pub problem: ProblemId,
    /// Area weight ℓ.
    pub ell: f64,
    /// Contour weight m.
    pub m: f64,
    pub eps_smooth: f64,
    /// Half-length of inserted arcs.
    pub eps_top: f64,
    pub delta_excl: f64,
    pub n_top: usize,
    pub n_top_stop: usize,
    pub max_iter: usize,
    pub step: StepConfig,
    /// Relative decrease of the penalized objective below which the run stops.
    pub tolerance: f64,
    /// Iterations over which the decrease is measured.
    pub window: usize,
    /// Roll back insertions that raise the penalized objective by more than 5%.
    pub topo_guard: bool,
    /// Width of the velocity extension; 0 selects twice the mean boundary edge.
    pub velocity_width: f64,
    pub form: SmoothedForm,
    /// Carry the 1/eps prefactor in the Robin coefficient.
    pub robin_scaled: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            problem: ProblemId::Conductivity,
            ell: 0.0,
            m: 0.0,
            eps_smooth: 0.05,
            eps_top: 0.05,
            delta_excl: 0.1,
            n_top: 10,
            n_top_stop: 0,
            max_iter: 50,
            step: StepConfig::default(),
            tolerance: 1e-6,
            window: 10,
            topo_guard: false,
            velocity_width: 0.0,
            form: SmoothedForm::Endpoint,
            robin_scaled: true,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_smooth", self.eps_smooth),
            ("eps_top", self.eps_top),
            ("step.tau0", self.step.tau0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("optimizer.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("ell", self.ell),
            ("m", self.m),
            ("delta_excl", self.delta_excl),
            ("tolerance", self.tolerance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("optimizer.{name} must be non-negative, got {v}")));
            }
        }
        if !(self.velocity_width >= 0.0) {
            return Err(Error::Config("optimizer.velocity_width must be non-negative".into()));
        }
        if !(self.step.factor > 0.0 && self.step.factor < 1.0) {
            return Err(Error::Config(format!(
                "optimizer.step.factor must lie in (0, 1), got {}",
                self.step.factor
            )));
        }
        if self.n_top == 0 || self.window == 0 || self.max_iter == 0 {
            return Err(Error::Config(
                "optimizer periods (n_top, window, max_iter) must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Initial,
    Geometric,
    Topological,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub j: f64,
    pub area: f64,
    pub cont: f64,
    pub total: f64,
    pub tau: f64,
    pub event: Event,
    /// Number of interface points over all regions.
    pub interfaces: usize,
    /// Arclength of the inserted arc center on topological iterations.
    pub inserted_at: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptHistory {
    pub records: Vec<IterRecord>,
}

impl OptHistory {
    /// Every geometric record has a lower total than the record before it.
    pub fn geometric_steps_decrease(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].event != Event::Geometric || w[1].total < w[0].total)
    }

    pub fn count(&self, event: Event) -> usize {
        self.records.iter().filter(|r| r.event == event).count()
    }

    pub fn first(&self) -> &IterRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("history starts with the initial record")
    }
}

pub fn penalized_objective(j: f64, area: f64, cont: f64, ell: f64, m: f64) -> f64 {
    j + ell * area + m * cont
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearch {
    Accepted { tau: f64, value: f64 },
    Rejected,
}

/// Largest τ = τ0·factor^k, k ≤ max_backtracks, with a strict decrease of `evaluate`.
pub fn line_search(mut evaluate: impl FnMut(f64) -> Result<f64>, tau0: f64, step: &StepConfig) -> Result<LineSearch> {
    let f0 = evaluate(0.0)?;
    search_from(f0, evaluate, tau0, step)
}

fn search_from(
    f0: f64,
    mut evaluate: impl FnMut(f64) -> Result<f64>,
    tau0: f64,
    step: &StepConfig,
) -> Result<LineSearch> {
    if !f0.is_finite() {
        return Err(Error::Numeric(format!(
            "line search started from non-finite value {f0}"
        )));
    }
    let target = f0 - 1e-12 * f0.abs();
    let mut tau = tau0;
    for _ in 0..=step.max_backtracks {
        let v = evaluate(tau)?;
        if v.is_finite() && v < target {
            return Ok(LineSearch::Accepted { tau, value: v });
        }
        tau *= step.factor;
    }
    Ok(LineSearch::Rejected)
}

/// Physics behind an optimization run: objective, shape gradients and
/// topological fields for one or two regions on one boundary loop.
pub trait Problem: Send + Sync {
    fn id(&self) -> ProblemId;

    fn n_regions(&self) -> usize {
        1
    }

    /// Objective value J (without penalties).
    fn objective(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<f64>;

    /// State and adjoint on `mesh` for the current regions.
    fn state_adjoint(
        &self,
        cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(FemField, FemField)>;

    /// J and one shape gradient per region.
    fn shape_gradients(
        &self,
        cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(f64, Vec<ShapeGradient>)>;

    /// One topological field per region, from sharp solves.
    fn topo_fields(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<Vec<TopoField>>;
}

fn penalties(regions: &[BoundaryLevelSet], mesh: &Mesh2D) -> (f64, f64, usize) {
    let a = regions.iter().map(area).sum();
    let n: usize = regions.iter().map(|r| cont(r, mesh)).sum();
    (a, n as f64, n)
}

fn with_context(iter: usize, e: Error) -> Error {
    match e {
        Error::Config(_) | Error::Parameter(_) => e,
        other => Error::Solver(format!("iteration {iter}: {other}")),
    }
}

/// Trial objectives that make the problem ill-posed (no supporting region) count as +∞.
fn admissible(v: Result<f64>) -> Result<f64> {
    match v {
        Err(Error::Solvability(_)) => Ok(f64::INFINITY),
        other => other,
    }
}

fn check_regions(mesh: &Mesh2D, regions: &[BoundaryLevelSet], n: usize) -> Result<()> {
    if regions.len() != n {
        return Err(Error::Config(format!(
            "problem expects {n} region(s), got {}",
            regions.len()
        )));
    }
    for r in regions {
        if r.loop_id >= mesh.loops.len() || r.phi.len() != mesh.loops[r.loop_id].len() {
            return Err(Error::Config(
                "initial level set does not live on the mesh boundary".into(),
            ));
        }
    }
    Ok(())
}

/// Runs the loop from `initial` (one level set per region).
pub fn run(
    cfg: &OptConfig,
    problem: &dyn Problem,
    mesh: &Mesh2D,
    initial: Vec<BoundaryLevelSet>,
) -> Result<(Vec<BoundaryLevelSet>, OptHistory)> {
    run_with(cfg, problem, mesh, initial, &mut |_, _| Ok(()))
}

/// [`run`] with a callback after every record (including the initial one).
pub fn run_with(
    cfg: &OptConfig,
    problem: &dyn Problem,
    mesh: &Mesh2D,
    initial: Vec<BoundaryLevelSet>,
    observer: &mut dyn FnMut(&IterRecord, &[BoundaryLevelSet]) -> Result<()>,
) -> Result<(Vec<BoundaryLevelSet>, OptHistory)> {
    cfg.validate()?;
    if problem.id() != cfg.problem {
        return Err(Error::Config(format!(
            "config names {:?}, problem is {:?}",
            cfg.problem,
            problem.id()
        )));
    }
    check_regions(mesh, &initial, problem.n_regions())?;
    let total_of = |regions: &[BoundaryLevelSet], j: f64| {
        let (a, c, _) = penalties(regions, mesh);
        penalized_objective(j, a, c, cfg.ell, cfg.m)
    };
    let record = |iter: usize, regions: &[BoundaryLevelSet], j: f64, tau: f64, event: Event, at: Option<f64>| {
        let (a, c, n) = penalties(regions, mesh);
        IterRecord {
            iter,
            j,
            area: a,
            cont: c,
            total: penalized_objective(j, a, c, cfg.ell, cfg.m),
            tau,
            event,
            interfaces: n,
            inserted_at: at,
        }
    };

    let mut regions = initial;
    let mut j = problem.objective(cfg, mesh, &regions).map_err(|e| with_context(0, e))?;
    let mut history = OptHistory {
        records: vec![record(0, &regions, j, 0.0, Event::Initial, None)],
    };
    observer(history.last(), &regions)?;
    let mut tau = cfg.step.tau0;
    let mut geometric_count = 0usize;

    for iter in 1..=cfg.max_iter {
        let topo_now = iter % cfg.n_top == 0 && iter <= cfg.n_top_stop;
        let mut done = false;
        if topo_now {
            let inserted = topo_step(cfg, problem, mesh, &regions).map_err(|e| with_context(iter, e))?;
            if let Some((s, next)) = inserted {
                let pre = total_of(&regions, j);
                let j_new = admissible(problem.objective(cfg, mesh, &next)).map_err(|e| with_context(iter, e))?;
                let post = total_of(&next, j_new);
                if cfg.topo_guard && !(post <= pre + 0.05 * pre.abs()) {
                    history
                        .records
                        .push(record(iter, &regions, j, 0.0, Event::Rejected, Some(s)));
                } else {
                    regions = next;
                    j = j_new;
                    history
                        .records
                        .push(record(iter, &regions, j, 0.0, Event::Topological, Some(s)));
                }
                done = true;
            }
        }
        if !done {
            let active = geometric_count % problem.n_regions();
            geometric_count += 1;
            let (j0, grads) = problem
                .shape_gradients(cfg, mesh, &regions)
                .map_err(|e| with_context(iter, e))?;
            j = j0;
            let velocity = descent_velocity(cfg, mesh, &regions[active], &grads[active])?;
            let f0 = total_of(&regions, j);
            let outcome = match &velocity {
                None => LineSearch::Rejected,
                Some(v) => {
                    let eval = |t: f64| -> Result<f64> {
                        let mut trial = regions.clone();
                        trial[active] = advect(&regions[active], v, t, mesh)?;
                        let jt = admissible(problem.objective(cfg, mesh, &trial))?;
                        Ok(total_of(&trial, jt))
                    };
                    search_from(f0, eval, tau, &cfg.step).map_err(|e| with_context(iter, e))?
                }
            };
            match (outcome, velocity) {
                (LineSearch::Accepted { tau: t, .. }, Some(v)) => {
                    regions[active] = advect(&regions[active], &v, t, mesh)?;
                    j = problem
                        .objective(cfg, mesh, &regions)
                        .map_err(|e| with_context(iter, e))?;
                    history
                        .records
                        .push(record(iter, &regions, j, t, Event::Geometric, None));
                }
                _ => {
                    tau *= cfg.step.factor;
                    history
                        .records
                        .push(record(iter, &regions, j, tau, Event::Rejected, None));
                }
            }
        }
        observer(history.last(), &regions)?;
        if stagnated(&history, cfg) {
            break;
        }
    }
    Ok((regions, history))
}

fn stagnated(history: &OptHistory, cfg: &OptConfig) -> bool {
    let n = history.records.len();
    if n <= cfg.window {
        return false;
    }
    let old = history.records[n - 1 - cfg.window].total;
    let new = history.records[n - 1].total;
    old - new <= cfg.tolerance * old.abs()
}

/// Normal velocity on the loop, normalized to unit maximum; `None` when the gradient vanishes.
fn descent_velocity(
    cfg: &OptConfig,
    mesh: &Mesh2D,
    ls: &BoundaryLevelSet,
    grad: &ShapeGradient,
) -> Result<Option<Vec<f64>>> {
    if grad.points.is_empty() {
        return Ok(None);
    }
    let mut total = grad.plus(&area_penalty(&grad.points, cfg.ell)?)?;
    total = total.plus(&contour_penalty(&grad.points, &|_| 0.0)?)?;
    let ds = total.arclength_derivative();
    let gmax = ds.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(gmax > 0.0) {
        return Ok(None);
    }
    let points: Vec<(f64, f64)> = total.points.iter().zip(&ds).map(|(p, d)| (p.s, -d / gmax)).collect();
    let w = if cfg.velocity_width > 0.0 {
        cfg.velocity_width
    } else {
        2.0 * mesh.mean_boundary_edge(ls.loop_id)
    };
    Ok(Some(extend_velocity(ls, &points, w)))
}

/// Most negative admissible insertion over all regions: (arclength, new level sets).
fn topo_step(
    cfg: &OptConfig,
    problem: &dyn Problem,
    mesh: &Mesh2D,
    regions: &[BoundaryLevelSet],
) -> Result<Option<(f64, Vec<BoundaryLevelSet>)>> {
    let fields = match problem.topo_fields(cfg, mesh, regions) {
        Err(Error::Solvability(_)) => return Ok(None),
        other => other?,
    };
    let mut best: Option<(usize, f64, f64)> = None;
    for (r, tf) in fields.iter().enumerate() {
        if let Some((_, d, s)) = select_insertion_point(tf, cfg.delta_excl) {
            if best.is_none_or(|(_, _, bd)| d < bd) {
                best = Some((r, s, d));
            }
        }
    }
    let Some((r, s, _)) = best else { return Ok(None) };
    let mut next = regions.to_vec();
    next[r] = insert_disk(&regions[r], s, cfg.eps_top, mesh)?;
    Ok(Some((s, next)))
}

fn excluded_arcs(mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Vec<(f64, f64)> {
    regions
        .iter()
        .flat_map(|r| {
            let iface = extract_interface(r, mesh);
            if iface.is_empty() && r.phi.iter().all(|&x| x < 0.0) {
                vec![(0.0, r.perimeter)]
            } else {
                arcs_of(&iface, r.perimeter)
            }
        })
        .collect()
}

fn robin(cfg: &OptConfig, ls: &BoundaryLevelSet) -> Result<RobinCoefficient> {
    robin_from_distance(&ls.phi, cfg.eps_smooth, default_profile(), cfg.robin_scaled)
}

fn smoothed(cfg: &OptConfig, mesh: &Mesh2D, ls: &BoundaryLevelSet) -> Result<(Vec<InterfacePoint>, RobinCoefficient)> {
    Ok((extract_interface(ls, mesh), robin(cfg, ls)?))
}

fn region_of<'a>(cfg: &OptConfig, loop_id: usize, interface: &'a [InterfacePoint]) -> SmoothedRegion<'a> {
    SmoothedRegion {
        loop_id,
        interface,
        eps: cfg.eps_smooth,
        profile: default_profile(),
        scaled: cfg.robin_scaled,
    }
}

// ---------------------------------------------------------------------------
// Problems

/// Conductivity with a smoothed homogeneous Dirichlet region G.
pub struct DirichletRegion {
    pub data: Conductivity,
    pub objective: Objective,
}

impl DirichletRegion {
    fn solver<'m>(
        &self,
        cfg: &OptConfig,
        mesh: &'m Mesh2D,
        robin: &RobinCoefficient,
        loop_id: usize,
    ) -> Result<ConductivitySolver<'m>> {
        let bc = BcSpec {
            robin: nodal_segments(mesh, loop_id, &robin.values),
            ..Default::default()
        };
        ConductivitySolver::new(mesh, &self.data, &bc, Some(cfg.eps_smooth))
    }
}

impl Problem for DirichletRegion {
    fn id(&self) -> ProblemId {
        ProblemId::Conductivity
    }

    fn objective(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<f64> {
        let ls = &regions[0];
        let robin = robin(cfg, ls)?;
        let u = self.solver(cfg, mesh, &robin, ls.loop_id)?.state()?;
        Ok(evaluate_objective(&self.objective, &u, mesh))
    }

    fn state_adjoint(
        &self,
        cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(FemField, FemField)> {
        let ls = &regions[0];
        let robin = robin(cfg, ls)?;
        let solver = self.solver(cfg, mesh, &robin, ls.loop_id)?;
        let u = solver.state()?;
        let p = solver.adjoint(&u, &self.objective)?;
        Ok((u, p))
    }

    fn shape_gradients(
        &self,
        cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(f64, Vec<ShapeGradient>)> {
        let ls = &regions[0];
        let (iface, robin) = smoothed(cfg, mesh, ls)?;
        let solver = self.solver(cfg, mesh, &robin, ls.loop_id)?;
        let u = solver.state()?;
        let p = solver.adjoint(&u, &self.objective)?;
        let g = dirichlet_smoothed(mesh, &region_of(cfg, ls.loop_id, &iface), &u, &p, cfg.form)?;
        Ok((evaluate_objective(&self.objective, &u, mesh), vec![g]))
    }

    fn topo_fields(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<Vec<TopoField>> {
        let ls = &regions[0];
        let fit = fit_mesh_to_region(mesh, ls)?;
        let dirichlet = edge_vertices(&fit.mesh, &fit.in_region)
            .into_iter()
            .map(|v| (v, 0.0))
            .collect();
        let bc = BcSpec {
            dirichlet,
            ..Default::default()
        };
        let solver = ConductivitySolver::new(&fit.mesh, &self.data, &bc, None)?;
        let u = solver.state()?;
        let p = solver.adjoint(&u, &self.objective)?;
        let adm = Admissible::new(ls.loop_id, excluded_arcs(mesh, regions), cfg.delta_excl);
        let inputs = TopoInputs::ConducDirichletHom {
            u0: &u,
            p0: &p,
            gamma: &self.data.gamma,
        };
        Ok(vec![topo_field(&fit.mesh, &inputs, &adm)?])
    }
}

/// Two-region mixer: cathode (u = 0, region 0) and anode (u = u_in, region 1),
/// objective -∫γ|∇u|².
pub struct Mixer {
    pub gamma: Coef,
    pub u_in: f64,
}

impl Mixer {
    fn data(&self) -> Conductivity {
        Conductivity {
            gamma: self.gamma.clone(),
            f: constant(0.0),
        }
    }

    fn objective_fn(&self) -> Objective {
        Objective::gradient_energy(self.gamma.clone())
    }

    fn state(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<(FemField, FemField)> {
        if regions_overlap(mesh, regions) {
            return Err(Error::Solvability("cathode and anode overlap".into()));
        }
        let loop_id = regions[0].loop_id;
        let hc = robin(cfg, &regions[0])?;
        let ha = robin(cfg, &regions[1])?;
        let robin: Vec<f64> = hc.values.iter().zip(&ha.values).map(|(a, b)| a + b).collect();
        let load: Vec<f64> = ha.values.iter().map(|b| b * self.u_in).collect();
        let bc = BcSpec {
            robin: nodal_segments(mesh, loop_id, &robin),
            load: nodal_segments(mesh, loop_id, &load),
            ..Default::default()
        };
        let solver = ConductivitySolver::new(mesh, &self.data(), &bc, Some(cfg.eps_smooth))?;
        let u = solver.state()?;
        let p = solver.adjoint(&u, &self.objective_fn())?;
        Ok((u, p))
    }
}

fn regions_overlap(mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> bool {
    let l = &mesh.loops[regions[0].loop_id];
    (0..l.len()).any(|i| regions.iter().all(|r| r.phi[i] < 0.0))
}

impl Problem for Mixer {
    fn id(&self) -> ProblemId {
        ProblemId::Mixer
    }

    fn n_regions(&self) -> usize {
        2
    }

    fn objective(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<f64> {
        let (u, _) = self.state(cfg, mesh, regions)?;
        Ok(evaluate_objective(&self.objective_fn(), &u, mesh))
    }

    fn state_adjoint(
        &self,
        cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(FemField, FemField)> {
        self.state(cfg, mesh, regions)
    }

    fn shape_gradients(
        &self,
        cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(f64, Vec<ShapeGradient>)> {
        let (u, p) = self.state(cfg, mesh, regions)?;
        let loop_id = regions[0].loop_id;
        let (ic, _) = smoothed(cfg, mesh, &regions[0])?;
        let (ia, _) = smoothed(cfg, mesh, &regions[1])?;
        let (gc, ga) = mixer_two_region(
            mesh,
            &region_of(cfg, loop_id, &ic),
            &region_of(cfg, loop_id, &ia),
            &u,
            &p,
            self.u_in,
            cfg.form,
        )?;
        Ok((evaluate_objective(&self.objective_fn(), &u, mesh), vec![gc, ga]))
    }

    fn topo_fields(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<Vec<TopoField>> {
        let loop_id = regions[0].loop_id;
        let ic = extract_interface(&regions[0], mesh);
        let ia = extract_interface(&regions[1], mesh);
        let mut all: Vec<InterfacePoint> = ic.iter().chain(&ia).copied().collect();
        all.sort_by(|a, b| a.s.total_cmp(&b.s));
        let fit = fit_mesh_to_interface(mesh, loop_id, &all)?;
        let l = &fit.mesh.loops[loop_id];
        let flags = |iface: &[InterfacePoint]| -> Vec<bool> {
            (0..l.len())
                .map(|i| inside(0.5 * (l.arclength[i] + l.edge_end_s(i)), iface, l.perimeter))
                .collect()
        };
        let mut dirichlet: Vec<(usize, f64)> = edge_vertices(&fit.mesh, &flags(&ic))
            .into_iter()
            .map(|v| (v, 0.0))
            .collect();
        dirichlet.extend(
            edge_vertices(&fit.mesh, &flags(&ia))
                .into_iter()
                .map(|v| (v, self.u_in)),
        );
        let bc = BcSpec {
            dirichlet,
            ..Default::default()
        };
        let solver = ConductivitySolver::new(&fit.mesh, &self.data(), &bc, None)?;
        let u = solver.state()?;
        let p = solver.adjoint(&u, &self.objective_fn())?;
        let adm = Admissible::new(loop_id, excluded_arcs(mesh, regions), cfg.delta_excl);
        Ok(vec![
            topo_field(
                &fit.mesh,
                &TopoInputs::MixerCathode {
                    u: &u,
                    p: &p,
                    gamma: &self.gamma,
                },
                &adm,
            )?,
            topo_field(
                &fit.mesh,
                &TopoInputs::MixerAnode {
                    u: &u,
                    p: &p,
                    gamma: &self.gamma,
                    u_in: self.u_in,
                },
                &adm,
            )?,
        ])
    }
}

/// Plane-stress body under a volume load, held by a smoothed elastic support G;
/// objective ∫|u|².
pub struct ElasticSupport {
    pub young: f64,
    pub nu: f64,
    pub load: [f64; 2],
}

impl ElasticSupport {
    fn data(&self) -> Elasticity {
        let (lambda, mu) = plane_stress(self.young, self.nu);
        Elasticity {
            lambda,
            mu,
            f: [constant(self.load[0]), constant(self.load[1])],
        }
    }

    fn solver<'m>(&self, cfg: &OptConfig, mesh: &'m Mesh2D, ls: &BoundaryLevelSet) -> Result<ElasticitySolver<'m>> {
        let robin = robin(cfg, ls)?;
        let bc = BcSpec {
            robin: nodal_segments(mesh, ls.loop_id, &robin.values),
            ..Default::default()
        };
        ElasticitySolver::new(mesh, &self.data(), &bc, Some(cfg.eps_smooth))
    }
}

impl Problem for ElasticSupport {
    fn id(&self) -> ProblemId {
        ProblemId::ElasticitySupport
    }

    fn objective(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<f64> {
        let u = self.solver(cfg, mesh, &regions[0])?.state()?;
        Ok(evaluate_objective(&Objective::AbsSquare, &u, mesh))
    }

    fn state_adjoint(
        &self,
        cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(FemField, FemField)> {
        let solver = self.solver(cfg, mesh, &regions[0])?;
        let u = solver.state()?;
        let p = solver.adjoint(&u, &Objective::AbsSquare)?;
        Ok((u, p))
    }

    fn shape_gradients(
        &self,
        cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(f64, Vec<ShapeGradient>)> {
        let ls = &regions[0];
        let solver = self.solver(cfg, mesh, ls)?;
        let u = solver.state()?;
        let p = solver.adjoint(&u, &Objective::AbsSquare)?;
        let iface = extract_interface(ls, mesh);
        let g = elastic_support(mesh, &region_of(cfg, ls.loop_id, &iface), &u, &p, cfg.form)?;
        Ok((evaluate_objective(&Objective::AbsSquare, &u, mesh), vec![g]))
    }

    fn topo_fields(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<Vec<TopoField>> {
        let ls = &regions[0];
        let fit = fit_mesh_to_region(mesh, ls)?;
        let clamped = edge_vertices(&fit.mesh, &fit.in_region);
        let bc = BcSpec {
            dirichlet: clamp_dofs(&clamped, [0.0, 0.0]),
            ..Default::default()
        };
        let data = self.data();
        let solver = ElasticitySolver::new(&fit.mesh, &data, &bc, None)?;
        let u = solver.state()?;
        let p = solver.adjoint(&u, &Objective::AbsSquare)?;
        let adm = Admissible::new(ls.loop_id, excluded_arcs(mesh, regions), cfg.delta_excl);
        let inputs = TopoInputs::ElastDirichlet2d {
            u0: &u,
            p0: &p,
            mu: data.mu,
            nu: self.nu,
        };
        Ok(vec![topo_field(&fit.mesh, &inputs, &adm)?])
    }
}

/// Interior Helmholtz model with an absorbing impedance region G; objective ∫|u|².
pub struct ImpedanceRegion {
    pub data: Helmholtz,
}

impl ImpedanceRegion {
    fn solve(
        &self,
        mesh: &Mesh2D,
        ls: &BoundaryLevelSet,
        adjoint: bool,
    ) -> Result<(Vec<InterfacePoint>, FemField, Option<FemField>)> {
        let iface = extract_interface(ls, mesh);
        let segs = if iface.is_empty() && ls.phi.iter().all(|&x| x < 0.0) {
            region_segments(mesh, ls.loop_id, &[], 1.0)
        } else {
            region_segments(mesh, ls.loop_id, &iface, 1.0)
        };
        let solver = HelmholtzSolver::new(mesh, &self.data, &segs)?;
        let u = solver.state()?;
        let p = if adjoint {
            Some(solver.adjoint(&u, &Objective::AbsSquare)?)
        } else {
            None
        };
        Ok((iface, u, p))
    }
}

impl Problem for ImpedanceRegion {
    fn id(&self) -> ProblemId {
        ProblemId::Helmholtz
    }

    fn objective(&self, _cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<f64> {
        let (_, u, _) = self.solve(mesh, &regions[0], false)?;
        Ok(evaluate_objective(&Objective::AbsSquare, &u, mesh))
    }

    fn state_adjoint(
        &self,
        _cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(FemField, FemField)> {
        let (_, u, p) = self.solve(mesh, &regions[0], true)?;
        Ok((u, p.expect("adjoint requested")))
    }

    fn shape_gradients(
        &self,
        _cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(f64, Vec<ShapeGradient>)> {
        let (iface, u, p) = self.solve(mesh, &regions[0], true)?;
        let p = p.expect("adjoint requested");
        let g = helmholtz_impedance(mesh, &iface, &u, &p, self.data.k, self.data.z)?;
        Ok((evaluate_objective(&Objective::AbsSquare, &u, mesh), vec![g]))
    }

    fn topo_fields(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<Vec<TopoField>> {
        let ls = &regions[0];
        let (_, u, p) = self.solve(mesh, ls, true)?;
        let p = p.expect("adjoint requested");
        let adm = Admissible::new(ls.loop_id, excluded_arcs(mesh, regions), cfg.delta_excl);
        let inputs = TopoInputs::HelmholtzImpedance {
            u0: &u,
            p0: &p,
            k: self.data.k,
            z: self.data.z,
        };
        Ok(vec![topo_field(mesh, &inputs, &adm)?])
    }
}

/// Plane-stress body clamped on the edges labelled `clamped_label`, loaded by
/// the normal traction f·n on G; objective ∫|u|².
pub struct ClampLocator {
    pub young: f64,
    pub nu: f64,
    pub traction: f64,
    pub clamped_label: u32,
}

impl ClampLocator {
    fn solve(
        &self,
        mesh: &Mesh2D,
        ls: &BoundaryLevelSet,
        adjoint: bool,
    ) -> Result<(Vec<InterfacePoint>, FemField, Option<FemField>)> {
        let (lambda, mu) = plane_stress(self.young, self.nu);
        let data = Elasticity {
            lambda,
            mu,
            f: [constant(0.0), constant(0.0)],
        };
        let iface = extract_interface(ls, mesh);
        let segs = region_segments(mesh, ls.loop_id, &iface, self.traction);
        let edges = mesh.boundary_edges();
        let normal = |k: usize| mesh.edge_normal(edges[k].id.loop_id, edges[k].id.index);
        let flags: Vec<bool> = edges.iter().map(|e| e.label == self.clamped_label).collect();
        let bc = BcSpec {
            load: segs.iter().map(|s| s.scaled(normal(s.edge)[0])).collect(),
            load_y: segs.iter().map(|s| s.scaled(normal(s.edge)[1])).collect(),
            dirichlet: clamp_dofs(&edge_vertices(mesh, &flags), [0.0, 0.0]),
            ..Default::default()
        };
        let solver = ElasticitySolver::new(mesh, &data, &bc, None)?;
        let u = solver.state()?;
        let p = if adjoint {
            Some(solver.adjoint(&u, &Objective::AbsSquare)?)
        } else {
            None
        };
        Ok((iface, u, p))
    }
}

impl Problem for ClampLocator {
    fn id(&self) -> ProblemId {
        ProblemId::Clamp
    }

    fn objective(&self, _cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<f64> {
        let (_, u, _) = self.solve(mesh, &regions[0], false)?;
        Ok(evaluate_objective(&Objective::AbsSquare, &u, mesh))
    }

    fn state_adjoint(
        &self,
        _cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(FemField, FemField)> {
        let (_, u, p) = self.solve(mesh, &regions[0], true)?;
        Ok((u, p.expect("adjoint requested")))
    }

    fn shape_gradients(
        &self,
        _cfg: &OptConfig,
        mesh: &Mesh2D,
        regions: &[BoundaryLevelSet],
    ) -> Result<(f64, Vec<ShapeGradient>)> {
        let ls = &regions[0];
        let (iface, u, p) = self.solve(mesh, ls, true)?;
        let p = p.expect("adjoint requested");
        let g = crate::derivatives::clamp_load(mesh, ls.loop_id, &iface, self.traction, &p)?;
        Ok((evaluate_objective(&Objective::AbsSquare, &u, mesh), vec![g]))
    }

    fn topo_fields(&self, cfg: &OptConfig, mesh: &Mesh2D, regions: &[BoundaryLevelSet]) -> Result<Vec<TopoField>> {
        let ls = &regions[0];
        let (_, _, p) = self.solve(mesh, ls, true)?;
        let p = p.expect("adjoint requested");
        let adm = Admissible::new(ls.loop_id, excluded_arcs(mesh, regions), cfg.delta_excl);
        Ok(vec![topo_field(
            mesh,
            &TopoInputs::ClampLoad2d {
                p0: &p,
                f: self.traction,
            },
            &adm,
        )?])
    }
}

// ---------------------------------------------------------------------------
// Demos

/// A ready-to-run optimization setup.
pub struct Demo {
    pub name: &'static str,
    pub config: OptConfig,
    pub problem: Box<dyn Problem>,
    pub mesh: Mesh2D,
    pub initial: Vec<BoundaryLevelSet>,
}

impl Demo {
    pub fn run(&self) -> Result<(Vec<BoundaryLevelSet>, OptHistory)> {
        run(&self.config, self.problem.as_ref(), &self.mesh, self.initial.clone())
    }
}

fn arc_around(center: f64, half: f64) -> (f64, f64) {
    (center - half, center + half)
}

/// Unit disk, cathode at the bottom and anode at the top, alternating updates.
pub fn mixer2d() -> Result<Demo> {
    let mesh = gen_disk_domain(1.0, 240, 0.06)?;
    let pi = std::f64::consts::PI;
    let cathode = BoundaryLevelSet::from_arcs(&mesh, 0, &[arc_around(1.5 * pi, 0.3)])?;
    let anode = BoundaryLevelSet::from_arcs(&mesh, 0, &[arc_around(0.5 * pi, 0.3)])?;
    let config = OptConfig {
        problem: ProblemId::Mixer,
        ell: 0.1,
        eps_smooth: 0.05,
        eps_top: 0.1,
        delta_excl: 0.2,
        n_top: 10,
        n_top_stop: 0,
        max_iter: 50,
        step: StepConfig {
            tau0: 0.2,
            ..StepConfig::default()
        },
        ..OptConfig::default()
    };
    Ok(Demo {
        name: "mixer2d",
        config,
        problem: Box::new(Mixer {
            gamma: constant(1.0),
            u_in: 1.0,
        }),
        mesh,
        initial: vec![cathode, anode],
    })
}

/// Unit disk under its own weight, held by a support that starts as a small bottom arc.
pub fn supports2d() -> Result<Demo> {
    let mesh = gen_disk_domain(1.0, 240, 0.06)?;
    let pi = std::f64::consts::PI;
    let support = BoundaryLevelSet::from_arcs(&mesh, 0, &[arc_around(1.5 * pi, 0.2)])?;
    let config = OptConfig {
        problem: ProblemId::ElasticitySupport,
        ell: 1.0,
        eps_smooth: 0.05,
        eps_top: 0.05,
        delta_excl: 0.2,
        n_top: 10,
        n_top_stop: 30,
        max_iter: 50,
        topo_guard: true,
        step: StepConfig {
            tau0: 0.2,
            ..StepConfig::default()
        },
        ..OptConfig::default()
    };
    Ok(Demo {
        name: "supports2d",
        config,
        problem: Box::new(ElasticSupport {
            young: 1.0,
            nu: 0.3,
            load: [0.0, -1.0],
        }),
        mesh,
        initial: vec![support],
    })
}

/// Unit square cavity at k = 3 driven near its first non-constant mode by f = x - 1/2,
/// with an absorbing region starting on the bottom side.
pub fn cloak2d() -> Result<Demo> {
    let mut mesh = gen_square_domain(1.0, 0.04)?;
    mesh.relabel(0, |_, _| 0);
    let absorber = BoundaryLevelSet::from_arcs(&mesh, 0, &[arc_around(0.5, 0.1)])?;
    let config = OptConfig {
        problem: ProblemId::Helmholtz,
        ell: 1e-3,
        eps_top: 0.05,
        delta_excl: 0.1,
        n_top: 10,
        n_top_stop: 30,
        max_iter: 50,
        topo_guard: true,
        step: StepConfig {
            tau0: 0.1,
            ..StepConfig::default()
        },
        ..OptConfig::default()
    };
    let data = Helmholtz {
        gamma: constant(1.0),
        k: 3.0,
        z: 1.0,
        f: std::sync::Arc::new(|x: [f64; 2]| x[0] - 0.5),
        f_im: None,
    };
    Ok(Demo {
        name: "cloak2d",
        config,
        problem: Box::new(ImpedanceRegion { data }),
        mesh,
        initial: vec![absorber],
    })
}

pub fn demo(name: &str) -> Result<Demo> {
    match name {
        "mixer2d" => mixer2d(),
        "supports2d" => supports2d(),
        "cloak2d" => cloak2d(),
        other => Err(Error::Config(format!(
            "unknown demo '{other}' (mixer2d, supports2d, cloak2d)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn penalized_objective_examples() {
        assert_eq!(penalized_objective(1.0, 2.0, 4.0, 0.5, 0.25), 3.0);
        assert_eq!(penalized_objective(-1.5, 2.0, 4.0, 0.0, 0.0), -1.5);
    }

    #[test]
    fn line_search_examples() {
        let step = StepConfig::default();
        let quad = line_search(|t| Ok((t - 1.0) * (t - 1.0)), 1.0, &step).unwrap();
        assert_eq!(quad, LineSearch::Accepted { tau: 1.0, value: 0.0 });
        let mut calls = 0;
        let up = line_search(
            |t| {
                calls += 1;
                Ok(t)
            },
            1.0,
            &step,
        )
        .unwrap();
        assert_eq!(up, LineSearch::Rejected);
        assert_eq!(calls, 1 + step.max_backtracks + 1);
        assert!(line_search(|_| Ok(f64::NAN), 1.0, &step).is_err());
    }

    proptest! {
        #[test]
        fn accepted_steps_strictly_decrease(a in 0.1..10.0f64, c in 1e-3..2.0f64, noise in 0.0..1e-3f64, tau0 in 0.1..4.0f64) {
            let f = |t: f64| a * (t - c) * (t - c) + noise * (37.0 * t).sin() * t;
            let f0 = f(0.0);
            match line_search(|t| Ok(f(t)), tau0, &StepConfig::default()).unwrap() {
                LineSearch::Accepted { tau, value } => {
                    prop_assert!(value < f0);
                    prop_assert_eq!(value, f(tau));
                }
                LineSearch::Rejected => prop_assert!((0..=8).all(|k| f(tau0 * 0.5f64.powi(k)) >= f0 - 1e-12 * f0.abs())),
            }
        }
    }

    #[test]
    fn config_validation_and_schema() {
        assert!(OptConfig::default().validate().is_ok());
        let bad = OptConfig {
            n_top: 0,
            ..OptConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptConfig {
            step: StepConfig {
                tau0: -1.0,
                ..StepConfig::default()
            },
            ..OptConfig::default()
        };
        assert!(bad.validate().is_err());
        let cfg: OptConfig = serde_json::from_str(r#"{"problem": "mixer", "ell": 0.5}"#).unwrap();
        assert_eq!(cfg.problem, ProblemId::Mixer);
        assert_eq!(cfg.max_iter, 50);
        assert!(serde_json::from_str::<OptConfig>(r#"{"elll": 0.5}"#).is_err());
    }

    fn small_disk_problem(f: f64) -> (OptConfig, DirichletRegion, Mesh2D, Vec<BoundaryLevelSet>) {
        let mesh = gen_disk_domain(1.0, 120, 0.12).unwrap();
        let pi = std::f64::consts::PI;
        let ls = BoundaryLevelSet::from_arcs(&mesh, 0, &[arc_around(1.5 * pi, 0.4)]).unwrap();
        let cfg = OptConfig {
            ell: 1e-3,
            eps_smooth: 0.1,
            max_iter: 20,
            ..OptConfig::default()
        };
        let sq = Objective::Pointwise {
            name: "u2".into(),
            j: std::sync::Arc::new(|u, _| u * u),
            dj: std::sync::Arc::new(|u, _| 2.0 * u),
        };
        (
            cfg,
            DirichletRegion {
                data: Conductivity {
                    gamma: constant(1.0),
                    f: constant(f),
                },
                objective: sq,
            },
            mesh,
            vec![ls],
        )
    }

    #[test]
    fn zero_source_stops_at_first_stagnation_check() {
        let (mut cfg, problem, mesh, init) = small_disk_problem(0.0);
        cfg.ell = 0.0;
        let (_, hist) = run(&cfg, &problem, &mesh, init).unwrap();
        assert_eq!(hist.last().iter, cfg.window);
        assert!(hist.records.iter().all(|r| r.total == 0.0));
    }

    #[test]
    fn conductivity_loop_decreases_and_is_deterministic() {
        let (cfg, problem, mesh, init) = small_disk_problem(1.0);
        let (_, a) = run(&cfg, &problem, &mesh, init.clone()).unwrap();
        assert!(a.geometric_steps_decrease());
        assert!(a.count(Event::Geometric) > 0);
        assert!(a.last().total < a.first().total);
        let (_, b) = run(&cfg, &problem, &mesh, init).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn insertions_sit_at_negative_admissible_points() {
        let (mut cfg, problem, mesh, init) = small_disk_problem(1.0);
        cfg.n_top = 1;
        cfg.n_top_stop = 1;
        cfg.max_iter = 1;
        let fields = problem.topo_fields(&cfg, &mesh, &init).unwrap();
        let (_, hist) = run(&cfg, &problem, &mesh, init.clone()).unwrap();
        assert_eq!(hist.records[1].event, Event::Topological);
        let s = hist.records[1].inserted_at.unwrap();
        let k = fields[0].s.iter().position(|&x| x == s).unwrap();
        assert!(fields[0].values[k] < 0.0);
        for (a, b) in excluded_arcs(&mesh, &init) {
            let rel = (s - a).rem_euclid(mesh.loops[0].perimeter);
            assert!(rel > b - a);
        }
    }

    #[test]
    fn mixer_demo_regression_baseline() {
        let (_, h) = mixer2d().unwrap().run().unwrap();
        assert!(h.geometric_steps_decrease());
        assert!((h.first().j / -4.904867742082196e-1 - 1.0).abs() < 1e-9);
        assert!((h.last().j / -1.987578733735283 - 1.0).abs() < 1e-6, "{}", h.last().j);
    }

    #[test]
    fn mismatched_problem_is_a_config_error() {
        let (mut cfg, problem, mesh, init) = small_disk_problem(1.0);
        cfg.problem = ProblemId::Mixer;
        assert!(matches!(run(&cfg, &problem, &mesh, init), Err(Error::Config(_))));
    }
}
