//! Run configuration: a JSON document with unknown keys rejected.

use bcopt_core::derivatives::SmoothedForm;
use bcopt_core::fem::{Conductivity, Helmholtz, Objective};
use bcopt_core::mesh2d::{gen_disk_domain, gen_square_domain};
use bcopt_core::optimizer::{
    ClampLocator, DirichletRegion, ElasticSupport, ImpedanceRegion, Mixer, OptConfig, Problem, ProblemId, StepConfig,
};
use bcopt_core::region::BoundaryLevelSet;
use bcopt_core::{io, Mesh2D};
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshShape {
    Disk,
    Square,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub shape: MeshShape,
    /// Disk radius or square side.
    #[serde(default = "one")]
    pub size: f64,
    pub target_h: f64,
    /// Boundary vertices of a disk; 0 spaces them at half of `target_h`.
    #[serde(default)]
    pub n_boundary: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub model: ProblemId,
    #[serde(default = "expr_one")]
    pub gamma: Expr,
    #[serde(default = "expr_zero")]
    pub f: Expr,
    /// Imaginary part of the Helmholtz source.
    #[serde(default)]
    pub f_im: Option<Expr>,
    #[serde(default = "one")]
    pub young: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "one")]
    pub k: f64,
    #[serde(default = "one")]
    pub z: f64,
    /// Volume load of the support problem.
    #[serde(default = "default_load")]
    pub load: [f64; 2],
    #[serde(default = "one")]
    pub u_in: f64,
    /// Normal traction magnitude of the clamp problem.
    #[serde(default = "one")]
    pub traction: f64,
    /// Side (1 bottom, 2 right, 3 top, 4 left) of the square held fixed in the clamp problem.
    #[serde(default = "default_clamped")]
    pub clamped_label: u32,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    /// Initial arcs (s_start, s_end) of G; for the mixer, of the cathode.
    pub arcs: Vec<(f64, f64)>,
    /// Initial anode arcs of the mixer.
    #[serde(default)]
    pub anode_arcs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// ∫|u|².
    AbsSquare,
    /// ∫|u|² / (2 Vol).
    MeanSquare,
    /// -∫γ|∇u|².
    GradientEnergy,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// Defaults to the model's objective.
    #[serde(default)]
    pub kind: Option<ObjectiveKind>,
    #[serde(default)]
    pub ell: f64,
    #[serde(default)]
    pub m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSection {
    #[serde(default = "default_eps")]
    pub eps_smooth: f64,
    /// Use (1/eps) h(d/eps) rather than h(d/eps).
    #[serde(default = "yes")]
    pub robin_prefactor: bool,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        SmoothingSection {
            eps_smooth: default_eps(),
            robin_prefactor: true,
        }
    }
}

/// Optimizer settings other than the weights and smoothing, which have their own sections.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub eps_top: f64,
    pub delta_excl: f64,
    pub n_top: usize,
    pub n_top_stop: usize,
    pub max_iter: usize,
    pub step: StepConfig,
    pub tolerance: f64,
    pub window: usize,
    pub topo_guard: bool,
    pub velocity_width: f64,
    pub form: SmoothedForm,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptConfig::default();
        OptimizerSection {
            eps_top: d.eps_top,
            delta_excl: d.delta_excl,
            n_top: d.n_top,
            n_top_stop: d.n_top_stop,
            max_iter: d.max_iter,
            step: d.step,
            tolerance: d.tolerance,
            window: d.window,
            topo_guard: d.topo_guard,
            velocity_width: d.velocity_width,
            form: d.form,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Vtk,
    Medit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
    /// Write the region after every iteration.
    #[serde(default)]
    pub snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_dir(),
            formats: all_formats(),
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSection,
    pub physics: PhysicsSection,
    pub region: RegionSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub smoothing: SmoothingSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn expr_one() -> Expr {
    Expr::constant(1.0)
}
fn expr_zero() -> Expr {
    Expr::constant(0.0)
}
fn default_nu() -> f64 {
    0.3
}
fn default_load() -> [f64; 2] {
    [0.0, -1.0]
}
fn default_clamped() -> u32 {
    4
}
fn default_eps() -> f64 {
    0.05
}
fn default_dir() -> String {
    "out".into()
}
fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Vtk, Format::Medit]
}

/// Parsed config and the SHA-256 of its canonical JSON (sorted keys, no whitespace).
pub fn parse_config(text: &str) -> Result<(RunConfig, String), Failure> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Failure::Config(format!("config: {e}")))?;
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        Failure::Config(format!("config key '{}': {inner}", e.path()))
    })?;
    cfg.validate()?;
    let canonical = serde_json::to_string(&value).map_err(|e| Failure::Config(e.to_string()))?;
    Ok((cfg, io::config_hash(canonical.as_bytes())))
}

fn positive(key: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Failure::Config(format!(
            "config key '{key}': must be positive, got {v}"
        )))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        positive("mesh.size", self.mesh.size)?;
        positive("mesh.target_h", self.mesh.target_h)?;
        positive("smoothing.eps_smooth", self.smoothing.eps_smooth)?;
        let p = &self.physics;
        positive("physics.young", p.young)?;
        if !(p.nu > 0.0 && p.nu < 0.5) {
            return Err(Failure::Config(format!(
                "config key 'physics.nu': must lie in (0, 0.5), got {}",
                p.nu
            )));
        }
        if p.model == ProblemId::Helmholtz {
            positive("physics.k", p.k)?;
            positive("physics.z", p.z)?;
        }
        if self.region.arcs.is_empty() {
            return Err(Failure::Config(
                "config key 'region.arcs': at least one initial arc is required".into(),
            ));
        }
        let arcs = self.region.arcs.iter().chain(&self.region.anode_arcs);
        for (i, &(a, b)) in arcs.enumerate() {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Failure::Config(format!(
                    "config key 'region': arc {i} ({a}, {b}) must have positive length"
                )));
            }
        }
        match (p.model, self.region.anode_arcs.is_empty()) {
            (ProblemId::Mixer, true) => {
                return Err(Failure::Config(
                    "config key 'region.anode_arcs': the mixer needs an anode".into(),
                ))
            }
            (m, false) if m != ProblemId::Mixer => {
                return Err(Failure::Config(
                    "config key 'region.anode_arcs': only the mixer has an anode".into(),
                ))
            }
            _ => {}
        }
        if p.model == ProblemId::Clamp {
            if self.mesh.shape != MeshShape::Square {
                return Err(Failure::Config(
                    "config key 'mesh.shape': the clamp problem runs on the square".into(),
                ));
            }
            if !(1..=4).contains(&p.clamped_label) {
                return Err(Failure::Config(
                    "config key 'physics.clamped_label': must be a square side 1..=4".into(),
                ));
            }
        }
        let kind = self.objective_kind();
        let allowed: &[ObjectiveKind] = match p.model {
            ProblemId::Conductivity => &[
                ObjectiveKind::AbsSquare,
                ObjectiveKind::MeanSquare,
                ObjectiveKind::GradientEnergy,
            ],
            ProblemId::Mixer => &[ObjectiveKind::GradientEnergy],
            _ => &[ObjectiveKind::AbsSquare],
        };
        if !allowed.contains(&kind) {
            return Err(Failure::Config(format!(
                "config key 'objective.kind': {kind:?} is not available for {:?}",
                p.model
            )));
        }
        self.opt_config().validate().map_err(Failure::from)
    }

    pub fn objective_kind(&self) -> ObjectiveKind {
        self.objective.kind.unwrap_or(match self.physics.model {
            ProblemId::Mixer => ObjectiveKind::GradientEnergy,
            _ => ObjectiveKind::AbsSquare,
        })
    }

    pub fn opt_config(&self) -> OptConfig {
        let o = &self.optimizer;
        OptConfig {
            problem: self.physics.model,
            ell: self.objective.ell,
            m: self.objective.m,
            eps_smooth: self.smoothing.eps_smooth,
            robin_scaled: self.smoothing.robin_prefactor,
            eps_top: o.eps_top,
            delta_excl: o.delta_excl,
            n_top: o.n_top,
            n_top_stop: o.n_top_stop,
            max_iter: o.max_iter,
            step: o.step.clone(),
            tolerance: o.tolerance,
            window: o.window,
            topo_guard: o.topo_guard,
            velocity_width: o.velocity_width,
            form: o.form,
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

/// Mesh, problem and initial regions described by a config.
pub struct Setup {
    pub mesh: Mesh2D,
    pub problem: Box<dyn Problem>,
    pub opt: OptConfig,
    pub initial: Vec<BoundaryLevelSet>,
}

pub fn disk_boundary_count(radius: f64, target_h: f64) -> usize {
    ((2.0 * std::f64::consts::PI * radius / (0.5 * target_h)).ceil() as usize).max(16)
}

pub fn build(cfg: &RunConfig) -> Result<Setup, Failure> {
    let m = &cfg.mesh;
    let p = &cfg.physics;
    let mut mesh = match m.shape {
        MeshShape::Disk => {
            let n = if m.n_boundary > 0 {
                m.n_boundary
            } else {
                disk_boundary_count(m.size, m.target_h)
            };
            gen_disk_domain(m.size, n, m.target_h)?
        }
        MeshShape::Square => gen_square_domain(m.size, m.target_h)?,
    };
    // optimizable edges carry label 0; the clamp problem keeps its fixed side
    let keep = if p.model == ProblemId::Clamp {
        Some(p.clamped_label)
    } else {
        None
    };
    mesh.relabel(0, |_, l| if Some(l) == keep { l } else { 0 });

    let objective = match cfg.objective_kind() {
        ObjectiveKind::AbsSquare => Objective::AbsSquare,
        ObjectiveKind::MeanSquare => Objective::MeanSquare,
        ObjectiveKind::GradientEnergy => Objective::gradient_energy(p.gamma.coef()),
    };
    let problem: Box<dyn Problem> = match p.model {
        ProblemId::Conductivity => Box::new(DirichletRegion {
            data: Conductivity {
                gamma: p.gamma.coef(),
                f: p.f.coef(),
            },
            objective,
        }),
        ProblemId::Mixer => Box::new(Mixer {
            gamma: p.gamma.coef(),
            u_in: p.u_in,
        }),
        ProblemId::Helmholtz => Box::new(ImpedanceRegion {
            data: Helmholtz {
                gamma: p.gamma.coef(),
                k: p.k,
                z: p.z,
                f: p.f.coef(),
                f_im: p.f_im.as_ref().map(Expr::coef),
            },
        }),
        ProblemId::ElasticitySupport => Box::new(ElasticSupport {
            young: p.young,
            nu: p.nu,
            load: p.load,
        }),
        ProblemId::Clamp => Box::new(ClampLocator {
            young: p.young,
            nu: p.nu,
            traction: p.traction,
            clamped_label: p.clamped_label,
        }),
    };
    let mut initial = vec![BoundaryLevelSet::from_arcs(&mesh, 0, &cfg.region.arcs)?];
    if p.model == ProblemId::Mixer {
        initial.push(BoundaryLevelSet::from_arcs(&mesh, 0, &cfg.region.anode_arcs)?);
    }
    Ok(Setup {
        mesh,
        problem,
        opt: cfg.opt_config(),
        initial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "mesh": {"shape": "disk", "target_h": 0.2},
        "physics": {"model": "conductivity", "f": "1 + x^2"},
        "region": {"arcs": [[4.0, 5.0]]}
    }"#;

    #[test]
    fn minimal_config_builds() {
        let (cfg, hash) = parse_config(MINIMAL).unwrap();
        assert_eq!(hash.len(), 64);
        assert_eq!(cfg.objective_kind(), ObjectiveKind::AbsSquare);
        let setup = build(&cfg).unwrap();
        assert_eq!(setup.initial.len(), 1);
        assert!(setup.mesh.loops[0].labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn hash_ignores_formatting_and_key_order() {
        let a = r#"{"region": {"arcs": [[4.0, 5.0]]}, "physics": {"f": "1 + x^2", "model": "conductivity"}, "mesh": {"target_h": 0.2, "shape": "disk"}}"#;
        assert_eq!(parse_config(MINIMAL).unwrap().1, parse_config(a).unwrap().1);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let bad = MINIMAL.replace("\"target_h\"", "\"target_hh\"");
        let Err(Failure::Config(msg)) = parse_config(&bad) else {
            panic!("expected a config error")
        };
        assert!(msg.contains("mesh"), "{msg}");
        assert!(msg.contains("target_hh"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn rejects_invalid_values() {
        for (from, to) in [
            ("0.2", "-0.2"),
            ("\"1 + x^2\"", "\"x^5\""),
            ("[[4.0, 5.0]]", "[]"),
            ("\"conductivity\"", "\"mixer\""),
            ("\"conductivity\"", "\"clamp\""),
        ] {
            assert!(
                matches!(parse_config(&MINIMAL.replace(from, to)), Err(Failure::Config(_))),
                "{from} -> {to}"
            );
        }
    }

    #[test]
    fn clamp_keeps_its_fixed_side() {
        let text = r#"{
            "mesh": {"shape": "square", "target_h": 0.1},
            "physics": {"model": "clamp", "clamped_label": 4},
            "region": {"arcs": [[1.4, 1.6]]}
        }"#;
        let (cfg, _) = parse_config(text).unwrap();
        let setup = build(&cfg).unwrap();
        let labels = &setup.mesh.loops[0].labels;
        assert!(labels.contains(&4) && labels.contains(&0));
        assert!(!labels.iter().any(|&l| l == 1 || l == 2 || l == 3));
    }
}
