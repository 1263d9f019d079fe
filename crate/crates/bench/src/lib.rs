//! Shared fixtures for the benchmarks.

use bcopt_core::fem::{constant, Conductivity, Objective};
use bcopt_core::mesh2d::gen_disk_domain;
use bcopt_core::optimizer::{DirichletRegion, OptConfig};
use bcopt_core::region::BoundaryLevelSet;
use bcopt_core::Mesh2D;

/// Unit disk, f = 1, objective ∫u², G a bottom arc.
pub struct DiskCase {
    pub mesh: Mesh2D,
    pub problem: DirichletRegion,
    pub config: OptConfig,
    pub regions: Vec<BoundaryLevelSet>,
}

pub fn disk_case(target_h: f64) -> DiskCase {
    let n_boundary = (4.0 * std::f64::consts::PI / target_h).ceil() as usize;
    let mesh = gen_disk_domain(1.0, n_boundary, target_h).expect("disk mesh");
    let regions = vec![BoundaryLevelSet::from_arcs(&mesh, 0, &[(4.0, 5.4)]).expect("arc")];
    let problem = DirichletRegion {
        data: Conductivity {
            gamma: constant(1.0),
            f: constant(1.0),
        },
        objective: Objective::AbsSquare,
    };
    DiskCase {
        mesh,
        problem,
        config: OptConfig::default(),
        regions,
    }
}
