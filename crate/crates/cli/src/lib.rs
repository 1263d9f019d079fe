//! `bcopt` command-line driver.
//!
//! Problems come from JSON configs; flags only choose outputs and verbosity.
//! Exit codes: 0 ok, 2 config error, 3 solver error, 4 validation failure.

pub mod config;
pub mod expr;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bcopt_core::bem::{equilibrium_rows, polarization_tensor, rings_for};
use bcopt_core::fem::{FemField, FieldValues};
use bcopt_core::io::{self, Cell, PointData};
use bcopt_core::mesh2d::{gen_disk_domain, gen_screen_disk, gen_square_domain};
use bcopt_core::optimizer::{self, Event, IterRecord, OptHistory};
use bcopt_core::region::{arcs_of, extract_interface, BoundaryLevelSet};
use bcopt_core::validation;
use bcopt_core::Mesh2D;
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{build, disk_boundary_count, parse_config, Format, RunConfig};

/// A failed command, mapped to its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
    Validation(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Validation(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Solver(m) => write!(f, "solver error: {m}"),
            Failure::Validation(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl From<bcopt_core::Error> for Failure {
    fn from(e: bcopt_core::Error) -> Self {
        match e {
            bcopt_core::Error::Config(m) => Failure::Config(m),
            bcopt_core::Error::Parameter(_) => Failure::Config(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bcopt",
    version,
    about = "Shape and topology optimization of boundary-condition regions"
)]
pub struct Cli {
    /// Output directory (overrides `output.directory` of a config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mesh generation.
    #[command(subcommand)]
    Mesh(MeshCmd),
    /// One state and adjoint solve for the initial region.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Topological derivative along the admissible boundary.
    TopoField {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full shape and topology optimization loop.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Write the region after every iteration.
        #[arg(long)]
        snapshots: bool,
    },
    /// Screen boundary-element studies.
    #[command(subcommand)]
    Bem(BemCmd),
    /// Run acceptance suites and print a PASS/FAIL table.
    Validate {
        /// all, bem, topo2d, shape, smoothing, optimizer, fem or region.
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Preconfigured optimization runs.
    Demo {
        name: DemoName,
        #[arg(long)]
        snapshots: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum MeshCmd {
    /// Generate a mesh and write MEDIT and VTK files.
    Gen {
        #[arg(long, value_enum)]
        shape: ShapeArg,
        #[arg(long)]
        target_h: f64,
        /// Disk radius or square side.
        #[arg(long, default_value_t = 1.0)]
        size: f64,
        /// Boundary vertices of a disk.
        #[arg(long)]
        n_boundary: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Disk,
    Square,
    ScreenDisk,
}

#[derive(Debug, Subcommand)]
pub enum BemCmd {
    /// Equilibrium density sweep over mesh sizes and regularizations.
    Equilibrium {
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        h: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        eta: Vec<f64>,
        /// Skip the R, A, E error metrics.
        #[arg(long)]
        no_metrics: bool,
    },
    /// Elastic polarization tensor of the unit disk screen.
    Polarization {
        #[arg(long, default_value_t = 0.05)]
        h: f64,
        #[arg(long, default_value_t = validation::POLARIZATION_MU)]
        mu: f64,
        #[arg(long, default_value_t = validation::POLARIZATION_NU)]
        nu: f64,
        #[arg(long, default_value_t = validation::POLARIZATION_ETA)]
        eta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    Mixer2d,
    Supports2d,
    Cloak2d,
}

impl DemoName {
    fn as_str(self) -> &'static str {
        match self {
            DemoName::Mixer2d => "mixer2d",
            DemoName::Supports2d => "supports2d",
            DemoName::Cloak2d => "cloak2d",
        }
    }
}

/// Builds the global worker pool from `BCOPT_THREADS`, if set.
pub fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("BCOPT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("BCOPT_THREADS must be a positive integer, got '{v}'")))?;
    // a pool built earlier in the process is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

struct Ctx<'a> {
    out: PathBuf,
    quiet: bool,
    hash: String,
    stdout: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn say(&mut self, line: impl AsRef<str>) {
        if !self.quiet {
            let _ = writeln!(self.stdout, "{}", line.as_ref());
        }
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), Failure> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Failure::Solver(format!("creating {}: {e}", dir.display())))?;
        }
        fs::write(&path, content).map_err(|e| Failure::Solver(format!("writing {}: {e}", path.display())))?;
        self.say(format!("wrote {}", path.display()));
        Ok(())
    }
}

fn canonical_hash(v: &serde_json::Value) -> String {
    io::config_hash(v.to_string().as_bytes())
}

fn load(path: &Path) -> Result<(RunConfig, String), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("reading {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Runs one parsed command line; progress goes to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    init_threads()?;
    let mut ctx = Ctx {
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        quiet: cli.quiet,
        hash: String::new(),
        stdout,
    };
    match cli.command {
        Command::Mesh(MeshCmd::Gen {
            shape,
            target_h,
            size,
            n_boundary,
        }) => mesh_gen(&mut ctx, shape, target_h, size, n_boundary),
        Command::Solve { config } => {
            let cfg = with_config(&mut ctx, &cli.out, &config)?;
            solve(&mut ctx, &cfg)
        }
        Command::TopoField { config } => {
            let cfg = with_config(&mut ctx, &cli.out, &config)?;
            topo(&mut ctx, &cfg)
        }
        Command::Optimize { config, snapshots } => {
            let cfg = with_config(&mut ctx, &cli.out, &config)?;
            let setup = build(&cfg)?;
            let formats = cfg.output.formats.clone();
            run_loop(
                &mut ctx,
                &setup.opt,
                setup.problem.as_ref(),
                &setup.mesh,
                setup.initial,
                &formats,
                snapshots || cfg.output.snapshots,
            )
        }
        Command::Bem(BemCmd::Equilibrium { h, eta, no_metrics }) => equilibrium(&mut ctx, &h, &eta, !no_metrics),
        Command::Bem(BemCmd::Polarization { h, mu, nu, eta }) => polarization(&mut ctx, h, mu, nu, eta),
        Command::Validate { suite } => validate(&mut ctx, &suite),
        Command::Demo { name, snapshots } => {
            let demo = optimizer::demo(name.as_str())?;
            ctx.hash = canonical_hash(&json!({ "command": "demo", "name": name.as_str() }));
            let formats = [Format::Csv, Format::Vtk, Format::Medit];
            run_loop(
                &mut ctx,
                &demo.config,
                demo.problem.as_ref(),
                &demo.mesh,
                demo.initial,
                &formats,
                snapshots,
            )
        }
    }
}

fn with_config(ctx: &mut Ctx, out: &Option<PathBuf>, path: &Path) -> Result<RunConfig, Failure> {
    let (cfg, hash) = load(path)?;
    ctx.hash = hash;
    if out.is_none() {
        ctx.out = PathBuf::from(&cfg.output.directory);
    }
    Ok(cfg)
}

fn mesh_gen(
    ctx: &mut Ctx,
    shape: ShapeArg,
    target_h: f64,
    size: f64,
    n_boundary: Option<usize>,
) -> Result<(), Failure> {
    if !(target_h > 0.0 && size > 0.0) {
        return Err(Failure::Config("--target-h and --size must be positive".into()));
    }
    let name = shape
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    ctx.hash = canonical_hash(
        &json!({ "command": "mesh gen", "shape": name, "target_h": target_h, "size": size, "n_boundary": n_boundary }),
    );
    if shape == ShapeArg::ScreenDisk {
        if size != 1.0 || n_boundary.is_some() {
            return Err(Failure::Config(
                "the screen disk has unit radius and no --n-boundary".into(),
            ));
        }
        let mesh = gen_screen_disk(rings_for(target_h)?)?;
        mesh.audit()?;
        ctx.say(format!(
            "screen disk: {} vertices, {} triangles, max edge {:.4}, audit ok",
            mesh.n_vertices(),
            mesh.triangles.len(),
            mesh.max_edge()
        ));
        let hash = ctx.hash.clone();
        ctx.write("mesh.mesh", &io::write_medit_screen(&mesh, &hash))?;
        return ctx.write("mesh.vtk", &io::screen_vtk(&mesh, &[], &hash)?);
    }
    let mesh = match shape {
        ShapeArg::Disk => gen_disk_domain(
            size,
            n_boundary.unwrap_or_else(|| disk_boundary_count(size, target_h)),
            target_h,
        )?,
        _ => {
            if n_boundary.is_some() {
                return Err(Failure::Config("--n-boundary applies to the disk only".into()));
            }
            gen_square_domain(size, target_h)?
        }
    };
    mesh.audit()?;
    let (lo, hi) = mesh.edge_length_range();
    ctx.say(format!(
        "{name}: {} vertices, {} triangles, {} boundary edges, edge lengths [{lo:.4}, {hi:.4}], audit ok",
        mesh.n_vertices(),
        mesh.n_triangles(),
        mesh.n_boundary_edges()
    ));
    let hash = ctx.hash.clone();
    ctx.write("mesh.mesh", &io::write_medit(&mesh, &hash))?;
    ctx.write("mesh.vtk", &io::mesh_vtk(&mesh, &[], &hash)?)
}

/// Named nodal columns of a field.
fn columns(prefix: &str, f: &FemField) -> Vec<(String, Vec<f64>)> {
    match &f.values {
        FieldValues::Real(v) => vec![(prefix.to_string(), v.clone())],
        FieldValues::Complex(v) => vec![
            (format!("{prefix}_re"), v.iter().map(|z| z.re).collect()),
            (format!("{prefix}_im"), v.iter().map(|z| z.im).collect()),
        ],
        FieldValues::Vector(v) => vec![
            (format!("{prefix}_x"), v.iter().map(|z| z[0]).collect()),
            (format!("{prefix}_y"), v.iter().map(|z| z[1]).collect()),
        ],
    }
}

fn solve(ctx: &mut Ctx, cfg: &RunConfig) -> Result<(), Failure> {
    let setup = build(cfg)?;
    let (u, p) = setup.problem.state_adjoint(&setup.opt, &setup.mesh, &setup.initial)?;
    let j = setup.problem.objective(&setup.opt, &setup.mesh, &setup.initial)?;
    ctx.say(format!(
        "J = {j:.10e}, residuals {:.2e} (state) {:.2e} (adjoint)",
        u.residual, p.residual
    ));
    let hash = ctx.hash.clone();
    let cols: Vec<(String, Vec<f64>)> = columns("u", &u).into_iter().chain(columns("p", &p)).collect();
    if cfg.wants(Format::Csv) {
        let mut header = vec!["vertex", "x", "y"];
        header.extend(cols.iter().map(|(n, _)| n.as_str()));
        let rows: Vec<Vec<Cell>> = (0..setup.mesh.n_vertices())
            .map(|i| {
                let v = setup.mesh.vertices[i];
                let mut row = vec![Cell::I(i as i64), Cell::F(v[0]), Cell::F(v[1])];
                row.extend(cols.iter().map(|(_, c)| Cell::F(c[i])));
                row
            })
            .collect();
        ctx.write("fields.csv", &io::write_csv(&header, &rows, &hash)?)?;
    }
    if cfg.wants(Format::Vtk) {
        let data: Vec<(&str, PointData)> = cols
            .iter()
            .map(|(n, c)| (n.as_str(), PointData::Scalars(c.clone())))
            .collect();
        ctx.write("fields.vtk", &io::mesh_vtk(&setup.mesh, &data, &hash)?)?;
        ctx.write("region.vtk", &region_vtk(&setup.mesh, &setup.initial, &hash)?)?;
    }
    if cfg.wants(Format::Medit) {
        ctx.write("mesh.mesh", &io::write_medit(&setup.mesh, &hash))?;
    }
    let summary = json!({
        "config_sha256": hash,
        "model": setup.opt.problem,
        "objective": j,
        "vertices": setup.mesh.n_vertices(),
        "state_residual": u.residual,
        "adjoint_residual": p.residual,
    });
    ctx.write("solve.json", &pretty(&summary)?)
}

fn pretty(v: &serde_json::Value) -> Result<String, Failure> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Solver(e.to_string()))
}

fn region_vtk(mesh: &Mesh2D, regions: &[BoundaryLevelSet], hash: &str) -> Result<String, Failure> {
    let names: Vec<String> = (0..regions.len()).map(|k| format!("phi_{k}")).collect();
    let data: Vec<(&str, PointData)> = names
        .iter()
        .zip(regions)
        .map(|(n, r)| (n.as_str(), PointData::Scalars(r.phi.clone())))
        .collect();
    Ok(io::loop_vtk(mesh, regions[0].loop_id, &data, hash)?)
}

fn region_csv(mesh: &Mesh2D, regions: &[BoundaryLevelSet], hash: &str) -> Result<String, Failure> {
    let l = &mesh.loops[regions[0].loop_id];
    let names: Vec<String> = (0..regions.len()).map(|k| format!("phi_{k}")).collect();
    let mut header = vec!["vertex", "s", "x", "y"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<Cell>> = (0..l.len())
        .map(|i| {
            let v = mesh.vertices[l.verts[i]];
            let mut row = vec![
                Cell::I(l.verts[i] as i64),
                Cell::F(l.arclength[i]),
                Cell::F(v[0]),
                Cell::F(v[1]),
            ];
            row.extend(regions.iter().map(|r| Cell::F(r.phi[i])));
            row
        })
        .collect();
    Ok(io::write_csv(&header, &rows, hash)?)
}

fn topo(ctx: &mut Ctx, cfg: &RunConfig) -> Result<(), Failure> {
    let setup = build(cfg)?;
    let fields = setup.problem.topo_fields(&setup.opt, &setup.mesh, &setup.initial)?;
    let hash = ctx.hash.clone();
    let mut summary = Vec::new();
    for (k, f) in fields.iter().enumerate() {
        let pts: Vec<[f64; 2]> = f.s.iter().map(|&s| setup.mesh.point_at(0, s)).collect();
        let best = f
            .values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, &v)| (f.s[i], v));
        match best {
            Some((s, v)) => ctx.say(format!(
                "region {k}: {:?}, {} points, most negative {v:.6e} at s = {s:.6}",
                f.variant,
                f.len()
            )),
            None => ctx.say(format!("region {k}: {:?}, no admissible points", f.variant)),
        }
        summary.push(json!({
            "region": k,
            "variant": f.variant,
            "law": f.law,
            "points": f.len(),
            "delta_excl": f.delta_excl,
            "min": best.map(|(s, v)| json!({ "s": s, "value": v })),
        }));
        if cfg.wants(Format::Csv) {
            let rows: Vec<Vec<Cell>> = (0..f.len())
                .map(|i| {
                    vec![
                        Cell::F(f.s[i]),
                        Cell::F(pts[i][0]),
                        Cell::F(pts[i][1]),
                        Cell::F(f.values[i]),
                    ]
                })
                .collect();
            ctx.write(
                &format!("topo_field_{k}.csv"),
                &io::write_csv(&["s", "x", "y", "value"], &rows, &hash)?,
            )?;
        }
        if cfg.wants(Format::Vtk) {
            let p3: Vec<[f64; 3]> = pts.iter().map(|p| [p[0], p[1], 0.0]).collect();
            let body = io::polydata_vtk(
                &p3,
                false,
                &[("topological_derivative", PointData::Scalars(f.values.clone()))],
                &hash,
            )?;
            ctx.write(&format!("topo_field_{k}.vtk"), &body)?;
        }
    }
    ctx.write(
        "topo_field.json",
        &pretty(&json!({ "config_sha256": hash, "fields": summary }))?,
    )
}

fn event_name(e: Event) -> &'static str {
    match e {
        Event::Initial => "initial",
        Event::Geometric => "geometric",
        Event::Topological => "topological",
        Event::Rejected => "rejected",
    }
}

fn history_csv(history: &OptHistory, hash: &str) -> Result<String, Failure> {
    let header = [
        "iter",
        "j",
        "area",
        "cont",
        "total",
        "tau",
        "event",
        "interfaces",
        "inserted_at",
    ];
    let rows: Vec<Vec<Cell>> = history
        .records
        .iter()
        .map(|r| {
            vec![
                Cell::I(r.iter as i64),
                Cell::F(r.j),
                Cell::F(r.area),
                Cell::F(r.cont),
                Cell::F(r.total),
                Cell::F(r.tau),
                Cell::S(event_name(r.event).into()),
                Cell::I(r.interfaces as i64),
                r.inserted_at.map_or(Cell::S(String::new()), Cell::F),
            ]
        })
        .collect();
    Ok(io::write_csv(&header, &rows, hash)?)
}

fn run_loop(
    ctx: &mut Ctx,
    opt: &optimizer::OptConfig,
    problem: &dyn optimizer::Problem,
    mesh: &Mesh2D,
    initial: Vec<BoundaryLevelSet>,
    formats: &[Format],
    snapshots: bool,
) -> Result<(), Failure> {
    let hash = ctx.hash.clone();
    let mut observer = |r: &IterRecord, regions: &[BoundaryLevelSet]| -> bcopt_core::Result<()> {
        ctx.say(format!(
            "{:>4} {:<12} J = {:.10e}  total = {:.10e}  tau = {:.3e}",
            r.iter,
            event_name(r.event),
            r.j,
            r.total,
            r.tau
        ));
        if snapshots {
            let body = region_csv(mesh, regions, &hash)
                .map_err(|e| bcopt_core::Error::Io(std::io::Error::other(e.to_string())))?;
            ctx.write(&format!("snapshots/region_{:04}.csv", r.iter), &body)
                .map_err(|e| bcopt_core::Error::Io(std::io::Error::other(e.to_string())))?;
        }
        Ok(())
    };
    let (regions, history) = optimizer::run_with(opt, problem, mesh, initial, &mut observer)?;
    let first = history.first().clone();
    let last = history.last().clone();
    ctx.say(format!(
        "J {:.10e} -> {:.10e} in {} iterations",
        first.j, last.j, last.iter
    ));
    if formats.contains(&Format::Csv) {
        ctx.write("history.csv", &history_csv(&history, &hash)?)?;
        ctx.write("region.csv", &region_csv(mesh, &regions, &hash)?)?;
    }
    if formats.contains(&Format::Vtk) {
        ctx.write("region.vtk", &region_vtk(mesh, &regions, &hash)?)?;
    }
    if formats.contains(&Format::Medit) {
        ctx.write("mesh.mesh", &io::write_medit(mesh, &hash))?;
    }
    let perimeter = mesh.loops[regions[0].loop_id].perimeter;
    let arcs: Vec<Vec<(f64, f64)>> = regions
        .iter()
        .map(|r| arcs_of(&extract_interface(r, mesh), perimeter))
        .collect();
    let summary = json!({
        "config_sha256": hash,
        "problem": opt.problem,
        "iterations": last.iter,
        "initial": first,
        "final": last,
        "geometric_steps_decrease": history.geometric_steps_decrease(),
        "events": {
            "geometric": history.count(Event::Geometric),
            "topological": history.count(Event::Topological),
            "rejected": history.count(Event::Rejected),
        },
        "arcs": arcs,
    });
    ctx.write("summary.json", &pretty(&summary)?)
}

fn equilibrium(ctx: &mut Ctx, hs: &[f64], etas: &[f64], metrics: bool) -> Result<(), Failure> {
    if hs.iter().chain(etas).any(|v| !v.is_finite()) || etas.iter().any(|&e| e < 0.0) {
        return Err(Failure::Config("--h must be finite and --eta non-negative".into()));
    }
    ctx.hash = canonical_hash(&json!({ "command": "bem equilibrium", "h": hs, "eta": etas, "metrics": metrics }));
    // rayon keeps the input order when collecting
    let per_h: Vec<_> = hs
        .par_iter()
        .map(|&h| equilibrium_rows(h, etas, metrics))
        .collect::<Result<_, _>>()?;
    let rows: Vec<_> = per_h.into_iter().flatten().collect();
    let header = ["h", "eta", "nodes", "integral", "center", "R", "A", "E", "warnings"];
    let mut cells = Vec::new();
    for r in &rows {
        let m = |f: fn(&bcopt_core::bem::ErrorMetrics) -> f64| {
            r.metrics.as_ref().map_or(Cell::S(String::new()), |x| Cell::F(f(x)))
        };
        cells.push(vec![
            Cell::F(r.h),
            Cell::F(r.eta),
            Cell::I(r.nodes as i64),
            Cell::F(r.integral),
            Cell::F(r.center),
            m(|x| x.r),
            m(|x| x.a),
            m(|x| x.e),
            Cell::S(r.warnings.join("; ")),
        ]);
        let metric_text = r.metrics.as_ref().map_or(String::new(), |x| {
            format!("  R {:.3e}  A {:.3e}  E {:.3e}", x.r, x.a, x.e)
        });
        ctx.say(format!(
            "h {:<6} eta {:<8.1e} nodes {:>5}  integral {:.6}  center {:.6}{metric_text}",
            r.h, r.eta, r.nodes, r.integral, r.center
        ));
        for w in &r.warnings {
            ctx.say(format!("  warning: {w}"));
        }
    }
    let hash = ctx.hash.clone();
    ctx.write("equilibrium.csv", &io::write_csv(&header, &cells, &hash)?)
}

fn polarization(ctx: &mut Ctx, h: f64, mu: f64, nu: f64, eta: f64) -> Result<(), Failure> {
    if !(mu > 0.0 && eta >= 0.0) {
        return Err(Failure::Config("--mu must be positive and --eta non-negative".into()));
    }
    ctx.hash = canonical_hash(&json!({ "command": "bem polarization", "h": h, "mu": mu, "nu": nu, "eta": eta }));
    let mesh = gen_screen_disk(rings_for(h)?)?;
    let t = polarization_tensor(&mesh, mu, nu, eta)?;
    for row in &t.m {
        ctx.say(format!("{:>14.6} {:>14.6} {:>14.6}", row[0], row[1], row[2]));
    }
    let hash = ctx.hash.clone();
    let body = json!({
        "config_sha256": hash,
        "h": h,
        "nodes": mesh.n_vertices(),
        "mu": mu,
        "nu": nu,
        "eta": eta,
        "m": t.m,
        "norm": t.norm(),
    });
    ctx.write("polarization.json", &pretty(&body)?)
}

fn validate(ctx: &mut Ctx, suite: &str) -> Result<(), Failure> {
    let ids = validation::suite(suite)?;
    let mut failed = Vec::new();
    for id in ids {
        let r = match validation::run_criterion(id) {
            Ok(r) => r,
            Err(e) => validation::CriterionResult {
                id,
                name: format!("criterion {id}"),
                pass: false,
                detail: format!("error: {e}"),
                notes: Vec::new(),
            },
        };
        // the table is the command's output, so it ignores --quiet
        let _ = writeln!(ctx.stdout, "{r}");
        if !r.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("criteria {failed:?} failed")))
    }
}
