use bcopt_bench::disk_case;
use bcopt_core::bem::{assemble_screen, Kernel};
use bcopt_core::mesh2d::gen_screen_disk;
use bcopt_core::optimizer::Problem;
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn screen_assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("screen_assembly");
    g.sample_size(10);
    let mesh = gen_screen_disk(8).unwrap();
    g.bench_function("laplace_8_rings", |b| {
        b.iter(|| assemble_screen(black_box(&mesh), &Kernel::Laplace3d, 1e-5).unwrap())
    });
    g.bench_function("mindlin_8_rings", |b| {
        b.iter(|| assemble_screen(black_box(&mesh), &Kernel::Mindlin3d { mu: 1.0, nu: 0.3 }, 1e-5).unwrap())
    });
    g.finish();
}

fn fem_solves(c: &mut Criterion) {
    let case = disk_case(0.05);
    let mut g = c.benchmark_group("fem");
    g.sample_size(20);
    g.bench_function("state_adjoint_h0.05", |b| {
        b.iter(|| {
            case.problem
                .state_adjoint(&case.config, &case.mesh, black_box(&case.regions))
                .unwrap()
        })
    });
    g.bench_function("shape_gradient_h0.05", |b| {
        b.iter(|| {
            case.problem
                .shape_gradients(&case.config, &case.mesh, black_box(&case.regions))
                .unwrap()
        })
    });
    g.finish();
}

fn topological_field(c: &mut Criterion) {
    let case = disk_case(0.05);
    let mut g = c.benchmark_group("topo");
    g.sample_size(20);
    g.bench_function("dirichlet_field_h0.05", |b| {
        b.iter(|| {
            case.problem
                .topo_fields(&case.config, &case.mesh, black_box(&case.regions))
                .unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, screen_assembly, fem_solves, topological_field);
criterion_main!(benches);
