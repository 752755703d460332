use cavitylab::bem::{assemble_y, BemGeometry, DensitySolver, KernelContext};
use cavitylab::enclosure::{build_enclosure, fibonacci_shell, BoundarySample, ProbeResult, VoxelTest};
use cavitylab::geometry::{build_quadrature, Surface, Vec3};
use cavitylab::heat_forward::{solve_radial, RadialScenario};
use cavitylab::path_optics::{minimize_broken_path, MinimizeOptions};
use criterion::{criterion_group, criterion_main, Criterion};

fn spheres() -> (Surface, Surface) {
    (Surface::sphere(Vec3::zeros(), 1.5).unwrap(), Surface::sphere(Vec3::zeros(), 2.0).unwrap())
}

fn bem(c: &mut Criterion) {
    let (d, o) = spheres();
    let geom = BemGeometry::focused(d, o, &Vec3::new(1.5, 0.0, 0.0), &Vec3::new(2.0, 0.0, 0.0), 6).unwrap();
    let ctx = KernelContext::constant(20.0, 0.0).unwrap();
    c.bench_function("assemble_y res6", |b| b.iter(|| assemble_y(&ctx, &geom).unwrap()));
    let blocks = assemble_y(&ctx, &geom).unwrap();
    c.bench_function("factor and solve res6", |b| {
        b.iter(|| DensitySolver::new(&blocks).unwrap().solve(&vec![1.0; geom.mesh_omega.len()]).unwrap())
    });
}

fn optics(c: &mut Criterion) {
    let (d, o) = spheres();
    let p = Vec3::new(1.7, 1.4, 0.3);
    let opts = MinimizeOptions { grid_resolution: 16, ..Default::default() };
    c.bench_function("minimize_broken_path grid16", |b| b.iter(|| minimize_broken_path(&p, &d, &o, &opts).unwrap()));
}

fn enclosure(c: &mut Criterion) {
    let (d, o) = spheres();
    let opts = MinimizeOptions { grid_resolution: 12, ..Default::default() };
    let probes: Vec<ProbeResult> = fibonacci_shell(&Vec3::zeros(), 2.3, 100)
        .into_iter()
        .map(|p| ProbeResult::new(p, minimize_broken_path(&p, &d, &o, &opts).unwrap().l_value, &o).unwrap())
        .collect();
    let gamma = BoundarySample::new(build_quadrature(&o, 32).unwrap().nodes.iter().map(|n| n.x).collect()).unwrap();
    let mut g = c.benchmark_group("enclosure");
    g.sample_size(10);
    g.bench_function("build 48^3, 100 probes", |b| {
        b.iter(|| build_enclosure(&probes, &gamma, &o, 48, VoxelTest::Center).unwrap())
    });
    g.finish();
}

fn heat(c: &mut Criterion) {
    let sc = RadialScenario { cells: 200, steps: 1000, ..RadialScenario::concentric(2.0, 1.5, 0.0, 1.0) };
    let mut g = c.benchmark_group("heat");
    g.sample_size(10);
    g.bench_function("radial modal 200 cells", |b| b.iter(|| solve_radial(&sc).unwrap()));
    g.finish();
}

criterion_group!(benches, bem, optics, enclosure, heat);
criterion_main!(benches);
