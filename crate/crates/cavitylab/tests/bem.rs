use cavitylab::bem::*;
use cavitylab::geometry::{Surface, Vec3};

/// Closed-form `I0` for concentric spheres `r < R`, probe at distance `p > R`, constant flux `g`.
/// Interior solution is `α (I(s) + c K(s))` with `I = sinh(τs)/s`, `K = e^{-τs}/s`.
fn concentric_i0(tau: f64, rho: f64, r: f64, rr: f64, p: f64, g: f64) -> f64 {
    let i = |s: f64| (tau * s).sinh() / s;
    let di = |s: f64| tau * (tau * s).cosh() / s - (tau * s).sinh() / (s * s);
    let k = |s: f64| (-tau * s).exp() / s;
    let dk = |s: f64| -(-tau * s).exp() * (tau / s + 1.0 / (s * s));
    let c = -(di(r) + rho * i(r)) / (dk(r) + rho * k(r));
    let alpha = g / (di(rr) + c * dk(rr));
    2.0 * c * alpha * (-tau * p).exp() / p
}

fn geometry(res: usize) -> BemGeometry {
    let d = Surface::sphere(Vec3::zeros(), 1.5).unwrap();
    let o = Surface::sphere(Vec3::zeros(), 2.0).unwrap();
    BemGeometry::focused(d, o, &Vec3::new(1.5, 0.0, 0.0), &Vec3::new(2.0, 0.0, 0.0), res).unwrap()
}

fn g_const(tau: f64) -> f64 {
    (1.0 - (-tau * tau).exp()) / (tau * tau)
}

#[test]
fn concentric_i0_matches_closed_form() {
    let geom = geometry(6);
    let p = Vec3::new(2.2, 0.0, 0.0);
    for rho in [0.0, 0.5] {
        for tau in [5.0, 15.0] {
            let b = assemble_y(&KernelContext::constant(tau, rho).unwrap(), &geom).unwrap();
            let g0 = g_const(tau);
            let g = vec![g0; geom.mesh_omega.len()];
            let dens = solve_densities(&b, &g).unwrap();
            let exact = concentric_i0(tau, rho, 1.5, 2.0, 2.2, g0);
            let rel = i0_boundary(&geom, tau, &dens, &p) / exact - 1.0;
            assert!(rel.abs() < 1e-5, "rho {rho} tau {tau}: {rel:e}");
            let amps = f_amplitudes(&geom, &b, &p).unwrap();
            let rep = i0_representation(&geom, &b, &dens, &amps, &p);
            assert!((rep.total / exact - 1.0).abs() < 1e-5);
            assert!(amps.recombination_gap < 1e-10);
        }
    }
}

#[test]
fn direct_route_agrees_at_small_tau() {
    let geom = geometry(6);
    let p = Vec3::new(2.2, 0.0, 0.0);
    let tau = 5.0;
    let b = assemble_y(&KernelContext::constant(tau, 0.0).unwrap(), &geom).unwrap();
    let g = vec![g_const(tau); geom.mesh_omega.len()];
    let dens = solve_densities(&b, &g).unwrap();
    let a = i0_boundary(&geom, tau, &dens, &p);
    let d = i0_boundary_direct(&geom, tau, &dens, &g, &p);
    assert!((a / d - 1.0).abs() < 1e-5, "{a:e} vs {d:e}");
}

#[test]
fn radial_symmetry_of_densities() {
    let geom = geometry(6);
    let tau = 10.0;
    let b = assemble_y(&KernelContext::constant(tau, 0.0).unwrap(), &geom).unwrap();
    let g = vec![1.0; geom.mesh_omega.len()];
    let dens = solve_densities(&b, &g).unwrap();
    let spread = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, x| (a.0.min(*x), a.1.max(*x)));
        (hi - lo) / hi.abs()
    };
    assert!(spread(&dens.phi) < 1e-6, "{}", spread(&dens.phi));
    assert!(spread(&dens.psi) < 1e-6, "{}", spread(&dens.psi));
}

#[test]
fn translation_leaves_i0_unchanged() {
    let geom = geometry(5);
    let shift = Vec3::new(0.7, -1.3, 2.1);
    let moved = geom.translated(shift);
    let tau = 8.0;
    let p = Vec3::new(2.2, 0.0, 0.0);
    let ctx = KernelContext::constant(tau, 0.3).unwrap();
    let g = vec![1.0; geom.mesh_omega.len()];
    let a = i0_boundary(&geom, tau, &solve_densities(&assemble_y(&ctx, &geom).unwrap(), &g).unwrap(), &p);
    let b = i0_boundary(&moved, tau, &solve_densities(&assemble_y(&ctx, &moved).unwrap(), &g).unwrap(), &(p + shift));
    assert!((a / b - 1.0).abs() < 1e-10);
}

#[test]
fn neumann_series_converges_to_the_direct_solve() {
    let geom = geometry(5);
    let b = assemble_y(&KernelContext::constant(20.0, 0.0).unwrap(), &geom).unwrap();
    assert!(b.norm_inf() < 0.5);
    let g = vec![1.0; geom.mesh_omega.len()];
    let exact = solve_densities(&b, &g).unwrap();
    let series = neumann_series(&b, &g, 12);
    let scale = exact.psi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let gap = exact.psi.iter().zip(&series.psi).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    assert!(gap / scale < 1e-6);
}

#[test]
fn adjoint_identity_is_exact_off_the_diagonal() {
    let geom = geometry(5);
    let b = assemble_y(&KernelContext::constant(15.0, 0.5).unwrap(), &geom).unwrap();
    assert!(adjoint_identity_gap(&geom, &b) < 1e-10);
}

#[test]
fn operator_norm_decays_like_one_over_tau() {
    let geom = geometry(5);
    let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0]
        .iter()
        .map(|&t: &f64| (t.ln(), assemble_y(&KernelContext::constant(t, 0.0).unwrap(), &geom).unwrap().norm_inf().ln()))
        .collect();
    let slope = cavitylab::indicator::least_squares_slope(&pts);
    assert!((slope + 1.0).abs() < 0.2, "{slope}");
}

#[test]
fn fundamental_solution_rejects_coincident_points() {
    let x = Vec3::new(1.0, 0.0, 0.0);
    assert!(fundamental_solution(&x, &x, 3.0).is_err());
    let y = Vec3::new(1.0, 1.0, 0.0);
    let v = fundamental_solution(&x, &y, 3.0).unwrap();
    assert!((v - (-3.0f64).exp() / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
}

#[test]
fn bad_tau_and_robin_are_rejected() {
    assert!(KernelContext::constant(0.0, 0.0).is_err());
    assert!(KernelContext::constant(f64::INFINITY, 0.0).is_err());
    assert!(KernelContext::constant(1.0, f64::NAN).is_err());
    let ctx = KernelContext::new(1.0, Robin::PerNode(vec![0.1; 3])).unwrap();
    assert!(ctx.rho_values(4).is_err());
}
