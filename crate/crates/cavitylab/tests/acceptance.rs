//! End-to-end acceptance run over the bundled scenarios. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::time::{Duration, Instant};

use cavitylab::checks::run_checks;
use cavitylab::enclosure::VoxelTest;
use cavitylab::geometry::{Surface, Vec3};
use cavitylab::heat_forward::{radial_remainder, radial_self_convergence, solve_radial, RadialScenario};
use cavitylab::indicator::remainder_gap;
use cavitylab::path_optics::*;
use cavitylab::scenario::{run_enclosure, run_oned, run_sweep, ScenarioConfig};
use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances, fixed here and nowhere else.
const ROD_SLOPE_TOL: f64 = 0.03;
const ROD_BUDGET: Duration = Duration::from_secs(10);
const CONCENTRIC_L_TOL: f64 = 0.05;
const CONCENTRIC_BUDGET: Duration = Duration::from_secs(300);
const MAX_NODES_PER_SURFACE: usize = 3000;
const RATIO_BAND: (f64, f64) = (0.85, 1.15);
const OFFCENTER_L_TOL: f64 = 0.05;
const OFFCENTER_POINT_TOL: f64 = 1e-2;
const GAP_GROWTH_MAX: f64 = 0.1;
const LAW_TOL: f64 = 1e-4;
const RANDOM_SCENARIOS: usize = 24;
const SYMDIFF_MAX: f64 = 0.03;

fn load(text: &str) -> ScenarioConfig {
    toml::from_str(text).expect("bundled scenario parses")
}

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        let line = format!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn criterion_1(rep: &mut Report, cfg: &ScenarioConfig) {
    let mut pass = true;
    let mut parts = Vec::new();
    let start = Instant::now();
    for rho in [0.0, 0.5] {
        let mut c = cfg.clone();
        c.oned.as_mut().unwrap().rho = rho;
        let out = run_oned(&c).expect("rod run");
        let a = c.oned.as_ref().unwrap().a;
        let p = c.oned.as_ref().unwrap().p;
        let want_tilde = 2.0 * a - p;
        let want_i = 2.0 * a;
        let e_tilde = (out.fit_tilde.estimate / want_tilde - 1.0).abs();
        let e_i = (out.fit_i.estimate / want_i - 1.0).abs();
        pass &= e_tilde < ROD_SLOPE_TOL && e_i < ROD_SLOPE_TOL;
        let literal = out.fit_tilde_measured.map(|f| format!("{:.4}", f.estimate)).unwrap_or_else(|| "n/a".into());
        parts.push(format!(
            "rho={rho}: slope {:.5} (want {want_tilde}), I slope {:.5} (want {want_i}), literal boundary pairing {literal}",
            out.fit_tilde.estimate, out.fit_i.estimate
        ));
    }
    let elapsed = start.elapsed() / 2;
    pass &= elapsed < ROD_BUDGET;
    rep.record("1 (rod slopes)", pass, format!("{}; {:.2?} per run", parts.join("; "), elapsed));
}

fn criteria_2_3(rep: &mut Report, cfg: &ScenarioConfig) {
    let start = Instant::now();
    let s = run_sweep(cfg, 0).expect("concentric sweep");
    let elapsed = start.elapsed();
    let err = (s.fit.estimate / 1.2 - 1.0).abs();
    let nodes_ok = s.nodes_cavity <= MAX_NODES_PER_SURFACE && s.nodes_body <= MAX_NODES_PER_SURFACE;
    rep.record(
        "2 (concentric l)",
        err < CONCENTRIC_L_TOL && elapsed < CONCENTRIC_BUDGET && nodes_ok,
        format!(
            "l_fit {:.6} (rel err {:.2e}), {} / {} nodes, {:.1?}",
            s.fit.estimate, err, s.nodes_cavity, s.nodes_body, elapsed
        ),
    );
    let ratio_at = |t: f64| s.rows.iter().find(|r| (r.tau - t).abs() < 1e-9).map(|r| r.ratio);
    let ladder: Vec<Option<f64>> = [20.0, 25.0, 30.0, 35.0].iter().map(|&t| ratio_at(t)).collect();
    let r30 = ratio_at(30.0);
    let in_band = r30.is_some_and(|r| r >= RATIO_BAND.0 && r <= RATIO_BAND.1);
    let devs: Vec<f64> = ladder.iter().map(|r| r.map_or(f64::INFINITY, |r| (r - 1.0).abs())).collect();
    let shrinking = devs.iter().all(|d| d.is_finite()) && devs.windows(2).all(|w| w[1] < w[0]);
    rep.record(
        "3 (leading-term ratio)",
        in_band && shrinking,
        format!("ratio at 20..35: {:?}", ladder.iter().map(|r| r.map(|v| (v * 1e4).round() / 1e4)).collect::<Vec<_>>()),
    );
}

fn criterion_4(rep: &mut Report, cfg: &ScenarioConfig) {
    let s = run_sweep(cfg, 0).expect("offcenter sweep");
    let err = (s.fit.estimate / 3.4 - 1.0).abs();
    let set = &s.minimizers;
    let m1: Vec<&CriticalPoint> = set.points.iter().filter(|c| c.class == PointClass::M1).collect();
    let located = m1.len() == 1
        && set.points.len() == 1
        && (m1[0].x0 - Vec3::new(0.8, 0.0, 0.0)).norm() < OFFCENTER_POINT_TOL
        && (m1[0].y0 - Vec3::new(2.0, 0.0, 0.0)).norm() < OFFCENTER_POINT_TOL;
    let res = cfg.resolve().unwrap();
    let p = Vec3::from(cfg.probes[0]);
    let verdict = m1.first().map(|c| {
        check_condition_421_422(&res.cavity, &res.omega, &p, &c.x0, &c.y0, 1.0 / res.omega.kappa_max()).expect("curvature check")
    });
    rep.record(
        "4 (off-center cavity)",
        err < OFFCENTER_L_TOL && located && verdict == Some(CurvatureVerdict::Eq421),
        format!("l_fit {:.6} (rel err {:.2e}), {} M1 point(s), verdict {:?}", s.fit.estimate, err, m1.len(), verdict),
    );
}

fn criterion_5(rep: &mut Report, cfg: &ScenarioConfig) {
    let res = cfg.resolve().unwrap();
    let sc: RadialScenario = cfg.radial(&res).expect("concentric scenario is radial");
    let run = solve_radial(&sc).expect("radial run");
    let p = Vec3::from(cfg.probes[0]) - res.omega.center();
    let samples: Vec<(f64, f64, f64)> =
        (0..7).map(|k| 3.0 + 0.5 * k as f64).map(|t| (t, radial_remainder(&run, &p, t).unwrap(), 0.0)).collect();
    let gap = remainder_gap(&samples, sc.flux.horizon);
    let conv = radial_self_convergence(&sc).expect("self-convergence");
    let scaled: Vec<String> = gap.rows.iter().map(|r| format!("{:.3e}", r.scaled.unwrap_or(f64::NAN))).collect();
    rep.record(
        "5 (remainder bound)",
        gap.bounded && gap.growth_rate <= GAP_GROWTH_MAX,
        format!(
            "scaled gap {} (growth {:.3}); time solver changes {:?}, observed order {:.2}",
            scaled.join(" "),
            gap.growth_rate,
            conv.changes.iter().map(|c| format!("{c:.2e}")).collect::<Vec<_>>(),
            conv.order
        ),
    );
}

/// Random strictly convex scenarios: ellipsoidal body, smaller ellipsoidal cavity, exterior probe.
fn random_scenarios(seed: u64, count: usize) -> Vec<(Surface, Surface, Vec3)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let mut v = |lo: f64, hi: f64| Vec3::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        let ro = v(1.6, 2.4);
        let axis = v(-1.0, 1.0);
        let rd = v(0.3, 0.7);
        let c = v(-0.4, 0.4);
        let dir = v(-1.0, 1.0);
        let gap = rng.gen_range(0.3..1.5);
        let rot = UnitQuaternion::from_scaled_axis(axis);
        let omega = Surface::ellipsoid(Vec3::zeros(), [ro.x, ro.y, ro.z], rot).unwrap();
        let cavity = Surface::ellipsoid(c, [rd.x, rd.y, rd.z], rot.inverse()).unwrap();
        if !omega.encloses(&cavity) || dir.norm() < 0.2 {
            continue;
        }
        let (y, _, _) = omega.radial_point(&dir.normalize());
        out.push((cavity, omega, y + dir.normalize() * gap));
    }
    out
}

fn criterion_6(rep: &mut Report, configs: &[&ScenarioConfig]) {
    let mut law_max = 0.0f64;
    let mut balanced = true;
    for (d, o, p) in random_scenarios(20240917, RANDOM_SCENARIOS) {
        let set = minimize_broken_path(&p, &d, &o, &MinimizeOptions::default()).expect("minimizer");
        balanced &= set.count(PointClass::M2plus) == set.count(PointClass::M2minus);
        for cp in &set.points {
            let law = match cp.class {
                PointClass::M1 => reflection_residual(cp, &d, &p),
                _ => collinearity_residual(cp, &p),
            };
            law_max = law_max.max(law).max(normal_alignment_residual(cp, &o));
        }
    }
    let mut failed = Vec::new();
    let mut hypotheses = Vec::new();
    let mut total = 0;
    for cfg in configs {
        let report = run_checks(cfg, "all").expect("check suites");
        for e in report.entries {
            // Curvature below 1/l is a property of the scenario, not of the code.
            if e.name.contains("body curvature below 1/l") {
                if !e.pass {
                    hypotheses.push(format!("{}: {}", cfg.name, e.name));
                }
                continue;
            }
            total += 1;
            if !e.pass {
                failed.push(format!("{}: {}", cfg.name, e.name));
            }
        }
    }
    rep.record(
        "6 (property suites)",
        law_max < LAW_TOL && balanced && failed.is_empty(),
        format!(
            "{RANDOM_SCENARIOS} random scenarios, worst law residual {law_max:.2e}, |M2+|=|M2-| {balanced}; {}/{total} suite checks pass{}{}",
            total - failed.len(),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join("; ")) },
            if hypotheses.is_empty() { String::new() } else { format!("; hypothesis not met (informational): {}", hypotheses.join("; ")) }
        ),
    );
}

fn criterion_7(rep: &mut Report, concentric: &ScenarioConfig, offcenter: &ScenarioConfig) {
    let mut violations = Vec::new();
    for cfg in [concentric, offcenter] {
        let out = run_enclosure(cfg, Some(VoxelTest::Conservative)).expect("enclosure");
        violations.push((cfg.name.clone(), out.node_violations, out.pointwise_violations));
    }
    let mut diffs = Vec::new();
    for n in [32, 64, 128] {
        let mut c = concentric.clone();
        c.enclosure.as_mut().unwrap().voxels = n;
        let out = run_enclosure(&c, Some(VoxelTest::Center)).expect("enclosure");
        diffs.push((n, out.comparison.relative_symmetric_difference));
    }
    let sound = violations.iter().all(|v| v.1 == 0 && v.2 == 0);
    let shrinking = diffs.windows(2).all(|w| w[1].1 < w[0].1);
    let fine = diffs.last().unwrap().1 < SYMDIFF_MAX;
    rep.record(
        "7 (enclosure)",
        sound && shrinking && fine,
        format!(
            "conservative node/pointwise violations {:?}; center-test symmetric difference {}",
            violations,
            diffs.iter().map(|(n, d)| format!("{n}^3: {:.2}%", 100.0 * d)).collect::<Vec<_>>().join(", ")
        ),
    );
}

fn main() {
    let concentric = load(include_str!("../../../scenarios/concentric.toml"));
    let offcenter = load(include_str!("../../../scenarios/offcenter.toml"));
    let mut rep = Report { lines: Vec::new() };
    criterion_1(&mut rep, &concentric);
    criteria_2_3(&mut rep, &concentric);
    criterion_4(&mut rep, &offcenter);
    criterion_5(&mut rep, &concentric);
    criterion_6(&mut rep, &[&concentric, &offcenter]);
    criterion_7(&mut rep, &concentric, &offcenter);
    let failed = rep.lines.iter().filter(|l| !l.0).count();
    println!("acceptance: {} of {} criteria pass", rep.lines.len() - failed, rep.lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
