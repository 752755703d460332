use cavitylab::geometry::{build_quadrature, Surface, Vec3};
use cavitylab::path_optics::*;
use nalgebra::UnitQuaternion;
use proptest::prelude::*;

fn spheres(center_d: Vec3, r: f64) -> (Surface, Surface) {
    (Surface::sphere(center_d, r).unwrap(), Surface::sphere(Vec3::zeros(), 2.0).unwrap())
}

#[test]
fn concentric_minimum_is_the_radial_gap() {
    let (d, o) = spheres(Vec3::zeros(), 1.5);
    let p = Vec3::new(2.2, 0.0, 0.0);
    let set = minimize_broken_path(&p, &d, &o, &MinimizeOptions::default()).unwrap();
    assert!((set.l_value - 1.2).abs() < 1e-9, "{}", set.l_value);
    assert_eq!(set.points.len(), 1);
    assert_eq!(set.points[0].class, PointClass::M1);
    assert!((set.points[0].x0 - Vec3::new(1.5, 0.0, 0.0)).norm() < 1e-6);
    assert!((set.points[0].y0 - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-6);
}

#[test]
fn offcenter_single_m1_pair() {
    let (d, o) = spheres(Vec3::new(0.3, 0.0, 0.0), 0.5);
    let p = Vec3::new(3.0, 0.0, 0.0);
    let set = minimize_broken_path(&p, &d, &o, &MinimizeOptions::default()).unwrap();
    assert!((set.l_value - 3.4).abs() < 1e-9);
    assert_eq!(set.count(PointClass::M1), 1);
    assert_eq!(set.points.len(), 1);
    let cp = &set.points[0];
    assert!((cp.x0 - Vec3::new(0.8, 0.0, 0.0)).norm() < 1e-2);
    assert!((cp.y0 - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-2);
    assert!(nondegenerate(cp));
    let v = check_condition_421_422(&d, &o, &p, &cp.x0, &cp.y0, 2.0).unwrap();
    assert_eq!(v, CurvatureVerdict::Eq421);
}

#[test]
fn broken_length_is_symmetric_in_its_legs() {
    let p = Vec3::new(3.0, 1.0, 0.0);
    let x = Vec3::new(0.5, 0.2, 0.1);
    let y = Vec3::new(-1.0, 2.0, 0.0);
    assert!((broken_length(&p, &x, &y) - ((p - x).norm() + (x - y).norm())).abs() < 1e-15);
}

#[test]
fn curvature_comparison_rejects_small_trial_radius() {
    let (d, o) = spheres(Vec3::zeros(), 1.5);
    let p = Vec3::new(2.2, 0.0, 0.0);
    let x0 = Vec3::new(1.5, 0.0, 0.0);
    let y0 = Vec3::new(2.0, 0.0, 0.0);
    assert!(check_condition_421_422(&d, &o, &p, &x0, &y0, 0.4).is_err());
}

#[test]
fn singleton_detection_on_sphere() {
    let o = Surface::sphere(Vec3::zeros(), 2.0).unwrap();
    let mesh = build_quadrature(&o, 32).unwrap();
    let rep = check_lp_singleton(&mesh, &Vec3::zeros(), 0.05, 0.3);
    // Every node is aligned with the center: one big cluster, not a point.
    assert!(!rep.singleton);
}

/// Body: ellipsoid with radii in [1.6, 2.4], random rotation. Cavity: smaller ellipsoid shifted
/// off center, always strictly inside. Probe: outside the body in a random direction.
fn scenario() -> impl Strategy<Value = (Surface, Surface, Vec3)> {
    (
        prop::array::uniform3(1.6f64..2.4),
        prop::array::uniform3(-1.0f64..1.0),
        prop::array::uniform3(0.3f64..0.7),
        prop::array::uniform3(-0.4f64..0.4),
        prop::array::uniform3(-1.0f64..1.0),
        0.3f64..1.5,
    )
        .prop_filter_map("degenerate direction", |(ro, axis, rd, c, dir, gap)| {
            let axis = Vec3::from(axis);
            let rot = if axis.norm() > 1e-3 { UnitQuaternion::from_scaled_axis(axis) } else { UnitQuaternion::identity() };
            let o = Surface::ellipsoid(Vec3::zeros(), ro, rot).ok()?;
            let d = Surface::ellipsoid(Vec3::from(c), rd, rot.inverse()).ok()?;
            if !o.encloses(&d) {
                return None;
            }
            let dir = Vec3::from(dir);
            if dir.norm() < 0.2 {
                return None;
            }
            let (y, _, _) = o.radial_point(&dir.normalize());
            let p = y + dir.normalize() * gap;
            if o.contains(&p) {
                return None;
            }
            Some((d, o, p))
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn minimizer_laws_hold(s in scenario()) {
        let (d, o, p) = s;
        let set = minimize_broken_path(&p, &d, &o, &MinimizeOptions::default()).unwrap();
        prop_assert!(!set.points.is_empty());
        prop_assert_eq!(set.count(PointClass::M2plus), set.count(PointClass::M2minus));
        for cp in &set.points {
            prop_assert!((cp.length - set.l_value).abs() <= 1e-6 * set.l_value);
            prop_assert!(normal_alignment_residual(cp, &o) < 1e-4);
            let law = match cp.class {
                PointClass::M1 => reflection_residual(cp, &d, &p),
                _ => collinearity_residual(cp, &p),
            };
            prop_assert!(law < 1e-4, "class {:?} residual {}", cp.class, law);
        }
    }

    #[test]
    fn pair_scan_never_beats_the_refined_minimum(s in scenario()) {
        let (d, o, p) = s;
        let set = minimize_broken_path(&p, &d, &o, &MinimizeOptions::default()).unwrap();
        let md = build_quadrature(&d, 28).unwrap();
        let mo = build_quadrature(&o, 28).unwrap();
        let (brute, _, _) = brute_force_min(&p, &md, &mo);
        let slack = 2.0 * (md.max_cell() + mo.max_cell()).powi(2);
        prop_assert!(set.l_value <= brute + 1e-12);
        prop_assert!(brute - set.l_value <= slack.max(1e-3 * set.l_value), "scan {} refined {}", brute, set.l_value);
    }
}
