use cavitylab::geometry::{build_quadrature, Surface, Vec3};
use cavitylab::indicator::*;
use cavitylab::path_optics::{minimize_broken_path, MinimizeOptions};

#[test]
fn slope_fit_recovers_an_exact_exponential() {
    let l = 1.2;
    let samples: Vec<IndicatorSample> =
        (0..8).map(|k| 15.0 + 3.0 * k as f64).map(|t: f64| IndicatorSample::new(t, 4.0 * t.powi(-3) * (-t * l).exp())).collect();
    let fit = slope_fit(&samples, None, 3.0).unwrap();
    assert!((fit.estimate - l).abs() < 1e-10);
    assert!(fit.residual < 1e-10);
}

#[test]
fn slope_fit_window_excludes_samples() {
    let samples: Vec<IndicatorSample> = (1..=10).map(|t| IndicatorSample::new(t as f64, (-(t as f64)).exp())).collect();
    let fit = slope_fit(&samples, Some([5.0, 8.0]), 0.0).unwrap();
    assert_eq!(fit.used, 4);
    assert_eq!(fit.excluded, 0);
    assert!((fit.estimate - 1.0).abs() < 1e-12);
}

#[test]
fn zero_values_are_excluded_then_rejected() {
    let samples: Vec<IndicatorSample> = (1..=5).map(|t| IndicatorSample::new(t as f64, 0.0)).collect();
    assert!(slope_fit(&samples, None, 0.0).is_err());
}

#[test]
fn constant_flux_transform() {
    let f = FluxSpec::constant(1.0, 1.0);
    for tau in [2.0f64, 10.0] {
        let g = g_of_tau(&f, &Vec3::zeros(), tau).unwrap();
        assert!((g - (1.0 - (-tau * tau).exp()) / (tau * tau)).abs() < 1e-12);
    }
    assert!(f.scaled(2.0).time_transform(3.0) * 0.5 - f.time_transform(3.0) < 1e-15);
}

#[test]
fn flux_condition_passes_for_constant_flux() {
    let o = Surface::sphere(Vec3::zeros(), 2.0).unwrap();
    let mesh = build_quadrature(&o, 8).unwrap();
    let rep = check_flux_condition(&FluxSpec::constant(1.0, 1.0), &mesh, 2.0, &[10.0, 20.0, 40.0]).unwrap();
    assert!(rep.pass);
}

#[test]
fn leading_term_for_concentric_spheres() {
    let d = Surface::sphere(Vec3::zeros(), 1.5).unwrap();
    let o = Surface::sphere(Vec3::zeros(), 2.0).unwrap();
    let p = Vec3::new(2.2, 0.0, 0.0);
    let set = minimize_broken_path(&p, &d, &o, &MinimizeOptions::default()).unwrap();
    let lt = predict_leading_term(&set, &d, &FluxSpec::constant(1.0, 1.0), &p, 30.0).unwrap();
    assert!(lt.informative);
    assert_eq!(lt.terms.len(), 1);
    assert!(lt.amplitude > 0.0);
    assert!((lt.prediction - (-30.0f64 * 1.2).exp() * lt.amplitude / 30.0).abs() <= 1e-12 * lt.prediction);
}

#[test]
fn csv_header_is_exact() {
    let mut buf = Vec::new();
    write_indicator_csv(&[], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().next().unwrap(), "tau,I0,I_td,log_abs_over_tau,prediction,ratio");
}

#[test]
fn non_finite_samples_are_counted_as_excluded() {
    let mut samples: Vec<IndicatorSample> = (1..=6).map(|t| IndicatorSample::new(t as f64, (-(t as f64)).exp())).collect();
    samples[2] = IndicatorSample::new(3.0, f64::NAN);
    let fit = slope_fit(&samples, Some([1.0, 6.0]), 0.0).unwrap();
    assert_eq!((fit.used, fit.excluded), (5, 1));
}
