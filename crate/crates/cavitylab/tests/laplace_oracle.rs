use cavitylab::checks::laplace_exponent;
use cavitylab::laplace_oracle::*;
use nalgebra::DMatrix;

#[test]
fn gaussian_is_exact_for_a_quadratic_phase() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let prob = LaplaceProblem::quadratic(a, |_| 1.0, 12.0).unwrap();
    for tau in [1.0, 10.0, 100.0] {
        let lead = leading_term(&prob, tau).unwrap();
        let num = numeric_reference(&prob, tau).unwrap();
        assert!((num / lead - 1.0).abs() < 1e-8, "tau {tau}: {num:e} vs {lead:e}");
    }
}

#[test]
fn finite_difference_hessian_matches_analytic() {
    let prob = LaplaceProblem::new(
        |x| (x[0] - 0.1).powi(2) + 2.0 * (x[1] + 0.2).powi(2) + (x[0] - 0.1) * (x[1] + 0.2),
        |_| 1.0,
        vec![0.1, -0.2],
        vec![-1.0, -1.0],
        vec![1.0, 1.0],
    )
    .unwrap();
    let h = prob.hessian_at_min();
    let want = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 4.0]);
    assert!((h - want).abs().max() < 1e-5);
}

#[test]
fn minimizer_outside_box_is_rejected() {
    assert!(LaplaceProblem::new(|x| x[0] * x[0], |_| 1.0, vec![2.0], vec![-1.0], vec![1.0]).is_err());
}

#[test]
fn indefinite_hessian_is_rejected() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let prob = LaplaceProblem::quadratic(a, |_| 1.0, 1.0).unwrap();
    assert!(leading_term(&prob, 5.0).is_err());
}

#[test]
fn relative_error_decays_at_least_like_tau_to_minus_04() {
    let (beta, devs) = laplace_exponent(&[20.0, 40.0, 80.0, 160.0]).unwrap();
    assert!(beta >= 0.4, "beta {beta}");
    assert!(devs.windows(2).all(|w| w[1] < w[0]));
}
