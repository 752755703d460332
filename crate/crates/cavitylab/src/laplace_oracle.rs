//! Laplace-method leading term and a brute-force quadrature reference for
//! `∫_U e^{-τ f(x)} φ(x) dx` with an interior non-degenerate minimizer.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{domain, solver, Result};
use crate::quad;

type Field = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct LaplaceProblem {
    pub phase: Field,
    pub amplitude: Field,
    pub x0: Vec<f64>,
    /// Axis-aligned integration box.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Analytic Hessian of the phase at `x0`, if known.
    pub hessian: Option<DMatrix<f64>>,
}

impl std::fmt::Debug for LaplaceProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LaplaceProblem").field("x0", &self.x0).field("lower", &self.lower).field("upper", &self.upper).finish()
    }
}

impl LaplaceProblem {
    pub fn new(
        phase: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        amplitude: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        x0: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let n = x0.len();
        if n == 0 || lower.len() != n || upper.len() != n {
            return domain("box and minimizer dimensions disagree");
        }
        if (0..n).any(|i| !(lower[i] < x0[i] && x0[i] < upper[i])) {
            return domain("minimizer must lie strictly inside the box");
        }
        Ok(Self { phase: Arc::new(phase), amplitude: Arc::new(amplitude), x0, lower, upper, hessian: None })
    }

    pub fn with_hessian(mut self, h: DMatrix<f64>) -> Self {
        self.hessian = Some(h);
        self
    }

    /// Quadratic phase `f(x) = ½ (x-x0)ᵀ A (x-x0)` on a box with the given half width.
    pub fn quadratic(a: DMatrix<f64>, amplitude: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, half_width: f64) -> Result<Self> {
        let n = a.nrows();
        let a2 = a.clone();
        let phase = move |x: &[f64]| {
            let v = DMatrix::from_column_slice(n, 1, x);
            0.5 * (v.transpose() * &a2 * &v)[(0, 0)]
        };
        Ok(Self::new(phase, amplitude, vec![0.0; n], vec![-half_width; n], vec![half_width; n])?.with_hessian(a))
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Analytic Hessian when supplied, else central differences at step `ε^{1/3}`.
    pub fn hessian_at_min(&self) -> DMatrix<f64> {
        if let Some(h) = &self.hessian {
            return h.clone();
        }
        let n = self.dim();
        let h = f64::EPSILON.cbrt() * self.x0.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        let f = |dx: &[(usize, f64)]| {
            let mut x = self.x0.clone();
            for &(i, s) in dx {
                x[i] += s;
            }
            (self.phase)(&x)
        };
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = if i == j {
                    (f(&[(i, h)]) - 2.0 * f(&[]) + f(&[(i, -h)])) / (h * h)
                } else {
                    (f(&[(i, h), (j, h)]) - f(&[(i, h), (j, -h)]) - f(&[(i, -h), (j, h)]) + f(&[(i, -h), (j, -h)]))
                        / (4.0 * h * h)
                };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// `e^{-τ f(x0)} (2π/τ)^{n/2} φ(x0) / √det Hess f(x0)`.
pub fn leading_term(prob: &LaplaceProblem, tau: f64) -> Result<f64> {
    let h = prob.hessian_at_min();
    let eig = h.clone().symmetric_eigen().eigenvalues;
    if eig.iter().any(|l| *l <= 0.0) {
        return domain("phase Hessian at the minimizer is not positive definite");
    }
    let n = prob.dim() as f64;
    let det: f64 = eig.iter().product();
    Ok((-tau * (prob.phase)(&prob.x0)).exp() * (2.0 * PI / tau).powf(0.5 * n) * (prob.amplitude)(&prob.x0) / det.sqrt())
}

/// One-axis composite rule with panels doubling away from `c`.
fn axis_rule(lo: f64, c: f64, hi: f64, width: f64, order: usize) -> Vec<(f64, f64)> {
    let mut breaks = vec![c];
    let mut s = width;
    while c + s < hi {
        breaks.push(c + s);
        s *= 2.0;
    }
    breaks.push(hi);
    let mut s = width;
    while c - s > lo {
        breaks.insert(0, c - s);
        s *= 2.0;
    }
    breaks.insert(0, lo);
    quad::composite_gauss_legendre(&breaks, order)
}

fn tensor_sum(prob: &LaplaceProblem, tau: f64, rules: &[Vec<(f64, f64)>]) -> f64 {
    let n = rules.len();
    let f0 = (prob.phase)(&prob.x0);
    // Parallel over the first axis, odometer over the rest.
    rules[0]
        .par_iter()
        .map(|&(x0, w0)| {
            let mut idx = vec![0usize; n];
            let mut x = vec![0.0; n];
            x[0] = x0;
            let mut acc = 0.0;
            loop {
                let mut w = w0;
                for k in 1..n {
                    x[k] = rules[k][idx[k]].0;
                    w *= rules[k][idx[k]].1;
                }
                acc += w * (-tau * ((prob.phase)(&x) - f0)).exp() * (prob.amplitude)(&x);
                let mut k = 1;
                loop {
                    if k >= n {
                        return acc;
                    }
                    idx[k] += 1;
                    if idx[k] < rules[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        * (-tau * f0).exp()
}

/// Tensor Gauss-Legendre with dyadic panels around `x0`, raising the order until two
/// successive orders agree to `rtol`.
pub fn numeric_reference(prob: &LaplaceProblem, tau: f64) -> Result<f64> {
    numeric_reference_tol(prob, tau, 1e-8)
}

pub fn numeric_reference_tol(prob: &LaplaceProblem, tau: f64, rtol: f64) -> Result<f64> {
    let h = prob.hessian_at_min();
    let lmax = h.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |a, b| a.max(*b)).max(1e-12);
    let width = 0.5 / (tau * lmax).sqrt();
    let n = prob.dim();
    let mut prev: Option<f64> = None;
    for order in [6usize, 10, 14, 20, 28] {
        let rules: Vec<_> = (0..n).map(|k| axis_rule(prob.lower[k], prob.x0[k], prob.upper[k], width, order)).collect();
        let cost: f64 = rules.iter().map(|r| r.len() as f64).product();
        if cost > 4e8 {
            break;
        }
        let v = tensor_sum(prob, tau, &rules);
        if let Some(p) = prev {
            if (v - p).abs() <= rtol * v.abs() {
                return Ok(v);
            }
        }
        prev = Some(v);
    }
    solver(format!("tensor quadrature did not reach relative tolerance {rtol:.1e} at tau = {tau}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_leading_term_is_exact() {
        let prob = LaplaceProblem::quadratic(DMatrix::identity(2, 2) * 2.0, |_| 1.0, 6.0).unwrap();
        let lt = leading_term(&prob, 4.0).unwrap();
        assert!((lt - PI / 4.0).abs() < 1e-14);
        let num = numeric_reference(&prob, 4.0).unwrap();
        assert!((num - PI / 4.0).abs() < 1e-9);
    }

    #[test]
    fn indefinite_hessian_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let prob = LaplaceProblem::quadratic(h, |_| 1.0, 1.0).unwrap();
        assert!(leading_term(&prob, 1.0).is_err());
    }

    #[test]
    fn finite_difference_hessian_of_cubic_phase() {
        let prob = LaplaceProblem::new(|x| x[0] * x[0] + 3.0 * x[1] * x[1] + x[0] * x[1] + x[0].powi(3), |_| 1.0, vec![0.0, 0.0], vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let h = prob.hessian_at_min();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 6.0]);
        assert!((h - want).abs().max() < 1e-6);
    }
}
