//! One-dimensional quadrature rules shared by the surface meshes and the oracles.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussLegendre;

type Rule = Arc<(Vec<f64>, Vec<f64>)>;

/// Gauss-Legendre nodes and weights on [-1, 1], cached per order.
pub fn gauss_legendre(order: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("quadrature cache poisoned");
    map.entry(order)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(NonZeroUsize::new(order.max(1)).unwrap());
            let mut pairs: Vec<(f64, f64)> =
                rule.nodes().copied().zip(rule.weights().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            Arc::new(pairs.into_iter().unzip())
        })
        .clone()
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(order: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = gauss_legendre(order);
    let (half, mid) = (0.5 * (b - a), 0.5 * (b + a));
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| (mid + half * x, half * w))
        .collect()
}

/// Breakpoints of a composite rule on [0, end] whose panels grow geometrically from `first`
/// until they reach `largest`. A short trailing remainder is merged into the last panel.
pub fn graded_breakpoints(end: f64, first: f64, growth: f64, largest: f64) -> Vec<f64> {
    let mut pts = vec![0.0];
    let mut len = first.min(largest);
    let mut at = 0.0;
    while at + len < end {
        at += len;
        pts.push(at);
        len = (len * growth).min(largest);
    }
    let last = *pts.last().unwrap();
    if pts.len() > 1 && end - last < 0.3 * len {
        pts.pop();
    }
    pts.push(end);
    pts
}

/// Composite Gauss-Legendre rule over consecutive breakpoints.
pub fn composite_gauss_legendre(breaks: &[f64], order: usize) -> Vec<(f64, f64)> {
    breaks
        .windows(2)
        .flat_map(|w| gauss_legendre_on(order, w[0], w[1]))
        .collect()
}

/// `(∫₀¹ e^{-xu} du, ∫₀¹ u e^{-xu} du)`, stable for small `|x|`.
pub fn exp_moments(x: f64) -> (f64, f64) {
    if x.abs() < 0.1 {
        let (mut e1, mut e2, mut term) = (0.0, 0.0, 1.0);
        for n in 0..16 {
            e1 += term / (n as f64 + 1.0);
            e2 += term / (n as f64 + 2.0);
            term *= -x / (n as f64 + 1.0);
        }
        (e1, e2)
    } else {
        let em = (-x).exp();
        (-(-x).exp_m1() / x, (-(-x).exp_m1() - x * em) / (x * x))
    }
}

/// `∫ e^{-s t} v(t) dt` for `v` piecewise linear through `(t_k, v_k)`, integrated exactly.
pub fn exp_weighted_linear(t: &[f64], v: &[f64], s: f64) -> f64 {
    assert_eq!(t.len(), v.len());
    let mut acc = 0.0;
    for k in 1..t.len() {
        let h = t[k] - t[k - 1];
        let (e1, e2) = exp_moments(s * h);
        acc += (-s * t[k - 1]).exp() * h * (v[k - 1] * (e1 - e2) + v[k] * e2);
    }
    acc
}
