//! Measurement side: Laplace-transformed flux `g(y, τ)`, flux admissibility,
//! the leading-term prediction, slope extraction and the CSV export.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{domain, solver, Result};
use crate::geometry::{QuadratureMesh, Surface, Vec3};
use crate::path_optics::{h_pm, nondegenerate, MinimizerSet, PointClass};
use crate::quad;

/// Spatial factor `f̃(y)` of a separable flux.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialProfile {
    Constant { value: f64 },
    /// `value + gradient · y`.
    Affine { value: f64, gradient: [f64; 3] },
}

/// Time factor `φ(t)` of a separable flux.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeProfile {
    Constant { value: f64 },
    /// `a + b t`.
    Linear { a: f64, b: f64 },
    /// Piecewise linear through the samples.
    Samples { t: Vec<f64>, v: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSpec {
    pub spatial: SpatialProfile,
    pub time: TimeProfile,
    /// Horizon `T`.
    pub horizon: f64,
}

impl FluxSpec {
    /// `f ≡ value` on `[0, T]`.
    pub fn constant(value: f64, horizon: f64) -> Self {
        Self { spatial: SpatialProfile::Constant { value: 1.0 }, time: TimeProfile::Constant { value }, horizon }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        match &mut out.spatial {
            SpatialProfile::Constant { value } | SpatialProfile::Affine { value, .. } => *value *= c,
        }
        if let SpatialProfile::Affine { gradient, .. } = &mut out.spatial {
            gradient.iter_mut().for_each(|g| *g *= c);
        }
        out
    }

    pub fn spatial_at(&self, y: &Vec3) -> f64 {
        match &self.spatial {
            SpatialProfile::Constant { value } => *value,
            SpatialProfile::Affine { value, gradient } => value + Vec3::from(*gradient).dot(y),
        }
    }

    pub fn time_at(&self, t: f64) -> f64 {
        match &self.time {
            TimeProfile::Constant { value } => *value,
            TimeProfile::Linear { a, b } => a + b * t,
            TimeProfile::Samples { t: ts, v } => {
                let k = ts.partition_point(|s| *s <= t).clamp(1, ts.len() - 1);
                let (t0, t1) = (ts[k - 1], ts[k]);
                v[k - 1] + (v[k] - v[k - 1]) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// `∫₀ᵀ e^{-τ² t} φ(t) dt`.
    pub fn time_transform(&self, tau: f64) -> f64 {
        let s = tau * tau;
        let t = self.horizon;
        match &self.time {
            TimeProfile::Constant { value } => value * one_minus_exp_over(s, t),
            TimeProfile::Linear { a, b } => {
                let first = one_minus_exp_over(s, t);
                // ∫₀ᵀ t e^{-st} dt = (1 - e^{-sT}(1 + sT)) / s²
                let second = quad::exp_weighted_linear(&[0.0, t], &[0.0, t], s);
                a * first + b * second
            }
            TimeProfile::Samples { t: ts, v } => quad::exp_weighted_linear(ts, v, s),
        }
    }

    pub fn is_zero(&self) -> bool {
        let spatial_zero = match &self.spatial {
            SpatialProfile::Constant { value } => *value == 0.0,
            SpatialProfile::Affine { value, gradient } => *value == 0.0 && gradient.iter().all(|g| *g == 0.0),
        };
        let time_zero = match &self.time {
            TimeProfile::Constant { value } => *value == 0.0,
            TimeProfile::Linear { a, b } => *a == 0.0 && *b == 0.0,
            TimeProfile::Samples { v, .. } => v.iter().all(|x| *x == 0.0),
        };
        spatial_zero || time_zero
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return domain(format!("flux horizon must be positive, got {}", self.horizon));
        }
        if let TimeProfile::Samples { t, v } = &self.time {
            if t.len() < 2 || t.len() != v.len() || t.windows(2).any(|w| w[1] <= w[0]) {
                return domain("flux samples need at least two strictly increasing times");
            }
            if t[0] != 0.0 || (t[t.len() - 1] - self.horizon).abs() > 1e-12 * self.horizon {
                return domain("flux samples must span [0, T]");
            }
        }
        Ok(())
    }
}

/// `(1 - e^{-sT}) / s` without cancellation for small `sT`.
fn one_minus_exp_over(s: f64, t: f64) -> f64 {
    if s == 0.0 {
        t
    } else {
        -(-s * t).exp_m1() / s
    }
}

/// `g(y, τ) = ∫₀ᵀ e^{-τ² t} f(y, t) dt`.
pub fn g_of_tau(flux: &FluxSpec, y: &Vec3, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return domain(format!("tau must be positive, got {tau}"));
    }
    Ok(flux.spatial_at(y) * flux.time_transform(tau))
}

/// `g` at every node of the body mesh.
pub fn g_on_mesh(flux: &FluxSpec, mesh: &QuadratureMesh, tau: f64) -> Result<Vec<f64>> {
    mesh.nodes.iter().map(|n| g_of_tau(flux, &n.x, tau)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxConditionReport {
    pub mu: f64,
    /// `min_y τ^μ g(y, τ)` along the ladder.
    pub lower: Vec<f64>,
    /// `τ^μ ‖g(·, τ)‖` with the Lipschitz seminorm sampled on the mesh.
    pub upper: Vec<f64>,
    pub liminf_estimate: f64,
    pub limsup_estimate: f64,
    pub pass: bool,
}

/// Finite-ladder proxy for `inf_y liminf τ^μ g > 0` and `limsup τ^μ ‖g‖ < ∞`.
///
/// Both sequences are regressed on `log τ` over the ladder; a slope below `-1/2` counts as
/// decay to zero and a slope above `1/2` as blow-up.
pub fn check_flux_condition(flux: &FluxSpec, mesh: &QuadratureMesh, mu: f64, taus: &[f64]) -> Result<FluxConditionReport> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let step = (mesh.len() / 400).max(1);
    let sample: Vec<usize> = (0..mesh.len()).step_by(step).collect();
    for &tau in taus {
        let g = g_on_mesh(flux, mesh, tau)?;
        let scale = tau.powf(mu);
        let min = g.iter().fold(f64::INFINITY, |a, b| a.min(*b));
        let sup = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut lip = 0.0f64;
        for &i in &sample {
            for &j in &sample {
                let d = (mesh.nodes[i].x - mesh.nodes[j].x).norm();
                if d > 0.0 {
                    lip = lip.max((g[i] - g[j]).abs() / d);
                }
            }
        }
        lower.push(scale * min);
        upper.push(scale * (sup + lip));
    }
    let trend = |v: &[f64]| {
        let pts: Vec<(f64, f64)> =
            taus.iter().zip(v).filter(|(_, x)| **x > 0.0).map(|(t, x)| (t.ln(), x.ln())).collect();
        if pts.len() < 2 {
            f64::NAN
        } else {
            least_squares_slope(&pts)
        }
    };
    let liminf_estimate = *lower.last().unwrap_or(&f64::NAN);
    let limsup_estimate = *upper.last().unwrap_or(&f64::NAN);
    let positive = lower.iter().all(|x| *x > 0.0);
    let pass = positive && trend(&lower) > -0.5 && trend(&upper) < 0.5 && limsup_estimate.is_finite();
    Ok(FluxConditionReport { mu, lower, upper, liminf_estimate, limsup_estimate, pass })
}

/// One contribution `C H g(y₀)` to the amplitude `A(τ, p) g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadingContribution {
    pub class: PointClass,
    /// `1 / √det Hess` in orthonormal charts.
    pub coefficient: f64,
    pub h_value: f64,
    pub g_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadingTerm {
    pub tau: f64,
    /// `A(τ, p) g`.
    pub amplitude: f64,
    /// `e^{-τ l} A(τ, p) g / τ`.
    pub prediction: f64,
    pub terms: Vec<LeadingContribution>,
    /// False when no reflection or inward pass-through pair contributes.
    pub informative: bool,
}

pub fn predict_leading_term(set: &MinimizerSet, d: &Surface, flux: &FluxSpec, p: &Vec3, tau: f64) -> Result<LeadingTerm> {
    if let Some(bad) = set.points.iter().find(|c| !nondegenerate(c)) {
        return domain(format!(
            "degenerate minimizer at x0 = {:?}, y0 = {:?} (det Hess = {:.3e}); the leading-term formula does not apply",
            bad.x0.as_slice(),
            bad.y0.as_slice(),
            bad.det_hessian
        ));
    }
    let mut terms = Vec::new();
    for c in &set.points {
        let sign = match c.class {
            PointClass::M1 => 1.0,
            PointClass::M2minus => -1.0,
            _ => continue,
        };
        let nu = d.normal(&c.x0);
        terms.push(LeadingContribution {
            class: c.class,
            coefficient: 1.0 / c.det_hessian.sqrt(),
            h_value: h_pm(&c.x0, &nu, &c.y0, p, sign),
            g_value: g_of_tau(flux, &c.y0, tau)?,
        });
    }
    let amplitude: f64 = terms.iter().map(|t| t.coefficient * t.h_value * t.g_value).sum();
    Ok(LeadingTerm {
        tau,
        amplitude,
        prediction: (-tau * set.l_value).exp() * amplitude / tau,
        informative: !terms.is_empty(),
        terms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSample {
    pub tau: f64,
    pub value: f64,
    pub log_abs_over_tau: f64,
}

impl IndicatorSample {
    pub fn new(tau: f64, value: f64) -> Self {
        Self { tau, value, log_abs_over_tau: value.abs().ln() / tau }
    }
}

/// Least-squares estimate of `l` from `log|I| + k log τ ≈ c - l τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub estimate: f64,
    pub window: [f64; 2],
    /// Root-mean-square residual of the line.
    pub residual: f64,
    pub std_error: f64,
    pub intercept: f64,
    /// Exponent `k` of the algebraic prefactor removed before fitting.
    pub prefactor_exponent: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Upper half of a ladder, widened to at least four samples.
pub fn default_window(taus: &[f64]) -> [f64; 2] {
    let mut t = taus.to_vec();
    t.sort_by(f64::total_cmp);
    let n = t.len();
    if n == 0 {
        return [0.0, 0.0];
    }
    let start = (n / 2).min(n.saturating_sub(4));
    [t[start], t[n - 1]]
}

pub fn slope_fit(samples: &[IndicatorSample], window: Option<[f64; 2]>, prefactor_exponent: f64) -> Result<SlopeFit> {
    let taus: Vec<f64> = samples.iter().map(|s| s.tau).collect();
    let window = window.unwrap_or_else(|| default_window(&taus));
    let mut pts = Vec::new();
    let mut excluded = 0;
    for s in samples.iter().filter(|s| s.tau >= window[0] && s.tau <= window[1]) {
        if s.value == 0.0 || !s.value.is_finite() {
            warn!("excluding indicator sample at tau = {} with value {}", s.tau, s.value);
            excluded += 1;
            continue;
        }
        pts.push((s.tau, s.value.abs().ln() + prefactor_exponent * s.tau.ln()));
    }
    if pts.len() < 4 {
        return solver(format!("slope fit needs at least 4 usable samples in [{}, {}], got {}", window[0], window[1], pts.len()));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = least_squares_slope(&pts);
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let std_error = if pts.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(SlopeFit {
        estimate: -slope,
        window,
        residual: (rss / n).sqrt(),
        std_error,
        intercept,
        prefactor_exponent,
        used: pts.len(),
        excluded,
    })
}

/// Slope of the least-squares line through `(x, y)` points.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub taus: Vec<f64>,
    /// `r(τ) = τ e^{τ l} I0 / A(τ, p) g`.
    pub ratios: Vec<f64>,
    /// Exponent of the fit `|r - 1| ≈ c τ^{-β}`.
    pub beta: f64,
    /// `τ^{μ+1} e^{τ l} |I0|` along the ladder.
    pub normalized: Vec<f64>,
    /// Smallest `C₁` with `C₁⁻¹ ≤ τ^{μ+1} e^{τ l} |I0| ≤ C₁` on the ladder.
    pub c1: f64,
    pub pass: bool,
}

/// `samples` holds `(τ, I0, A(τ, p) g)`.
pub fn asymptotic_residual(samples: &[(f64, f64, f64)], l: f64, mu: f64) -> RatioReport {
    let taus: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ratios: Vec<f64> = samples.iter().map(|&(t, i0, a)| t * (t * l).exp() * i0 / a).collect();
    let dev: Vec<(f64, f64)> = taus
        .iter()
        .zip(&ratios)
        .filter(|(_, r)| (**r - 1.0).abs() > 0.0)
        .map(|(t, r)| (t.ln(), (r - 1.0).abs().ln()))
        .collect();
    let beta = if dev.len() >= 2 { -least_squares_slope(&dev) } else { f64::INFINITY };
    let normalized: Vec<f64> = samples.iter().map(|&(t, i0, _)| t.powf(mu + 1.0) * (t * l).exp() * i0.abs()).collect();
    let c1 = normalized.iter().fold(1.0f64, |c, v| c.max(*v).max(1.0 / v));
    let shrinking = match (dev.first(), dev.last()) {
        (Some(a), Some(b)) => b.1 <= a.1,
        _ => true,
    };
    let pass = ratios.iter().all(|r| r.is_finite()) && beta > 0.0 && shrinking;
    RatioReport { taus, ratios, beta, normalized, c1, pass }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub tau: f64,
    pub gap: f64,
    /// `|I - I0| e^{τ² T} τ^{1/2}`, absent when `τ² T` is past the double-precision range.
    pub scaled: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    /// Slope of `log(scaled)` against `τ`.
    pub growth_rate: f64,
    pub max_scaled: f64,
    pub bounded: bool,
}

/// `samples` holds `(τ, I, I0)`; `I` from time-domain data and `I0` from the elliptic problem.
pub fn remainder_gap(samples: &[(f64, f64, f64)], horizon: f64) -> GapReport {
    let rows: Vec<GapRow> = samples
        .iter()
        .map(|&(tau, i, i0)| {
            let gap = (i - i0).abs();
            let scaled = (tau * tau * horizon <= 700.0).then(|| gap * (tau * tau * horizon).exp() * tau.sqrt());
            GapRow { tau, gap, scaled }
        })
        .collect();
    let pts: Vec<(f64, f64)> =
        rows.iter().filter_map(|r| r.scaled.filter(|s| *s > 0.0).map(|s| (r.tau, s.ln()))).collect();
    let growth_rate = if pts.len() >= 2 { least_squares_slope(&pts) } else { 0.0 };
    let max_scaled = rows.iter().filter_map(|r| r.scaled).fold(0.0, f64::max);
    let bounded = max_scaled.is_finite() && growth_rate <= 0.1;
    GapReport { rows, growth_rate, max_scaled, bounded }
}

/// One line of the indicator CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub tau: f64,
    pub i0: f64,
    pub i_td: Option<f64>,
    pub log_abs_over_tau: f64,
    pub prediction: f64,
    pub ratio: f64,
}

pub const CSV_HEADER: &str = "tau,I0,I_td,log_abs_over_tau,prediction,ratio";

pub fn write_indicator_csv(rows: &[IndicatorRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        let td = r.i_td.map(|v| format!("{v:.17e}")).unwrap_or_default();
        writeln!(out, "{:.17e},{:.17e},{},{:.17e},{:.17e},{:.17e}", r.tau, r.i0, td, r.log_abs_over_tau, r.prediction, r.ratio)?;
    }
    Ok(())
}
