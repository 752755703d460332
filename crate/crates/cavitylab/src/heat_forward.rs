//! Time-domain data: the spherically symmetric shell problem and the rod problem,
//! both discretized by vertex-centred finite volumes with lumped mass.
//!
//! The semi-discrete system is `M u' = -K u + ℓ φ(t)` with `ℓ` the load per unit flux.
//! Two time integrators are offered: Crank-Nicolson, and a modal scheme that integrates
//! each eigenmode of `M⁻¹K` exactly for piecewise-linear `φ`. The modal scheme is what
//! makes the `e^{τ²T}`-amplified remainder measurable at all.

use std::f64::consts::PI;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, solver, Result};
use crate::geometry::{QuadratureMesh, Vec3};
use crate::indicator::FluxSpec;
use crate::quad;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    CrankNicolson,
    Modal,
}

/// Tridiagonal finite-volume system.
#[derive(Clone, Debug)]
pub struct FvSystem {
    pub nodes: Vec<f64>,
    /// Lumped mass per node.
    pub mass: Vec<f64>,
    pub diag: Vec<f64>,
    /// `K[i][i+1] = K[i+1][i]`.
    pub off: Vec<f64>,
    /// Load per unit flux.
    pub load: Vec<f64>,
}

impl FvSystem {
    /// `(1/w(s)) (w(s) u_s)_s` on `[lo, hi]` with `w(s) = s^power`. `robin_lo` enters `K[0][0]` as
    /// `w(lo) robin_lo`; the load sits on the node `load_at`.
    fn build(lo: f64, hi: f64, cells: usize, power: i32, robin_lo: f64, robin_hi: f64, load_at: usize) -> Self {
        let n = cells + 1;
        let h = (hi - lo) / cells as f64;
        let nodes: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        let prim = |s: f64| s.powi(power + 1) / (power + 1) as f64;
        let mass: Vec<f64> = (0..n)
            .map(|i| {
                let a = if i == 0 { lo } else { nodes[i] - 0.5 * h };
                let b = if i == cells { hi } else { nodes[i] + 0.5 * h };
                prim(b) - prim(a)
            })
            .collect();
        let face: Vec<f64> = (0..cells).map(|i| (nodes[i] + 0.5 * h).powi(power) / h).collect();
        let mut diag = vec![0.0; n];
        for i in 0..cells {
            diag[i] += face[i];
            diag[i + 1] += face[i];
        }
        diag[0] += lo.powi(power) * robin_lo;
        diag[cells] += hi.powi(power) * robin_hi;
        let off = face.iter().map(|f| -f).collect();
        let mut load = vec![0.0; n];
        load[load_at] = if load_at == 0 { lo.powi(power) } else { hi.powi(power) };
        Self { nodes, mass, diag, off, load }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Solve `(K + s M) w = rhs` by the Thomas algorithm.
    pub fn shifted_solve(&self, s: f64, rhs: &[f64]) -> Vec<f64> {
        let diag: Vec<f64> = self.diag.iter().zip(&self.mass).map(|(k, m)| k + s * m).collect();
        thomas(&self.off, &diag, &self.off, rhs)
    }

    fn apply_k(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * u[i];
                if i > 0 {
                    v += self.off[i - 1] * u[i - 1];
                }
                if i + 1 < n {
                    v += self.off[i] * u[i + 1];
                }
                v
            })
            .collect()
    }
}

/// Tridiagonal solve with sub-diagonal `a`, diagonal `b`, super-diagonal `c`.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = if n > 1 { c[0] / b[0] } else { 0.0 };
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i - 1] * cp[i - 1];
        if i + 1 < n {
            cp[i] = c[i] / m;
        }
        dp[i] = (d[i] - a[i - 1] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Samples of `φ` on a time grid, linear in between.
fn flux_on_grid(flux: &FluxSpec, times: &[f64]) -> Vec<f64> {
    times.iter().map(|t| flux.time_at(*t)).collect()
}

/// Result of a time integration: traces at the two ends, the final state, and for the modal
/// scheme the data needed for exact Laplace transforms at any node.
#[derive(Clone, Debug)]
pub struct FvRun {
    pub times: Vec<f64>,
    /// `u` at node 0.
    pub first: Vec<f64>,
    /// `u` at the last node.
    pub last: Vec<f64>,
    pub final_state: Vec<f64>,
    modal: Option<ModalData>,
}

#[derive(Clone, Debug)]
struct ModalData {
    /// `u = V c`, `V = M^{-1/2} Q`, columns are modes.
    v: Mat<f64>,
    lambda: Vec<f64>,
    beta: Vec<f64>,
    c_final: Vec<f64>,
}

fn uniform_grid(t: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| t * k as f64 / steps as f64).collect()
}

/// Quadratically graded grid, fine near `t = 0` where the traces behave like `√t`.
fn graded_grid(t: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| t * (k as f64 / steps as f64).powi(2)).collect()
}

fn run_crank_nicolson(sys: &FvSystem, flux: &FluxSpec, steps: usize) -> FvRun {
    let times = uniform_grid(flux.horizon, steps);
    let phi = flux_on_grid(flux, &times);
    let n = sys.len();
    let dt = flux.horizon / steps as f64;
    let lhs_diag: Vec<f64> = sys.diag.iter().zip(&sys.mass).map(|(k, m)| m + 0.5 * dt * k).collect();
    let lhs_off: Vec<f64> = sys.off.iter().map(|k| 0.5 * dt * k).collect();
    // Constant-coefficient Thomas factorization, reused every step.
    let mut cp = vec![0.0; n];
    let mut denom = vec![0.0; n];
    denom[0] = lhs_diag[0];
    cp[0] = if n > 1 { lhs_off[0] / denom[0] } else { 0.0 };
    for i in 1..n {
        denom[i] = lhs_diag[i] - lhs_off[i - 1] * cp[i - 1];
        if i + 1 < n {
            cp[i] = lhs_off[i] / denom[i];
        }
    }
    let mut u = vec![0.0; n];
    let mut first = vec![0.0];
    let mut last = vec![0.0];
    let mut rhs = vec![0.0; n];
    for k in 1..=steps {
        let ku = sys.apply_k(&u);
        let f = 0.5 * dt * (phi[k - 1] + phi[k]);
        for i in 0..n {
            rhs[i] = sys.mass[i] * u[i] - 0.5 * dt * ku[i] + f * sys.load[i];
        }
        rhs[0] /= denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - lhs_off[i - 1] * rhs[i - 1]) / denom[i];
        }
        u[n - 1] = rhs[n - 1];
        for i in (0..n - 1).rev() {
            u[i] = rhs[i] - cp[i] * u[i + 1];
        }
        first.push(u[0]);
        last.push(u[n - 1]);
    }
    FvRun { times, first, last, final_state: u, modal: None }
}

fn run_modal(sys: &FvSystem, flux: &FluxSpec, steps: usize) -> Result<FvRun> {
    let n = sys.len();
    let isq: Vec<f64> = sys.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let a = Mat::from_fn(n, n, |i, j| {
        let k = if i == j {
            sys.diag[i]
        } else if i + 1 == j {
            sys.off[i]
        } else if j + 1 == i {
            sys.off[j]
        } else {
            0.0
        };
        k * isq[i] * isq[j]
    });
    let eig = a.self_adjoint_eigen(Side::Lower).map_err(|e| crate::Error::Solver(format!("eigendecomposition failed: {e:?}")))?;
    let q = eig.U();
    let lambda: Vec<f64> = (0..n).map(|k| eig.S()[k]).collect();
    let v = Mat::from_fn(n, n, |i, k| isq[i] * q[(i, k)]);
    let beta: Vec<f64> = (0..n).map(|k| (0..n).map(|i| q[(i, k)] * isq[i] * sys.load[i]).sum()).collect();
    let times = graded_grid(flux.horizon, steps);
    let phi = flux_on_grid(flux, &times);
    let mut c = vec![0.0; n];
    let mut first = vec![0.0];
    let mut last = vec![0.0];
    for k in 1..times.len() {
        let h = times[k] - times[k - 1];
        for m in 0..n {
            // c(t+h) = e^{-λh} c(t) + β h ∫₀¹ e^{-λh(1-u)} φ(t + uh) du
            let (e1, e2) = quad::exp_moments(lambda[m] * h);
            let forced = h * (phi[k] * e1 - (phi[k] - phi[k - 1]) * e2);
            c[m] = (-lambda[m] * h).exp() * c[m] + beta[m] * forced;
        }
        first.push((0..n).map(|m| v[(0, m)] * c[m]).sum());
        last.push((0..n).map(|m| v[(n - 1, m)] * c[m]).sum());
    }
    let final_state = (0..n).map(|i| (0..n).map(|m| v[(i, m)] * c[m]).sum()).collect();
    Ok(FvRun { times, first, last, final_state, modal: Some(ModalData { v, lambda, beta, c_final: c }) })
}

impl FvRun {
    /// `∫₀ᵀ e^{-τ² t} u(node, t) dt`. Exact in time for the modal scheme; otherwise
    /// product integration of the trace, available only at the two ends.
    pub fn laplace_at(&self, node: usize, tau: f64, flux: &FluxSpec) -> Result<f64> {
        let s = tau * tau;
        if let Some(m) = &self.modal {
            let t = flux.horizon;
            let big_phi = flux.time_transform(tau);
            let decay = (-s * t).exp();
            return Ok((0..m.lambda.len())
                .map(|k| m.v[(node, k)] * (m.beta[k] * big_phi - m.c_final[k] * decay) / (s + m.lambda[k]))
                .sum());
        }
        let n = self.final_state.len();
        let trace = if node == 0 {
            &self.first
        } else if node + 1 == n {
            &self.last
        } else {
            return domain("Crank-Nicolson runs keep traces only at the two ends");
        };
        Ok(quad::exp_weighted_linear(&self.times, trace, s))
    }
}

impl FvRun {
    /// `Σ_k V[node][k] c_k(T) / (τ² + λ_k)`, so that the Laplace transform equals the stationary
    /// solution minus `e^{-τ² T}` times this tail. Modal runs only.
    pub fn laplace_tail(&self, node: usize, tau: f64) -> Result<f64> {
        let Some(m) = &self.modal else {
            return domain("the Laplace tail needs a modal run");
        };
        let s = tau * tau;
        Ok((0..m.lambda.len()).map(|k| m.v[(node, k)] * m.c_final[k] / (s + m.lambda[k])).sum())
    }
}

fn check_steps(cells: usize, steps: usize, horizon: f64, h: f64, scheme: TimeScheme) -> Result<()> {
    if cells < 4 || steps < 1 {
        return config(format!("need at least 4 cells and 1 step, got {cells} and {steps}"));
    }
    if !(horizon > 0.0) {
        return config(format!("horizon must be positive, got {horizon}"));
    }
    // Crank-Nicolson damps grid-scale modes poorly once Δt ≫ Δx²; cap the ratio.
    if scheme == TimeScheme::CrankNicolson && horizon / steps as f64 > CN_STEP_FACTOR * h * h {
        return config(format!(
            "time step {:.3e} exceeds {CN_STEP_FACTOR} dx^2 = {:.3e}",
            horizon / steps as f64,
            CN_STEP_FACTOR * h * h
        ));
    }
    Ok(())
}

/// Largest `Δt / Δx²` accepted for Crank-Nicolson.
pub const CN_STEP_FACTOR: f64 = 25.0;

/// Time samples of `u` at the measured boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "t,u")?;
        for (t, u) in self.times.iter().zip(&self.values) {
            writeln!(out, "{t:.17e},{u:.17e}")?;
        }
        Ok(())
    }
}

/// `w = ∫₀ᵀ e^{-τ² t} u(t) dt` of a trace, exact for piecewise-linear data.
pub fn laplace_trace(trace: &BoundaryTrace, tau: f64) -> f64 {
    quad::exp_weighted_linear(&trace.times, &trace.values, tau * tau)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialScenario {
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub rho: f64,
    /// Time profile of the outward flux `∂u/∂r` at the outer sphere, with horizon `T`.
    pub flux: FluxSpec,
    pub cells: usize,
    pub steps: usize,
    pub scheme: TimeScheme,
}

impl RadialScenario {
    pub fn concentric(outer_radius: f64, inner_radius: f64, rho: f64, horizon: f64) -> Self {
        Self {
            outer_radius,
            inner_radius,
            rho,
            flux: FluxSpec::constant(1.0, horizon),
            cells: 400,
            steps: 4000,
            scheme: TimeScheme::Modal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.inner_radius && self.inner_radius < self.outer_radius) {
            return config(format!("need 0 < r < R, got r = {}, R = {}", self.inner_radius, self.outer_radius));
        }
        if !self.rho.is_finite() {
            return config("Robin coefficient must be finite");
        }
        self.flux.validate()?;
        let h = (self.outer_radius - self.inner_radius) / self.cells as f64;
        check_steps(self.cells, self.steps, self.flux.horizon, h, self.scheme)
    }

    /// Finite-volume system in `s ∈ [r, R]` with weight `s²`. The cavity condition is
    /// `u_s + ρ u = 0` at `s = r`, the normal pointing away from the cavity.
    pub fn system(&self) -> FvSystem {
        FvSystem::build(self.inner_radius, self.outer_radius, self.cells, 2, -self.rho, 0.0, self.cells)
    }
}

/// A solved shell problem.
#[derive(Clone, Debug)]
pub struct RadialRun {
    pub scenario: RadialScenario,
    pub system: FvSystem,
    pub run: FvRun,
}

impl RadialRun {
    pub fn trace(&self) -> BoundaryTrace {
        BoundaryTrace { times: self.run.times.clone(), values: self.run.last.clone() }
    }

    pub fn inner_trace(&self) -> BoundaryTrace {
        BoundaryTrace { times: self.run.times.clone(), values: self.run.first.clone() }
    }
}

pub fn solve_radial(sc: &RadialScenario) -> Result<RadialRun> {
    sc.validate()?;
    let system = sc.system();
    let run = match sc.scheme {
        TimeScheme::CrankNicolson => run_crank_nicolson(&system, &sc.flux, sc.steps),
        TimeScheme::Modal => run_modal(&system, &sc.flux, sc.steps)?,
    };
    if !run.final_state.iter().all(|v| v.is_finite()) {
        return solver("shell solution is not finite");
    }
    Ok(RadialRun { scenario: sc.clone(), system, run })
}

/// Mean of `E_τ(·, p)` over the sphere of radius `s` about the origin, `|p| > s`, and its derivative.
pub fn sphere_mean_e(s: f64, p_dist: f64, tau: f64) -> (f64, f64) {
    let c = 1.0 / (2.0 * PI * tau * p_dist);
    // sinh(τs) e^{-τP} written without overflow
    let sh = 0.5 * ((-tau * (p_dist - s)).exp() - (-tau * (p_dist + s)).exp());
    let ch = 0.5 * ((-tau * (p_dist - s)).exp() + (-tau * (p_dist + s)).exp());
    let m = c * sh / s;
    let dm = c * (tau * ch / s - sh / (s * s));
    (m, dm)
}

/// `∫_{∂Ω}∫₀ᵀ (∂_ν v u - f v) dt dS` with `v = e^{-τ² t} E_τ(·, p)` from the outer trace.
///
/// Uses the body mesh when given, otherwise exact sphere means. The two terms cancel to
/// `e^{-τ l}` relative size.
pub fn indicator_time_domain_3d(
    trace: &BoundaryTrace,
    flux: &FluxSpec,
    p: &Vec3,
    tau: f64,
    omega_mesh: Option<&QuadratureMesh>,
    outer_radius: f64,
) -> Result<f64> {
    guard_overflow(tau, flux.horizon)?;
    let w = laplace_trace(trace, tau);
    match omega_mesh {
        Some(mesh) => Ok(mesh
            .nodes
            .iter()
            .map(|n| {
                let r = p - n.x;
                let d = r.norm();
                let e = (-tau * d).exp() / (2.0 * PI * d);
                let de = e * n.normal.dot(&r) / d * (tau + 1.0 / d);
                let g = flux.spatial_at(&n.x) * flux.time_transform(tau);
                n.weight * (de * w - e * g)
            })
            .sum()),
        None => {
            let (m, dm) = sphere_mean_e(outer_radius, p.norm(), tau);
            let g = flux.time_transform(tau) * flux.spatial_at(&Vec3::zeros());
            Ok(4.0 * PI * outer_radius * outer_radius * (dm * w - m * g))
        }
    }
}

fn guard_overflow(tau: f64, horizon: f64) -> Result<()> {
    if tau * tau * horizon > 700.0 {
        return domain(format!("tau^2 T = {:.1} is past the double-precision range", tau * tau * horizon));
    }
    Ok(())
}

/// The same indicator rewritten by Green's identity over the shell:
/// `∫_{∂D} (∂_ν + ρ) E · W dS - e^{-τ² T} ∫ E u(T) dV`, free of cancellation.
pub fn indicator_radial_cavity(run: &RadialRun, p: &Vec3, tau: f64) -> Result<f64> {
    let sc = &run.scenario;
    let pd = p.norm();
    if pd <= sc.outer_radius {
        return domain("probe must lie outside the body");
    }
    let r = sc.inner_radius;
    let w = run.run.laplace_at(0, tau, &sc.flux)?;
    let (m, dm) = sphere_mean_e(r, pd, tau);
    let boundary = 4.0 * PI * r * r * (dm + sc.rho * m) * w;
    let volume: f64 = run
        .system
        .nodes
        .iter()
        .zip(&run.system.mass)
        .zip(&run.run.final_state)
        .map(|((s, mass), u)| sphere_mean_e(*s, pd, tau).0 * mass * u)
        .sum::<f64>()
        * 4.0
        * PI;
    Ok(boundary - (-tau * tau * sc.flux.horizon).exp() * volume)
}

/// `I - I0` for a modal run, both on the same grid, assembled from the final state alone so that
/// the `e^{-τ² T}`-small difference is not lost to cancellation.
pub fn radial_remainder(run: &RadialRun, p: &Vec3, tau: f64) -> Result<f64> {
    let sc = &run.scenario;
    let pd = p.norm();
    if pd <= sc.outer_radius {
        return domain("probe must lie outside the body");
    }
    let r = sc.inner_radius;
    let tail = run.run.laplace_tail(0, tau)?;
    let (m, dm) = sphere_mean_e(r, pd, tau);
    let volume: f64 = run
        .system
        .nodes
        .iter()
        .zip(&run.system.mass)
        .zip(&run.run.final_state)
        .map(|((s, mass), u)| sphere_mean_e(*s, pd, tau).0 * mass * u)
        .sum::<f64>();
    Ok(-(-tau * tau * sc.flux.horizon).exp() * 4.0 * PI * (r * r * (dm + sc.rho * m) * tail + volume))
}

/// `I0` from the stationary problem `(K + τ² M) w0 = ℓ g` on the same grid, through the cavity.
pub fn radial_i0(sc: &RadialScenario, p: &Vec3, tau: f64) -> Result<f64> {
    sc.validate()?;
    let sys = sc.system();
    let g = sc.flux.time_transform(tau);
    let rhs: Vec<f64> = sys.load.iter().map(|l| l * g).collect();
    let w0 = sys.shifted_solve(tau * tau, &rhs);
    let (m, dm) = sphere_mean_e(sc.inner_radius, p.norm(), tau);
    Ok(4.0 * PI * sc.inner_radius.powi(2) * (dm + sc.rho * m) * w0[0])
}

/// Stationary solution `w0` on the shell grid.
pub fn radial_w0(sc: &RadialScenario, tau: f64) -> Vec<f64> {
    let sys = sc.system();
    let g = sc.flux.time_transform(tau);
    let rhs: Vec<f64> = sys.load.iter().map(|l| l * g).collect();
    sys.shifted_solve(tau * tau, &rhs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfConvergence {
    /// Largest relative change of the outer trace between successive refinements.
    pub changes: Vec<f64>,
    pub order: f64,
}

/// Halve `Δr` and `Δt` twice and compare the outer traces on the coarse time grid.
pub fn radial_self_convergence(sc: &RadialScenario) -> Result<SelfConvergence> {
    let mut traces = Vec::new();
    for level in 0..3 {
        let mut s = sc.clone();
        s.cells = sc.cells << level;
        s.steps = sc.steps << level;
        let run = solve_radial(&s)?;
        let stride = 1 << level;
        traces.push(run.run.last.iter().step_by(stride).copied().collect::<Vec<f64>>());
    }
    Ok(convergence_summary(&traces))
}

fn convergence_summary(traces: &[Vec<f64>]) -> SelfConvergence {
    let diff = |a: &[f64], b: &[f64]| {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    };
    let changes: Vec<f64> = traces.windows(2).map(|w| diff(&w[0], &w[1])).collect();
    let order = if changes.len() == 2 { (changes[0] / changes[1]).log2() } else { f64::NAN };
    SelfConvergence { changes, order }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rod1DScenario {
    /// Cavity position.
    pub a: f64,
    pub rho: f64,
    /// Prescribed `u_x(0, t)`, with horizon `T`.
    pub flux: FluxSpec,
    pub cells: usize,
    pub steps: usize,
    pub scheme: TimeScheme,
}

impl Rod1DScenario {
    /// Unit heat input at `x = 0`, i.e. `u_x(0, t) = -1`.
    pub fn unit_flux(a: f64, rho: f64, horizon: f64) -> Self {
        Self { a, rho, flux: FluxSpec::constant(-1.0, horizon), cells: 600, steps: 100_000, scheme: TimeScheme::CrankNicolson }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return config(format!("cavity position must be positive, got {}", self.a));
        }
        if !self.rho.is_finite() {
            return config("Robin coefficient must be finite");
        }
        self.flux.validate()?;
        check_steps(self.cells, self.steps, self.flux.horizon, self.a / self.cells as f64, self.scheme)
    }

    /// `u_t = u_xx` on `[0, a]` with `u_x(0) = φ(t)` and `u_x(a) + ρ u(a) = 0`.
    pub fn system(&self) -> FvSystem {
        let mut sys = FvSystem::build(0.0, self.a, self.cells, 0, 0.0, self.rho, 0);
        sys.load[0] = -1.0;
        sys
    }
}

#[derive(Clone, Debug)]
pub struct RodRun {
    pub scenario: Rod1DScenario,
    pub system: FvSystem,
    pub run: FvRun,
}

impl RodRun {
    /// `(t, u(0, t), u_x(0, t))`.
    pub fn traces(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let ux = self.run.times.iter().map(|t| self.scenario.flux.time_at(*t)).collect();
        (self.run.times.clone(), self.run.first.clone(), ux)
    }
}

pub fn solve_rod(sc: &Rod1DScenario) -> Result<RodRun> {
    sc.validate()?;
    let system = sc.system();
    let run = match sc.scheme {
        TimeScheme::CrankNicolson => run_crank_nicolson(&system, &sc.flux, sc.steps),
        TimeScheme::Modal => run_modal(&system, &sc.flux, sc.steps)?,
    };
    if !run.final_state.iter().all(|v| v.is_finite()) {
        return solver("rod solution is not finite");
    }
    Ok(RodRun { scenario: sc.clone(), system, run })
}

/// The rod indicator two ways. `measured` pairs the boundary traces at `x = 0` literally;
/// `cavity` is the same quantity after Green's identity on `[0, a]`, and stays accurate when
/// the literal pairing has cancelled below rounding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RodIndicator {
    pub tau: f64,
    /// `Ĩ(τ, p)`.
    pub tilde_measured: f64,
    pub tilde_cavity: f64,
    /// `I(τ) = τ e^{-τ p} Ĩ(τ, p)`.
    pub i_measured: f64,
    pub i_cavity: f64,
}

pub fn indicator_1d(run: &RodRun, p: f64, tau: f64) -> Result<RodIndicator> {
    if !(p < 0.0) {
        return domain(format!("probe must sit at p < 0, got {p}"));
    }
    let sc = &run.scenario;
    let flux = &sc.flux;
    let w0 = run.run.laplace_at(0, tau, flux)?;
    let big_g = flux.time_transform(tau);
    let ep = (tau * p).exp();
    // v = e^{-τ²t} e^{-τ(x-p)}/τ, so v(0) = e^{-τ²t} e^{τp}/τ and v_x(0) = -τ v(0).
    let tilde_measured = ep * w0 + ep / tau * big_g;
    let n = run.system.len();
    let wa = run.run.laplace_at(n - 1, tau, flux)?;
    let a = sc.a;
    let volume: f64 = run
        .system
        .nodes
        .iter()
        .zip(&run.system.mass)
        .zip(&run.run.final_state)
        .map(|((x, m), u)| (-tau * (x - p)).exp() / tau * m * u)
        .sum();
    let tilde_cavity =
        (tau - sc.rho) * (-tau * (a - p)).exp() / tau * wa - (-tau * tau * flux.horizon).exp() * volume;
    let back = tau * (-tau * p).exp();
    Ok(RodIndicator { tau, tilde_measured, tilde_cavity, i_measured: back * tilde_measured, i_cavity: back * tilde_cavity })
}

/// Rod traces at `x = 0` under two successive halvings of `Δx` and `Δt`.
pub fn rod_self_convergence(sc: &Rod1DScenario) -> Result<SelfConvergence> {
    let mut traces = Vec::new();
    for level in 0..3 {
        let mut s = sc.clone();
        s.cells = sc.cells << level;
        s.steps = sc.steps << level;
        let run = solve_rod(&s)?;
        traces.push(run.run.first.iter().step_by(1 << level).copied().collect::<Vec<f64>>());
    }
    Ok(convergence_summary(&traces))
}

/// Samples of `τ² ∫₀ᵀ u_x(0,t) e^{-τ² t} dt`; constant flux tends to a constant.
pub fn flux_condition_proxy(flux: &FluxSpec, taus: &[f64]) -> Vec<f64> {
    taus.iter().map(|t| t * t * flux.time_transform(*t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_solution() {
        let a = [1.0, -2.0];
        let b = [4.0, 5.0, 6.0];
        let c = [0.5, 1.5];
        let x = thomas(&a, &b, &c, &[1.0, 2.0, 3.0]);
        let r = [4.0 * x[0] + 0.5 * x[1], 1.0 * x[0] + 5.0 * x[1] + 1.5 * x[2], -2.0 * x[1] + 6.0 * x[2]];
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn shell_mass_is_exact_volume() {
        let sc = RadialScenario::concentric(2.0, 1.5, 0.0, 1.0);
        let m: f64 = sc.system().mass.iter().sum();
        assert!((m - (8.0 - 3.375) / 3.0).abs() < 1e-11, "{m}");
    }

    #[test]
    fn sphere_mean_matches_closed_form() {
        let (m, dm) = sphere_mean_e(1.5, 2.2, 3.0);
        let want = (-3.0f64 * 2.2).exp() * (4.5f64).sinh() / (2.0 * PI * 3.0 * 2.2 * 1.5);
        assert!((m - want).abs() < 1e-15 * want.abs().max(1.0));
        let h = 1e-6;
        let fd = (sphere_mean_e(1.5 + h, 2.2, 3.0).0 - sphere_mean_e(1.5 - h, 2.2, 3.0).0) / (2.0 * h);
        assert!((fd - dm).abs() < 1e-8);
    }
}
