//! Nyström discretization of the single-layer calculus for `Δ - τ²`.
//!
//! Densities live on the nodes of two quadrature meshes: `φ` on the outer
//! boundary and `ψ` on the cavity boundary. Weakly singular rows are corrected
//! so that each row integrates constant densities exactly; the exact row
//! integral comes from a rule graded toward the row's collocation point.

use std::f64::consts::PI;

use faer::linalg::solvers::PartialPivLu;
use faer::prelude::*;
use faer::Mat;
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, solver, Result};
use crate::geometry::{build_focused_quadrature, integrate_focused, FocusedMeshSpec, QuadratureMesh, Surface, Vec3};
use crate::path_optics::{minimize_broken_path, MinimizeOptions};

const INV_2PI: f64 = 0.5 / PI;

/// Robin coefficient on the cavity boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Robin {
    Constant(f64),
    PerNode(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelContext {
    pub tau: f64,
    pub rho: Robin,
}

impl KernelContext {
    pub fn new(tau: f64, rho: Robin) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return domain(format!("tau must be positive and finite, got {tau}"));
        }
        let finite = match &rho {
            Robin::Constant(r) => r.is_finite(),
            Robin::PerNode(v) => v.iter().all(|r| r.is_finite()),
        };
        if !finite {
            return domain("Robin coefficient must be finite");
        }
        Ok(Self { tau, rho })
    }

    pub fn constant(tau: f64, rho: f64) -> Result<Self> {
        Self::new(tau, Robin::Constant(rho))
    }

    /// Robin values at `n` cavity nodes.
    pub fn rho_values(&self, n: usize) -> Result<Vec<f64>> {
        match &self.rho {
            Robin::Constant(r) => Ok(vec![*r; n]),
            Robin::PerNode(v) if v.len() == n => Ok(v.clone()),
            Robin::PerNode(v) => config(format!("{} Robin values for {} cavity nodes", v.len(), n)),
        }
    }
}

/// `e^{-τ|x-y|} / (2π|x-y|)`.
pub fn fundamental_solution(x: &Vec3, y: &Vec3, tau: f64) -> Result<f64> {
    let d = (x - y).norm();
    if d == 0.0 {
        return domain("fundamental solution is singular at x = y");
    }
    Ok(e_tau(d, tau))
}

#[inline]
fn e_tau(d: f64, tau: f64) -> f64 {
    INV_2PI * (-tau * d).exp() / d
}

/// `∂E/∂ν_x (x, z)` with the normal taken at `x`.
#[inline]
fn de_tau(x: &Vec3, nu: &Vec3, z: &Vec3, tau: f64) -> f64 {
    let r = z - x;
    let d = r.norm();
    INV_2PI * (-tau * d).exp() * nu.dot(&r) / d * (tau / d + 1.0 / (d * d))
}

/// `H = τ H0 + H1` with `(∂_ν + ρ)E = e^{-τ|x-y|} H / (2π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSplit {
    pub h: f64,
    pub h0: f64,
    pub h1: f64,
}

pub fn kernel_h(x: &Vec3, nu: &Vec3, y: &Vec3, tau: f64, rho: f64) -> Result<KernelSplit> {
    let r = y - x;
    let d = r.norm();
    if d == 0.0 {
        return domain("kernel H is singular at x = y");
    }
    let c = nu.dot(&r) / d;
    let h = c * (tau / d + 1.0 / (d * d)) + rho / d;
    let h0 = c / d;
    let h1 = (h0 + rho) / d;
    Ok(KernelSplit { h, h0, h1 })
}

#[inline]
fn h0_raw(x: &Vec3, nu: &Vec3, y: &Vec3) -> f64 {
    let r = y - x;
    nu.dot(&r) / r.norm_squared()
}

/// Cavity and body surfaces with their meshes.
#[derive(Clone, Debug)]
pub struct BemGeometry {
    pub d: Surface,
    pub omega: Surface,
    pub mesh_d: QuadratureMesh,
    pub mesh_omega: QuadratureMesh,
}

impl BemGeometry {
    pub fn new(d: Surface, omega: Surface, mesh_d: QuadratureMesh, mesh_omega: QuadratureMesh) -> Result<Self> {
        if !omega.encloses(&d) {
            return config("cavity surface is not strictly inside the body surface");
        }
        Ok(Self { d, omega, mesh_d, mesh_omega })
    }

    /// Meshes graded toward `x_focus` on the cavity and `y_focus` on the body.
    pub fn focused(d: Surface, omega: Surface, x_focus: &Vec3, y_focus: &Vec3, resolution: usize) -> Result<Self> {
        let spec = FocusedMeshSpec::for_resolution(resolution, omega.diameter());
        let mesh_d = build_focused_quadrature(&d, x_focus, &spec)?;
        let mesh_omega = build_focused_quadrature(&omega, y_focus, &spec)?;
        Self::new(d, omega, mesh_d, mesh_omega)
    }

    /// Meshes graded toward the first minimizing pair of the broken path from `p`.
    pub fn for_probe(d: Surface, omega: Surface, p: &Vec3, resolution: usize) -> Result<Self> {
        let set = minimize_broken_path(p, &d, &omega, &MinimizeOptions::default())?;
        let cp = set.points.first().ok_or_else(|| crate::Error::Solver("no minimizer found".into()))?;
        let (x0, y0) = (cp.x0, cp.y0);
        Self::focused(d, omega, &x0, &y0, resolution)
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self {
            d: self.d.translated(t),
            omega: self.omega.translated(t),
            mesh_d: self.mesh_d.translated(t),
            mesh_omega: self.mesh_omega.translated(t),
        }
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseBlock {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        self.data.par_chunks(self.cols).map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// Row-wise combination `self + diag(s) other`.
    fn plus_row_scaled(&self, s: &[f64], other: &DenseBlock) -> DenseBlock {
        let mut out = self.clone();
        out.data.par_chunks_mut(self.cols).zip(s.par_iter()).enumerate().for_each(|(i, (r, &si))| {
            if si != 0.0 {
                for (a, b) in r.iter_mut().zip(other.row(i)) {
                    *a += si * b;
                }
            }
        });
        out
    }

    fn abs_row_sums(&self) -> Vec<f64> {
        self.data.par_chunks(self.cols).map(|r| r.iter().map(|a| a.abs()).sum()).collect()
    }
}

/// Assemble `K(x_i, ν_i, z_j) w_j` with the row-sum correction described in the module docs.
fn assemble_block(
    rows: &QuadratureMesh,
    cols: &QuadratureMesh,
    col_surface: &Surface,
    same: bool,
    tau: f64,
    kernel: impl Fn(&Vec3, &Vec3, &Vec3) -> f64 + Sync,
) -> DenseBlock {
    let n = cols.len();
    let mut block = DenseBlock::zeros(rows.len(), n);
    block.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let (x, nu) = (rows.nodes[i].x, rows.nodes[i].normal);
        let mut sum = 0.0;
        for (j, node) in cols.nodes.iter().enumerate() {
            if same && j == i {
                continue;
            }
            row[j] = kernel(&x, &nu, &node.x) * node.weight;
            sum += row[j];
        }
        let focus = if same { x } else { col_surface.closest_point(&x) };
        let exact = integrate_focused(col_surface, &focus, 1.0 / tau, |z, _| kernel(&x, &nu, z));
        if same {
            row[i] = exact - sum;
        } else {
            row[cols.nearest(&focus)] += exact - sum;
        }
    });
    block
}

/// The discretized blocks of `Y(τ)`.
///
/// `Y11 = -S_Ω`, `Y12 = -X_Ω`, `Y21 = X_D + ρV_Ω`, `Y22 = S_D + ρV_D`.
#[derive(Clone, Debug)]
pub struct OperatorBlocks {
    pub tau: f64,
    pub rho: Vec<f64>,
    pub w_omega: Vec<f64>,
    pub w_d: Vec<f64>,
    pub s_omega: DenseBlock,
    pub x_omega: DenseBlock,
    pub x_d: DenseBlock,
    pub s_d: DenseBlock,
    /// The `τ H0` part of `S_D`.
    pub s_d_lead: DenseBlock,
    /// Absent when `ρ ≡ 0`.
    pub v_omega: Option<DenseBlock>,
    pub v_d: Option<DenseBlock>,
    /// Set when the finest cell is wider than a quarter of the decay length `1/τ`.
    pub under_resolved: bool,
}

/// Assemble all blocks of `Y(τ)` on the geometry's meshes.
pub fn assemble_y(ctx: &KernelContext, geom: &BemGeometry) -> Result<OperatorBlocks> {
    let tau = ctx.tau;
    let rho = ctx.rho_values(geom.mesh_d.len())?;
    let (md, mo) = (&geom.mesh_d, &geom.mesh_omega);
    let finest = md.nodes.iter().chain(&mo.nodes).map(|n| n.weight.sqrt()).fold(f64::INFINITY, f64::min);
    let under_resolved = finest > 0.25 / tau;
    if under_resolved {
        warn!("mesh too coarse for tau = {tau}: finest cell {finest:.3e} exceeds 1/(4 tau)");
    }
    let dk = |x: &Vec3, nu: &Vec3, z: &Vec3| de_tau(x, nu, z, tau);
    let sk = |x: &Vec3, _: &Vec3, z: &Vec3| e_tau((x - z).norm(), tau);
    let lead = |x: &Vec3, nu: &Vec3, z: &Vec3| INV_2PI * tau * (-tau * (x - z).norm()).exp() * h0_raw(x, nu, z);
    let s_omega = assemble_block(mo, mo, &geom.omega, true, tau, dk);
    let x_omega = assemble_block(mo, md, &geom.d, false, tau, dk);
    let x_d = assemble_block(md, mo, &geom.omega, false, tau, dk);
    let s_d = assemble_block(md, md, &geom.d, true, tau, dk);
    let s_d_lead = assemble_block(md, md, &geom.d, true, tau, lead);
    let (v_omega, v_d) = if rho.iter().any(|r| *r != 0.0) {
        (Some(assemble_block(md, mo, &geom.omega, false, tau, sk)), Some(assemble_block(md, md, &geom.d, true, tau, sk)))
    } else {
        (None, None)
    };
    Ok(OperatorBlocks {
        tau,
        rho,
        w_omega: mo.nodes.iter().map(|n| n.weight).collect(),
        w_d: md.nodes.iter().map(|n| n.weight).collect(),
        s_omega,
        x_omega,
        x_d,
        s_d,
        s_d_lead,
        v_omega,
        v_d,
        under_resolved,
    })
}

impl OperatorBlocks {
    pub fn n_omega(&self) -> usize {
        self.w_omega.len()
    }

    pub fn n_d(&self) -> usize {
        self.w_d.len()
    }

    pub fn y21(&self) -> DenseBlock {
        match &self.v_omega {
            Some(v) => self.x_d.plus_row_scaled(&self.rho, v),
            None => self.x_d.clone(),
        }
    }

    pub fn y22(&self) -> DenseBlock {
        match &self.v_d {
            Some(v) => self.s_d.plus_row_scaled(&self.rho, v),
            None => self.s_d.clone(),
        }
    }

    /// Induced max-row-sum norm of the full block operator.
    pub fn norm_inf(&self) -> f64 {
        let top = self.s_omega.abs_row_sums().into_iter().zip(self.x_omega.abs_row_sums()).map(|(a, b)| a + b);
        let bottom = self.y21().abs_row_sums().into_iter().zip(self.y22().abs_row_sums()).map(|(a, b)| a + b);
        top.chain(bottom).fold(0.0, f64::max)
    }

    /// `Y (φ, ψ)`.
    pub fn apply(&self, phi: &[f64], psi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = self.s_omega.matvec(phi);
        let b = self.x_omega.matvec(psi);
        let top = a.iter().zip(&b).map(|(a, b)| -a - b).collect();
        let mut bottom: Vec<f64> = self.x_d.matvec(phi).iter().zip(self.s_d.matvec(psi)).map(|(a, b)| a + b).collect();
        if let (Some(vo), Some(vd)) = (&self.v_omega, &self.v_d) {
            let (c, d) = (vo.matvec(phi), vd.matvec(psi));
            for i in 0..bottom.len() {
                bottom[i] += self.rho[i] * (c[i] + d[i]);
            }
        }
        (top, bottom)
    }

    /// Dense `I - Y(τ)` in faer layout.
    pub fn system_matrix(&self) -> Mat<f64> {
        let (no, nd) = (self.n_omega(), self.n_d());
        let (y21, y22) = (self.y21(), self.y22());
        Mat::from_fn(no + nd, no + nd, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            match (i < no, j < no) {
                (true, true) => id + self.s_omega.get(i, j),
                (true, false) => self.x_omega.get(i, j - no),
                (false, true) => -y21.get(i - no, j),
                (false, false) => id - y22.get(i - no, j - no),
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityPair {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Relative residual of the discrete system.
    pub residual: f64,
}

/// Factored `I - Y(τ)` for repeated right-hand sides.
pub struct DensitySolver {
    n_omega: usize,
    system: Mat<f64>,
    lu: PartialPivLu<f64>,
    /// One-norm condition estimate.
    pub condition_estimate: f64,
}

const MAX_CONDITION: f64 = 1e12;

fn one_norm(a: &Mat<f64>) -> f64 {
    (0..a.ncols()).map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Hager's estimate of `‖A⁻¹‖₁` from a few solves.
fn inverse_one_norm(lu: &PartialPivLu<f64>, n: usize) -> f64 {
    let mut x = Mat::from_fn(n, 1, |_, _| 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let y = lu.solve(&x);
        est = (0..n).map(|i| y[(i, 0)].abs()).sum();
        let xi = Mat::from_fn(n, 1, |i, _| if y[(i, 0)] >= 0.0 { 1.0 } else { -1.0 });
        let z = lu.solve_transpose(&xi);
        let (jmax, zmax) = (0..n).map(|i| (i, z[(i, 0)].abs())).fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let ztx: f64 = (0..n).map(|i| z[(i, 0)] * x[(i, 0)]).sum();
        if zmax <= ztx {
            break;
        }
        x = Mat::from_fn(n, 1, |i, _| if i == jmax { 1.0 } else { 0.0 });
    }
    est
}

impl DensitySolver {
    pub fn new(blocks: &OperatorBlocks) -> Result<Self> {
        let system = blocks.system_matrix();
        let n = system.nrows();
        let lu = system.partial_piv_lu();
        let cond = one_norm(&system) * inverse_one_norm(&lu, n);
        if !cond.is_finite() || cond > MAX_CONDITION {
            return solver(format!("I - Y(tau) is singular or ill-conditioned at tau = {}: condition estimate {cond:.3e}", blocks.tau));
        }
        Ok(Self { n_omega: blocks.n_omega(), system, lu, condition_estimate: cond })
    }

    pub fn solve(&self, g: &[f64]) -> Result<DensityPair> {
        let n = self.system.nrows();
        if g.len() != self.n_omega {
            return domain(format!("{} flux values for {} body nodes", g.len(), self.n_omega));
        }
        let b = Mat::from_fn(n, 1, |i, _| if i < self.n_omega { g[i] } else { 0.0 });
        let x = self.lu.solve(&b);
        let r = &self.system * &x - &b;
        let norm = |m: &Mat<f64>| (0..m.nrows()).map(|i| m[(i, 0)].abs()).fold(0.0, f64::max);
        let scale = norm(&b).max(norm(&x));
        let residual = if scale > 0.0 { norm(&r) / scale } else { 0.0 };
        if !(residual < 1e-10) {
            return solver(format!("density residual {residual:.3e} exceeds 1e-10 (condition {:.3e})", self.condition_estimate));
        }
        let phi = (0..self.n_omega).map(|i| x[(i, 0)]).collect();
        let psi = (self.n_omega..n).map(|i| x[(i, 0)]).collect();
        Ok(DensityPair { phi, psi, residual })
    }
}

/// Solve `(I - Y(τ))(φ, ψ) = (g, 0)` by dense LU.
pub fn solve_densities(blocks: &OperatorBlocks, g: &[f64]) -> Result<DensityPair> {
    DensitySolver::new(blocks)?.solve(g)
}

/// Partial sum `Σ_{k<terms} Y^k (g, 0)`.
pub fn neumann_series(blocks: &OperatorBlocks, g: &[f64], terms: usize) -> DensityPair {
    let mut phi = g.to_vec();
    let mut psi = vec![0.0; blocks.n_d()];
    let (mut tp, mut ts) = (phi.clone(), psi.clone());
    for _ in 1..terms {
        (tp, ts) = blocks.apply(&tp, &ts);
        phi.iter_mut().zip(&tp).for_each(|(a, b)| *a += b);
        psi.iter_mut().zip(&ts).for_each(|(a, b)| *a += b);
    }
    DensityPair { phi, psi, residual: f64::NAN }
}

/// `∫_S E(x, z) h(z) dS_z` with the density value at the closest node subtracted
/// and integrated on a rule graded toward the closest surface point.
fn single_layer_at(surface: &Surface, mesh: &QuadratureMesh, h: &[f64], tau: f64, x: &Vec3) -> f64 {
    let focus = surface.closest_point(x);
    let c = h[mesh.nearest(&focus)];
    let mut acc = 0.0;
    for (node, hj) in mesh.nodes.iter().zip(h) {
        let d = (node.x - x).norm();
        if d > 0.0 {
            acc += e_tau(d, tau) * node.weight * (hj - c);
        }
    }
    acc + c * integrate_focused(surface, &focus, 1.0 / tau, |z, _| e_tau((z - x).norm(), tau))
}

/// `w0(x) = V_Ω φ(x) + V_D ψ(x)` for `x` between the surfaces.
pub fn eval_w0(geom: &BemGeometry, tau: f64, dens: &DensityPair, x: &Vec3) -> Result<f64> {
    if geom.d.contains(x) || !geom.omega.contains(x) {
        return domain("w0 is evaluated only between the cavity and body surfaces");
    }
    let gap = geom.d.signed_distance(x).min(-geom.omega.signed_distance(x));
    if gap < geom.mesh_d.max_cell().min(geom.mesh_omega.max_cell()) {
        warn!("w0 evaluated {gap:.3e} from a surface; accuracy limited by the mesh");
    }
    Ok(single_layer_at(&geom.omega, &geom.mesh_omega, &dens.phi, tau, x)
        + single_layer_at(&geom.d, &geom.mesh_d, &dens.psi, tau, x))
}

/// `I0(τ,p)` by Green's identity on the cavity: `2 V_D ψ(p)`. Free of cancellation.
pub fn i0_boundary(geom: &BemGeometry, tau: f64, dens: &DensityPair, p: &Vec3) -> f64 {
    2.0 * geom.mesh_d.nodes.iter().zip(&dens.psi).map(|(n, s)| e_tau((n.x - p).norm(), tau) * n.weight * s).sum::<f64>()
}

/// `I0(τ,p) = ∫_{∂Ω} (∂_ν E(·,p) w0 - g E(·,p)) dS` literally.
/// The two terms cancel to `e^{-τ l}` relative size, so this is a low-τ diagnostic.
pub fn i0_boundary_direct(geom: &BemGeometry, tau: f64, dens: &DensityPair, g: &[f64], p: &Vec3) -> f64 {
    geom.mesh_omega
        .nodes
        .par_iter()
        .zip(g.par_iter())
        .map(|(n, gi)| {
            let w0 = single_layer_at(&geom.omega, &geom.mesh_omega, &dens.phi, tau, &n.x)
                + single_layer_at(&geom.d, &geom.mesh_d, &dens.psi, tau, &n.x);
            n.weight * (de_tau(&n.x, &n.normal, p, tau) * w0 - gi * e_tau((n.x - p).norm(), tau))
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Amplitudes on the cavity nodes: `F = 1/|x-p| + F0 + F1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Amplitudes {
    pub f: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    /// Largest gap between the direct resolvent and the `I + M0 + M1` recombination.
    pub recombination_gap: f64,
}

/// Adjoint operators conjugated by `e^{τ|x-p|}`, so that entries stay bounded.
struct ScaledAdjoint {
    full: Mat<f64>,
    lead: Mat<f64>,
}

fn scaled_adjoint(geom: &BemGeometry, blocks: &OperatorBlocks, p: &Vec3) -> ScaledAdjoint {
    let tau = blocks.tau;
    let e: Vec<f64> = geom.mesh_d.nodes.iter().map(|n| (n.x - p).norm()).collect();
    let y22 = blocks.y22();
    let n = blocks.n_d();
    let w = &blocks.w_d;
    let factor = |i: usize, j: usize| w[j] / w[i] * (tau * (e[i] - e[j])).exp();
    ScaledAdjoint {
        full: Mat::from_fn(n, n, |i, j| y22.get(j, i) * factor(i, j)),
        lead: Mat::from_fn(n, n, |i, j| blocks.s_d_lead.get(j, i) * factor(i, j)),
    }
}

fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn to_vec(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

/// `F`, `F0`, `F1` on the cavity nodes for the probe `p`.
///
/// `F0 = e^{τ|x-p|} M0 q` and `F1 = e^{τ|x-p|} (M̃ q + ᵗY22 ᵗY22 (I - ᵗY22)⁻¹ q)` with
/// `q = e^{-τ|·-p|}/|·-p|`; the exponential prefactor is fused into the matrices.
pub fn f_amplitudes(geom: &BemGeometry, blocks: &OperatorBlocks, p: &Vec3) -> Result<Amplitudes> {
    let n = blocks.n_d();
    let adj = scaled_adjoint(geom, blocks, p);
    let q: Vec<f64> = geom.mesh_d.nodes.iter().map(|nd| 1.0 / (nd.x - p).norm()).collect();
    let qm = col(&q);
    let ident = Mat::<f64>::identity(n, n);
    let lu = (&ident - &adj.full).partial_piv_lu();
    let u = lu.solve(&qm);
    if !(0..n).all(|i| u[(i, 0)].is_finite()) {
        return solver("I - tY22 could not be inverted");
    }
    let f0m = &adj.lead * &qm;
    let tilde = &adj.full - &adj.lead;
    let tu = &adj.full * &u;
    let f1m = &tilde * &qm + &adj.full * &tu;
    let f = to_vec(&u);
    let (f0, f1) = (to_vec(&f0m), to_vec(&f1m));
    let scale = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let recombination_gap =
        (0..n).map(|i| (f[i] - q[i] - f0[i] - f1[i]).abs()).fold(0.0, f64::max) / scale.max(f64::MIN_POSITIVE);
    Ok(Amplitudes { f, f0, f1, recombination_gap })
}

/// `F_j` on the cavity nodes, `j ∈ {0, 1}`.
pub fn f_j_eval(geom: &BemGeometry, blocks: &OperatorBlocks, p: &Vec3, j: usize) -> Result<Vec<f64>> {
    let a = f_amplitudes(geom, blocks, p)?;
    match j {
        0 => Ok(a.f0),
        1 => Ok(a.f1),
        _ => domain(format!("amplitude index must be 0 or 1, got {j}")),
    }
}

/// `I0 = τ I00 + I01` from the double-integral representation over cavity and body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct I0Split {
    pub i00: f64,
    pub i01: f64,
    pub total: f64,
}

pub fn i0_representation(
    geom: &BemGeometry,
    blocks: &OperatorBlocks,
    dens: &DensityPair,
    amps: &Amplitudes,
    p: &Vec3,
) -> I0Split {
    let tau = blocks.tau;
    let md = &geom.mesh_d;
    let pre: Vec<(f64, f64, f64)> = md
        .nodes
        .iter()
        .zip(&amps.f)
        .map(|(n, f)| {
            let dp = (n.x - p).norm();
            (dp, f - 1.0 / dp, h0_raw(&n.x, &n.normal, p))
        })
        .collect();
    // Summed in node order so results do not depend on the thread count.
    let (s0, s1) = geom
        .mesh_omega
        .nodes
        .par_iter()
        .zip(dens.phi.par_iter())
        .map(|(ny, phi)| {
            let (mut a0, mut a1) = (0.0, 0.0);
            for (i, nx) in md.nodes.iter().enumerate() {
                let (dp, extra, h0p) = pre[i];
                let r = ny.x - nx.x;
                let dy = r.norm();
                let h0y = nx.normal.dot(&r) / (dy * dy);
                let rho = blocks.rho[i];
                let (h1p, h1y) = ((h0p + rho) / dp, (h0y + rho) / dy);
                let g0 = h0p / dy + h0y / dp + 2.0 * h0y * extra;
                let g1 = h1p / dy + h1y / dp + 2.0 * h1y * extra;
                let wgt = (-tau * (dp + dy)).exp() * nx.weight;
                a0 += wgt * g0;
                a1 += wgt * g1;
            }
            (a0 * ny.weight * phi, a1 * ny.weight * phi)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let c = INV_2PI * INV_2PI;
    let (i00, i01) = (c * s0, c * s1);
    I0Split { i00, i01, total: tau * i00 + i01 }
}

/// Largest off-diagonal gap between the kernel form of `ᵗY22` and the weighted transpose of `Y22`.
pub fn adjoint_identity_gap(geom: &BemGeometry, blocks: &OperatorBlocks) -> f64 {
    let tau = blocks.tau;
    let md = &geom.mesh_d;
    let y22 = blocks.y22();
    let w = &blocks.w_d;
    (0..md.len())
        .into_par_iter()
        .map(|i| {
            let z = md.nodes[i].x;
            let mut gap = 0.0f64;
            for (j, nx) in md.nodes.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (nx.x - z).norm();
                let h = kernel_h(&nx.x, &nx.normal, &z, tau, blocks.rho[j]).map(|k| k.h).unwrap_or(0.0);
                let kernel_form = INV_2PI * (-tau * d).exp() * h * nx.weight;
                let transposed = y22.get(j, i) * w[j] / w[i];
                gap = gap.max((kernel_form - transposed).abs());
            }
            gap
        })
        .reduce(|| 0.0, f64::max)
}

/// `‖(I - T)⁻¹ v - (I + M0 + M1) v‖ / ‖(I - T)⁻¹ v‖` for random `v`, with `T` the discrete `ᵗY22`.
pub fn resolvent_recombination_gap(blocks: &OperatorBlocks, samples: usize, seed: u64) -> f64 {
    let (t, lead) = unscaled_adjoint(blocks);
    let n = blocks.n_d();
    let lu = (&Mat::<f64>::identity(n, n) - &t).partial_piv_lu();
    let tilde = &t - &lead;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let v = Mat::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
        let direct = lu.solve(&v);
        let m1v = &tilde * &v + &t * (&t * &direct);
        let recombined = &v + &lead * &v + &m1v;
        let diff = &direct - &recombined;
        worst = worst.max(diff.norm_max() / direct.norm_max());
    }
    worst
}

fn unscaled_adjoint(blocks: &OperatorBlocks) -> (Mat<f64>, Mat<f64>) {
    let n = blocks.n_d();
    let y22 = blocks.y22();
    let w = &blocks.w_d;
    (
        Mat::from_fn(n, n, |i, j| y22.get(j, i) * w[j] / w[i]),
        Mat::from_fn(n, n, |i, j| blocks.s_d_lead.get(j, i) * w[j] / w[i]),
    )
}

/// Smallest constants making the sampled kernels of `M0` and `M1` obey
/// `|M0| ≤ C τ e^{-τ|x-z|}` and `|M1| ≤ C (τ + 1/|x-z|) e^{-τ|x-z|}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBoundRow {
    pub tau: f64,
    pub c_m0: f64,
    pub c_m1: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBoundReport {
    pub rows: Vec<KernelBoundRow>,
    /// Log-log slopes of the fitted constants against τ.
    pub m0_growth: f64,
    pub m1_growth: f64,
    pub stable: bool,
}

/// Sampled pairs are restricted to `τ|x-z| ≤ 15`; farther entries sit below rounding noise.
pub fn kernel_bound_probe(
    d: &Surface,
    mesh_d: &QuadratureMesh,
    rho: f64,
    taus: &[f64],
    samples: usize,
    seed: u64,
) -> Result<KernelBoundReport> {
    let mut rows = Vec::new();
    for &tau in taus {
        let ctx = KernelContext::constant(tau, rho)?;
        let blocks = assemble_y22_only(&ctx, d, mesh_d)?;
        let n = mesh_d.len();
        let (t, lead) = unscaled_adjoint(&blocks);
        let lu = (&Mat::<f64>::identity(n, n) - &t).partial_piv_lu();
        let resolvent_t = lu.solve(&t);
        let m1 = (&t - &lead) + &t * &resolvent_t;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut c0, mut c1, mut taken) = (0.0f64, 0.0f64, 0);
        let mut attempts = 0;
        while taken < samples && attempts < 200 * samples {
            attempts += 1;
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if i == j {
                continue;
            }
            let dist = (mesh_d.nodes[i].x - mesh_d.nodes[j].x).norm();
            if tau * dist > 15.0 {
                continue;
            }
            let decay = (-tau * dist).exp();
            let wj = mesh_d.nodes[j].weight;
            c0 = c0.max((lead[(i, j)] / wj).abs() / (tau * decay));
            c1 = c1.max((m1[(i, j)] / wj).abs() / ((tau + 1.0 / dist) * decay));
            taken += 1;
        }
        rows.push(KernelBoundRow { tau, c_m0: c0, c_m1: c1, samples: taken });
    }
    let slope = |f: &dyn Fn(&KernelBoundRow) -> f64| {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.tau.ln(), f(r).ln())).collect();
        crate::indicator::least_squares_slope(&pts)
    };
    let m0_growth = slope(&|r| r.c_m0);
    let m1_growth = slope(&|r| r.c_m1);
    let stable = m0_growth < 0.25 && m1_growth < 0.25;
    Ok(KernelBoundReport { rows, m0_growth, m1_growth, stable })
}

/// Blocks with only the cavity self-interaction populated.
fn assemble_y22_only(ctx: &KernelContext, d: &Surface, mesh_d: &QuadratureMesh) -> Result<OperatorBlocks> {
    let tau = ctx.tau;
    let rho = ctx.rho_values(mesh_d.len())?;
    let dk = |x: &Vec3, nu: &Vec3, z: &Vec3| de_tau(x, nu, z, tau);
    let lead = |x: &Vec3, nu: &Vec3, z: &Vec3| INV_2PI * tau * (-tau * (x - z).norm()).exp() * h0_raw(x, nu, z);
    let sk = |x: &Vec3, _: &Vec3, z: &Vec3| e_tau((x - z).norm(), tau);
    let v_d = rho.iter().any(|r| *r != 0.0).then(|| assemble_block(mesh_d, mesh_d, d, true, tau, sk));
    let empty = DenseBlock::zeros(0, 0);
    Ok(OperatorBlocks {
        tau,
        rho,
        w_omega: Vec::new(),
        w_d: mesh_d.nodes.iter().map(|n| n.weight).collect(),
        s_omega: empty.clone(),
        x_omega: empty.clone(),
        x_d: empty,
        s_d: assemble_block(mesh_d, mesh_d, d, true, tau, dk),
        s_d_lead: assemble_block(mesh_d, mesh_d, d, true, tau, lead),
        v_omega: None,
        v_d,
        under_resolved: false,
    })
}

/// `C_k(τ) = max_x τ^{2-k} ∫_{∂D} e^{-τ|x-z|} / |x-z|^k dS_z` over sampled nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDecayReport {
    pub taus: Vec<f64>,
    pub c_k0: Vec<f64>,
    pub c_k1: Vec<f64>,
    pub stable: bool,
}

pub fn surface_decay_probe(d: &Surface, mesh_d: &QuadratureMesh, taus: &[f64], samples: usize, seed: u64) -> SurfaceDecayReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec3> = (0..samples).map(|_| mesh_d.nodes[rng.gen_range(0..mesh_d.len())].x).collect();
    let (mut c_k0, mut c_k1) = (Vec::new(), Vec::new());
    for &tau in taus {
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for x in &picks {
            let i0 = integrate_focused(d, x, 1.0 / tau, |z, _| (-tau * (z - x).norm()).exp());
            let i1 = integrate_focused(d, x, 1.0 / tau, |z, _| {
                let r = (z - x).norm();
                (-tau * r).exp() / r
            });
            a = a.max(i0 * tau * tau);
            b = b.max(i1 * tau);
        }
        c_k0.push(a);
        c_k1.push(b);
    }
    let spread = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
        hi / lo
    };
    let stable = spread(&c_k0) < 2.0 && spread(&c_k1) < 2.0;
    SurfaceDecayReport { taus: taus.to_vec(), c_k0, c_k1, stable }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fundamental_solution_at_unit_distance() {
        let v = fundamental_solution(&Vec3::zeros(), &Vec3::x(), 1.0).unwrap();
        assert!((v - (-1.0f64).exp() / (2.0 * PI)).abs() < 1e-15);
        assert!(fundamental_solution(&Vec3::x(), &Vec3::x(), 1.0).is_err());
    }

    #[test]
    fn kernel_split_recombines() {
        let x = Vec3::new(1.5, 0.0, 0.0);
        let k = kernel_h(&x, &Vec3::x(), &Vec3::new(2.2, 0.0, 0.0), 10.0, 0.0).unwrap();
        assert!((k.h - (10.0 / 0.7 + 1.0 / 0.49)).abs() < 1e-12);
        assert!((10.0 * k.h0 + k.h1 - k.h).abs() < 1e-12);
    }

    #[test]
    fn normal_derivative_matches_kernel_h() {
        let (x, nu, z, tau) = (Vec3::new(0.2, 0.1, 1.0), Vec3::new(0.1, 0.2, 1.0).normalize(), Vec3::new(1.0, -0.5, 2.0), 3.0);
        let k = kernel_h(&x, &nu, &z, tau, 0.0).unwrap();
        let d = (z - x).norm();
        assert!((de_tau(&x, &nu, &z, tau) - INV_2PI * (-tau * d).exp() * k.h).abs() < 1e-15);
        let h = 1e-6;
        let fd = (e_tau((z - x - nu * h).norm(), tau) - e_tau((z - x + nu * h).norm(), tau)) / (2.0 * h);
        assert!((fd - de_tau(&x, &nu, &z, tau)).abs() < 1e-8);
    }
}
