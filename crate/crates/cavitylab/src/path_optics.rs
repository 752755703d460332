//! Broken paths `p → x ∈ ∂D → y ∈ ∂Ω`: their length, global minimizers,
//! classification, Hessians in graph charts and sufficient non-degeneracy tests.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::geometry::{arr3, build_quadrature, spheroid_weingarten, LocalChart, QuadratureMesh, Surface, Vec3};

/// `|p - x| + |x - y|`.
pub fn broken_length(p: &Vec3, x: &Vec3, y: &Vec3) -> f64 {
    (p - x).norm() + (x - y).norm()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointClass {
    M1,
    M2plus,
    M2minus,
    Mg,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub x0: Vec3,
    pub y0: Vec3,
    pub class: PointClass,
    pub hessian: Matrix4<f64>,
    pub det_hessian: f64,
    pub length: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizerSet {
    pub l_value: f64,
    pub points: Vec<CriticalPoint>,
    /// `(|M₁|, |M₂⁺|)`; the number of `M₂⁻` points must equal `|M₂⁺|`.
    pub counts: (usize, usize),
}

impl MinimizerSet {
    pub fn count(&self, class: PointClass) -> usize {
        self.points.iter().filter(|c| c.class == class).count()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPointReport {
    pub x0: [f64; 3],
    pub y0: [f64; 3],
    pub class: PointClass,
    pub det_hessian: f64,
    pub h_plus: f64,
    pub h_minus: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizerReport {
    pub l_value: f64,
    pub points: Vec<CriticalPointReport>,
}

impl MinimizerSet {
    pub fn report(&self, d: &Surface, p: &Vec3) -> MinimizerReport {
        let points = self
            .points
            .iter()
            .map(|c| {
                let n = d.normal(&c.x0);
                CriticalPointReport {
                    x0: arr3(&c.x0),
                    y0: arr3(&c.y0),
                    class: c.class,
                    det_hessian: c.det_hessian,
                    h_plus: h_pm(&c.x0, &n, &c.y0, p, 1.0),
                    h_minus: h_pm(&c.x0, &n, &c.y0, p, -1.0),
                }
            })
            .collect();
        MinimizerReport { l_value: self.l_value, points }
    }
}

/// `H^±(x, y, p) = ν_x · ((p-x)/|p-x| ± (y-x)/|y-x|) / (|x-p| |x-y|)`.
pub fn h_pm(x: &Vec3, nu: &Vec3, y: &Vec3, p: &Vec3, sign: f64) -> f64 {
    let (a, b) = (p - x, y - x);
    let (la, lb) = (a.norm(), b.norm());
    nu.dot(&(a / la + b * (sign / lb))) / (la * lb)
}

/// Sign band used to separate grazing points from the rest: `1e-6 |p - x₀|`.
pub fn default_sign_tolerance(p: &Vec3, x0: &Vec3) -> f64 {
    1e-6 * (p - x0).norm()
}

/// Class of a minimizing pair from the signs of `ν·(p - x₀)` and `ν·(y₀ - x₀)`.
/// Anything that is neither a reflection nor a pass-through pair lands in `Mg`.
pub fn classify_point(p: &Vec3, x0: &Vec3, y0: &Vec3, d: &Surface, eps: f64) -> PointClass {
    let n = d.normal(x0);
    let a = n.dot(&(p - x0));
    let b = n.dot(&(y0 - x0));
    if a.abs() <= eps {
        PointClass::Mg
    } else if a > 0.0 && b > eps {
        PointClass::M1
    } else if a > 0.0 && b < -eps {
        PointClass::M2plus
    } else if a < 0.0 && b > eps {
        PointClass::M2minus
    } else {
        PointClass::Mg
    }
}

impl LocalChart {
    /// Weingarten map in the chart's own tangent basis.
    pub fn weingarten(&self, surface: &Surface) -> Matrix2<f64> {
        surface.weingarten_in(&self.base, &(self.e1, self.e2))
    }
}

/// Gradient of `l_p` in the chart coordinates `(σ, θ)` at the chart bases.
fn chart_gradient(p: &Vec3, cx: &LocalChart, cy: &LocalChart) -> Vector4<f64> {
    let (x, y) = (cx.base, cy.base);
    let gx = (x - p).normalize() + (x - y).normalize();
    let gy = (y - x).normalize();
    Vector4::new(gx.dot(&cx.e1), gx.dot(&cx.e2), gy.dot(&cy.e1), gy.dot(&cy.e2))
}

/// Hessian of `l̃_p(σ, θ) = l_p(x(σ), y(θ))` at `(0, 0)` for graph charts at `x₀` and `y₀`.
pub fn hessian_lp(p: &Vec3, cx: &LocalChart, dsurf: &Surface, cy: &LocalChart, osurf: &Surface) -> Matrix4<f64> {
    let (x, y) = (cx.base, cy.base);
    let (lp, ly) = ((x - p).norm(), (x - y).norm());
    let a = (x - p) / lp;
    let u = (x - y) / ly;
    let grad_x = a + u;
    let grad_y = -u;
    let ax = cx.weingarten(dsurf);
    let ay = cy.weingarten(osurf);
    let ex = [cx.e1, cx.e2];
    let fy = [cy.e1, cy.e2];
    let proj = |v: &Vec3, w: &Vec3, dir: &Vec3| v.dot(w) - v.dot(dir) * w.dot(dir);
    let mut h = Matrix4::zeros();
    for j in 0..2 {
        for k in 0..2 {
            h[(j, k)] = proj(&ex[j], &ex[k], &a) / lp + proj(&ex[j], &ex[k], &u) / ly
                - ax[(j, k)] * grad_x.dot(&cx.normal);
            h[(2 + j, 2 + k)] = proj(&fy[j], &fy[k], &u) / ly - ay[(j, k)] * grad_y.dot(&cy.normal);
            let cross = -proj(&ex[j], &fy[k], &u) / ly;
            h[(j, 2 + k)] = cross;
            h[(2 + k, j)] = cross;
        }
    }
    h
}

pub fn hessian_at(p: &Vec3, x0: &Vec3, y0: &Vec3, d: &Surface, omega: &Surface) -> Result<Matrix4<f64>> {
    let cx = d.standard_chart(x0)?;
    let cy = omega.standard_chart(y0)?;
    Ok(hessian_lp(p, &cx, d, &cy, omega))
}

pub fn min_eigenvalue(h: &Matrix4<f64>) -> f64 {
    SymmetricEigen::new(*h).eigenvalues.min()
}

/// Positive definiteness test with a relative floor.
pub fn nondegenerate_matrix(h: &Matrix4<f64>) -> bool {
    let scale = h.abs().max().max(1e-300);
    min_eigenvalue(h) > 1e-10 * scale
}

pub fn nondegenerate(cp: &CriticalPoint) -> bool {
    nondegenerate_matrix(&cp.hessian)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Uniform mesh resolution of the exhaustive pair scan.
    pub grid_resolution: usize,
    /// Gradient tolerance of the chart Newton refinement.
    pub refine_tolerance: f64,
    /// Distinct minimizers are at least this fraction of `diam Ω` apart.
    pub cluster_fraction: f64,
    /// Relative tie tolerance for attaining the minimum.
    pub tie_tolerance: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { grid_resolution: 24, refine_tolerance: 1e-12, cluster_fraction: 1e-3, tie_tolerance: 1e-6 }
    }
}

/// Exhaustive minimum of `l_p` over all node pairs.
pub fn brute_force_min(p: &Vec3, md: &QuadratureMesh, mo: &QuadratureMesh) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, 0, 0);
    for (i, nx) in md.nodes.iter().enumerate() {
        let lp = (p - nx.x).norm();
        for (j, ny) in mo.nodes.iter().enumerate() {
            let l = lp + (nx.x - ny.x).norm();
            if l < best.0 {
                best = (l, i, j);
            }
        }
    }
    best
}

/// Damped Newton iteration for a local minimizer of `l_p`, re-centring the charts each step.
pub fn refine_pair(p: &Vec3, x: Vec3, y: Vec3, d: &Surface, omega: &Surface, tol: f64) -> Result<(Vec3, Vec3)> {
    let (mut x, mut y) = (d.project(&x), omega.project(&y));
    for _ in 0..200 {
        let cx = d.standard_chart(&x)?;
        let cy = omega.standard_chart(&y)?;
        let g = chart_gradient(p, &cx, &cy);
        if g.norm() < tol {
            break;
        }
        let h = hessian_lp(p, &cx, d, &cy, omega);
        let eig = SymmetricEigen::new(h);
        let shift = (1e-3 - eig.eigenvalues.min()).max(0.0);
        let step = -(h + Matrix4::identity() * shift)
            .try_inverse()
            .ok_or_else(|| crate::Error::Solver("singular Newton system".into()))?
            * g;
        let cap = cx.r0.min(cy.r0);
        let mut t = if step.norm() > cap { cap / step.norm() } else { 1.0 };
        let l0 = broken_length(p, &x, &y);
        let mut moved = false;
        for _ in 0..60 {
            let sx = Vector2::new(step[0], step[1]) * t;
            let sy = Vector2::new(step[2], step[3]) * t;
            if let (Some(nx), Some(ny)) = (cx.point(&sx), cy.point(&sy)) {
                if broken_length(p, &nx, &ny) <= l0 {
                    x = nx;
                    y = ny;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((x, y))
}

fn critical_point(p: &Vec3, x0: Vec3, y0: Vec3, d: &Surface, omega: &Surface) -> Result<CriticalPoint> {
    let hessian = hessian_at(p, &x0, &y0, d, omega)?;
    Ok(CriticalPoint {
        x0,
        y0,
        class: classify_point(p, &x0, &y0, d, default_sign_tolerance(p, &x0)),
        det_hessian: hessian.determinant(),
        hessian,
        length: broken_length(p, &x0, &y0),
    })
}

/// Global minimizers of `l_p` over `∂D × ∂Ω`: exhaustive coarse scan, clustering of the
/// near-minimal pairs, and Newton refinement of each cluster.
pub fn minimize_broken_path(p: &Vec3, d: &Surface, omega: &Surface, opts: &MinimizeOptions) -> Result<MinimizerSet> {
    if !omega.encloses(d) {
        return config("the cavity surface is not strictly inside the body surface");
    }
    if omega.contains(p) || omega.on_surface(p) {
        return config(format!("probe {:?} is not outside the body", arr3(p)));
    }
    let md = build_quadrature(d, opts.grid_resolution)?;
    let mo = build_quadrature(omega, opts.grid_resolution)?;
    let (lmin, _, _) = brute_force_min(p, &md, &mo);
    let slack = 2.0 * (md.max_cell() + mo.max_cell());
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, nx) in md.nodes.iter().enumerate() {
        let lp = (p - nx.x).norm();
        let (mut bl, mut bj) = (f64::INFINITY, 0);
        for (j, ny) in mo.nodes.iter().enumerate() {
            let l = lp + (nx.x - ny.x).norm();
            if l < bl {
                bl = l;
                bj = j;
            }
        }
        if bl <= lmin + slack {
            cands.push((bl, i, bj));
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let radius = 3.0 * md.max_cell();
    let mut seeds: Vec<(usize, usize)> = Vec::new();
    for &(_, i, j) in &cands {
        if seeds.iter().all(|&(si, _)| (md.nodes[si].x - md.nodes[i].x).norm() > radius) {
            seeds.push((i, j));
        }
        if seeds.len() >= 32 {
            break;
        }
    }
    let mut refined: Vec<(Vec3, Vec3, f64)> = Vec::new();
    for (i, j) in seeds {
        let (x, y) = refine_pair(p, md.nodes[i].x, mo.nodes[j].x, d, omega, opts.refine_tolerance)?;
        refined.push((x, y, broken_length(p, &x, &y)));
    }
    let best = refined.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let cluster = opts.cluster_fraction * omega.diameter();
    let mut kept: Vec<(Vec3, Vec3, f64)> = Vec::new();
    for r in refined {
        if r.2 > best * (1.0 + opts.tie_tolerance) {
            continue;
        }
        if kept.iter().all(|k| (k.0 - r.0).norm() > cluster || (k.1 - r.1).norm() > cluster) {
            kept.push(r);
        }
    }
    let points = kept
        .into_iter()
        .map(|(x, y, _)| critical_point(p, x, y, d, omega))
        .collect::<Result<Vec<_>>>()?;
    let n1 = points.iter().filter(|c| c.class == PointClass::M1).count();
    let n2 = points.iter().filter(|c| c.class == PointClass::M2plus).count();
    Ok(MinimizerSet { l_value: best, points, counts: (n1, n2) })
}

/// Whether the largest principal curvature of `∂Ω` at `y₀` is below `1 / l`.
pub fn check_condition_29(omega: &Surface, y0: &Vec3, l_value: f64) -> Result<bool> {
    let k = omega.principal_curvatures(y0)?;
    Ok(l_value <= 0.0 || k[1] < 1.0 / l_value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurvatureVerdict {
    #[serde(rename = "421")]
    Eq421,
    #[serde(rename = "422")]
    Eq422,
    #[serde(rename = "neither")]
    Neither,
}

/// `|∇ₓ l_p(x₀, y₀)| = 2 (p - x₀)·ν / |p - x₀|` at a reflection pair.
pub fn grad_x_norm(p: &Vec3, x0: &Vec3, nu: &Vec3) -> f64 {
    2.0 * (p - x0).dot(nu) / (p - x0).norm()
}

/// Curvature comparison against a trial radius `R > d₀ = |x₀ - y₀|` using the focal spheroid
/// through `x₀` with foci `p`, `y₀`.
pub fn check_condition_421_422(
    d: &Surface,
    omega: &Surface,
    p: &Vec3,
    x0: &Vec3,
    y0: &Vec3,
    r_trial: f64,
) -> Result<CurvatureVerdict> {
    let d0 = (x0 - y0).norm();
    if !(r_trial > d0) {
        return domain(format!("trial radius {r_trial} must exceed d0 = {d0}"));
    }
    let l0 = broken_length(p, x0, y0);
    let a_s = spheroid_weingarten(l0, d0)?;
    let ko = omega.principal_curvatures(y0)?;
    let grad = grad_x_norm(p, x0, &d.normal(x0));
    let ad = d.weingarten(x0)?;
    let lhs = SymmetricEigen::new((ad + Matrix2::identity() * a_s) * grad).eigenvalues.min();
    let rhs = r_trial / ((r_trial - d0) * d0);
    let slack = 1e-12 * (1.0 / r_trial);
    let first_le = ko[1] <= 1.0 / r_trial + slack;
    let first_lt = ko[1] < 1.0 / r_trial - slack;
    Ok(if first_le && lhs > rhs {
        CurvatureVerdict::Eq421
    } else if first_lt && lhs >= rhs {
        CurvatureVerdict::Eq422
    } else {
        CurvatureVerdict::Neither
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingletonReport {
    pub singleton: bool,
    /// Centroid and diameter of each cluster of aligned nodes.
    pub clusters: Vec<([f64; 3], f64)>,
}

/// Nodes `y` with `(y - p)/|y - p| · ν_y ≥ cos(angle_tol)`, grouped by single linkage at
/// `cluster_tol`; the set is a single point when one cluster of diameter `≤ cluster_tol` remains.
pub fn check_lp_singleton(mesh: &QuadratureMesh, p: &Vec3, angle_tol: f64, cluster_tol: f64) -> SingletonReport {
    let aligned: Vec<Vec3> = mesh
        .nodes
        .iter()
        .filter(|n| (n.x - p).normalize().dot(&n.normal) >= angle_tol.cos())
        .map(|n| n.x)
        .collect();
    let mut label: Vec<usize> = (0..aligned.len()).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    let link = cluster_tol.max(1.5 * mesh.max_cell());
    for i in 0..aligned.len() {
        for j in 0..i {
            if (aligned[i] - aligned[j]).norm() <= link {
                let (ri, rj) = (root(&mut label, i), root(&mut label, j));
                label[ri] = rj;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Vec3>> = Default::default();
    for (i, a) in aligned.iter().enumerate() {
        let r = root(&mut label, i);
        groups.entry(r).or_default().push(*a);
    }
    let clusters: Vec<([f64; 3], f64)> = groups
        .values()
        .map(|g| {
            let c = g.iter().fold(Vec3::zeros(), |a, b| a + b) / g.len() as f64;
            let mut diam: f64 = 0.0;
            for a in g {
                for b in g {
                    diam = diam.max((a - b).norm());
                }
            }
            (arr3(&c), diam)
        })
        .collect();
    let singleton = clusters.len() == 1 && clusters[0].1 <= cluster_tol;
    SingletonReport { singleton, clusters }
}

/// `|ν_{y₀} - (y₀ - x₀)/|y₀ - x₀||`.
pub fn normal_alignment_residual(cp: &CriticalPoint, omega: &Surface) -> f64 {
    (omega.normal(&cp.y0) - (cp.y0 - cp.x0).normalize()).norm()
}

/// `|((p - x₀)/|p - x₀| + (y₀ - x₀)/|y₀ - x₀|) × ν_{x₀}|`.
pub fn reflection_residual(cp: &CriticalPoint, d: &Surface, p: &Vec3) -> f64 {
    let s = (p - cp.x0).normalize() + (cp.y0 - cp.x0).normalize();
    s.cross(&d.normal(&cp.x0)).norm()
}

/// Distance of `x₀` from the segment `p y₀`, relative to `l`.
pub fn collinearity_residual(cp: &CriticalPoint, p: &Vec3) -> f64 {
    let dir = cp.y0 - p;
    let t = ((cp.x0 - p).dot(&dir) / dir.norm_squared()).clamp(0.0, 1.0);
    (p + dir * t - cp.x0).norm() / cp.length
}

/// `|(p - x₀)/|p - x₀| + (y₀ - x₀)/|y₀ - x₀||`.
pub fn opposite_direction_residual(cp: &CriticalPoint, p: &Vec3) -> f64 {
    ((p - cp.x0).normalize() + (cp.y0 - cp.x0).normalize()).norm()
}

/// Smallest `(l_{(p,x)}(z) - |p - x|) / |z - x|` over mesh nodes `z ≠ x`,
/// where `l_{(p,x)}(z) = |p - z| + |z - x|`.
pub fn illuminated_growth_constant(p: &Vec3, x: &Vec3, mesh: &QuadratureMesh) -> f64 {
    let base = (p - x).norm();
    mesh.nodes
        .iter()
        .filter(|n| (n.x - x).norm() > 1e-9)
        .map(|n| ((p - n.x).norm() + (n.x - x).norm() - base) / (n.x - x).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Second intersection of the segment from `p` through the shadow-side point `x` with `∂D`.
pub fn shadow_partner(p: &Vec3, x: &Vec3, d: &Surface) -> Option<Vec3> {
    let dir = (x - p).normalize();
    let q = d.shape_matrix();
    let o = p - d.center();
    let a = dir.dot(&(q * dir));
    let b = dir.dot(&(q * o));
    let c = o.dot(&(q * o)) - 1.0;
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    Some(p + dir * t)
}

/// Smallest `(l_{(p,x)}(z) - |p - x|) / |z - x*|²` over the sample points within `radius` of `x*`.
pub fn shadow_quadratic_constant(p: &Vec3, x: &Vec3, xstar: &Vec3, samples: &[Vec3], radius: f64) -> f64 {
    let base = (p - x).norm();
    samples
        .iter()
        .filter(|z| {
            let r = (*z - xstar).norm();
            r > 1e-9 && r <= radius
        })
        .map(|z| ((p - z).norm() + (z - x).norm() - base) / (z - xstar).norm_squared())
        .fold(f64::INFINITY, f64::min)
}
