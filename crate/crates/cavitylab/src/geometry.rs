//! Closed strictly convex quadric surfaces with exact normals and curvature,
//! product quadrature meshes, graph charts and Weingarten maps.
//!
//! Every surface is stored as a quadric `(x - c)ᵀ Q (x - c) = 1`, which makes
//! normals, curvatures and chart heights available in closed form.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Quaternion, SymmetricEigen, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::quad;

pub type Vec3 = Vector3<f64>;

pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    Sphere,
    Ellipsoid,
    Spheroid,
}

/// Plain-data description of a surface, as it appears in scenario files.
/// Rotations are unit quaternions in `[w, x, y, z]` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Ellipsoid {
        center: [f64; 3],
        radii: [f64; 3],
        #[serde(default = "identity_rotation")]
        rotation: [f64; 4],
    },
    Spheroid {
        foci: [[f64; 3]; 2],
        string_length: f64,
    },
}

fn identity_rotation() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Clone, Debug)]
pub struct Surface {
    kind: SurfaceKind,
    center: Vec3,
    /// Columns are the body axes in world coordinates.
    frame: Matrix3<f64>,
    radii: [f64; 3],
    shape: Matrix3<f64>,
}

/// Orthonormal tangent pair completing `n` to a right-handed frame `(e1, e2, n)`.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let axis = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vec3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let e1 = (axis - n * n.dot(&axis)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

impl Surface {
    pub fn sphere(center: Vec3, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return domain(format!("sphere radius must be positive, got {radius}"));
        }
        Self::build(SurfaceKind::Sphere, center, Matrix3::identity(), [radius; 3])
    }

    pub fn ellipsoid(center: Vec3, radii: [f64; 3], rotation: UnitQuaternion<f64>) -> Result<Self> {
        if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return domain(format!("ellipsoid radii must be positive, got {radii:?}"));
        }
        Self::build(SurfaceKind::Ellipsoid, center, *rotation.to_rotation_matrix().matrix(), radii)
    }

    /// The prolate spheroid `{x : |x - f1| + |x - f2| = l0}`.
    pub fn spheroid_by_foci(f1: Vec3, f2: Vec3, l0: f64) -> Result<Self> {
        let gap = (f2 - f1).norm();
        if !(l0 > gap) {
            return domain(format!("string length {l0} must exceed the focal distance {gap}"));
        }
        let a = 0.5 * l0;
        let c = 0.5 * gap;
        let b = (a * a - c * c).sqrt();
        let axis = if gap > 0.0 { (f2 - f1) / gap } else { Vec3::z() };
        let (e1, e2) = tangent_basis(&axis);
        let frame = Matrix3::from_columns(&[e1, e2, axis]);
        Self::build(SurfaceKind::Spheroid, 0.5 * (f1 + f2), frame, [b, b, a])
    }

    pub fn from_spec(spec: &SurfaceSpec) -> Result<Self> {
        match spec {
            SurfaceSpec::Sphere { center, radius } => Self::sphere(vec3(*center), *radius),
            SurfaceSpec::Ellipsoid { center, radii, rotation } => {
                let q = Quaternion::new(rotation[0], rotation[1], rotation[2], rotation[3]);
                if !(q.norm() > 0.0) {
                    return config("rotation quaternion must be non-zero");
                }
                Self::ellipsoid(vec3(*center), *radii, UnitQuaternion::from_quaternion(q))
            }
            SurfaceSpec::Spheroid { foci, string_length } => {
                Self::spheroid_by_foci(vec3(foci[0]), vec3(foci[1]), *string_length)
            }
        }
    }

    fn build(kind: SurfaceKind, center: Vec3, frame: Matrix3<f64>, radii: [f64; 3]) -> Result<Self> {
        let inv = Matrix3::from_diagonal(&Vec3::new(
            radii[0].powi(-2),
            radii[1].powi(-2),
            radii[2].powi(-2),
        ));
        let shape = frame * inv * frame.transpose();
        Ok(Self { kind, center, frame, radii, shape })
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn radii(&self) -> [f64; 3] {
        self.radii
    }

    pub fn shape_matrix(&self) -> &Matrix3<f64> {
        &self.shape
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self { center: self.center + t, ..self.clone() }
    }

    fn r_min(&self) -> f64 {
        self.radii.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn r_max(&self) -> f64 {
        self.radii.iter().cloned().fold(0.0, f64::max)
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.r_max()
    }

    /// Largest principal curvature over the whole surface.
    pub fn kappa_max(&self) -> f64 {
        self.r_max() / self.r_min().powi(2)
    }

    /// Smallest principal curvature over the whole surface.
    pub fn kappa_min(&self) -> f64 {
        self.r_min() / self.r_max().powi(2)
    }

    /// Uniform chart radius `0.5 / κ_max`.
    pub fn patch_radius(&self) -> f64 {
        0.5 / self.kappa_max()
    }

    /// Quadric level `(x - c)ᵀ Q (x - c) - 1`; negative inside.
    pub fn level(&self, x: &Vec3) -> f64 {
        let d = x - self.center;
        d.dot(&(self.shape * d)) - 1.0
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.level(x) < 0.0
    }

    /// First-order distance estimate `|F| / |∇F|`.
    pub fn level_distance(&self, x: &Vec3) -> f64 {
        let d = x - self.center;
        let g = 2.0 * (self.shape * d).norm();
        if g == 0.0 {
            return self.r_min();
        }
        self.level(x).abs() / g
    }

    pub fn on_surface(&self, x: &Vec3) -> bool {
        self.level_distance(x) <= 1e-8 * self.diameter()
    }

    fn require_on_surface(&self, x: &Vec3) -> Result<()> {
        if self.on_surface(x) {
            Ok(())
        } else {
            domain(format!(
                "point {:?} is {:.3e} away from the surface",
                arr3(x),
                self.level_distance(x)
            ))
        }
    }

    /// Outward unit normal of the level set through `x`.
    pub fn normal(&self, x: &Vec3) -> Vec3 {
        (self.shape * (x - self.center)).normalize()
    }

    /// Point, normal and radius along the ray from the center in direction `dir` (unit).
    pub fn radial_point(&self, dir: &Vec3) -> (Vec3, Vec3, f64) {
        let r = 1.0 / dir.dot(&(self.shape * dir)).sqrt();
        let x = self.center + dir * r;
        (x, (self.shape * dir).normalize(), r)
    }

    /// Radial projection onto the surface.
    pub fn project(&self, x: &Vec3) -> Vec3 {
        let d = x - self.center;
        self.center + d / d.dot(&(self.shape * d)).sqrt()
    }

    /// Standard spherical-coordinate parametrization in the body frame:
    /// `(θ, φ) ↦ c + R (a₁ sinθ cosφ, a₂ sinθ sinφ, a₃ cosθ)`.
    pub fn eval(&self, param: [f64; 2]) -> Result<(Vec3, Vec3)> {
        let [theta, phi] = param;
        if !(0.0..=PI).contains(&theta) || !phi.is_finite() {
            return domain(format!("parameter ({theta}, {phi}) outside [0, π] × ℝ"));
        }
        let [a, b, c] = self.radii;
        let local = Vec3::new(a * theta.sin() * phi.cos(), b * theta.sin() * phi.sin(), c * theta.cos());
        let x = self.center + self.frame * local;
        Ok((x, self.normal(&x)))
    }

    /// Weingarten map in the tangent basis `tangent_basis(ν_x)`.
    pub fn weingarten(&self, x: &Vec3) -> Result<Matrix2<f64>> {
        self.require_on_surface(x)?;
        let n = self.normal(x);
        Ok(self.weingarten_in(x, &tangent_basis(&n)))
    }

    /// Weingarten map expressed in an arbitrary orthonormal tangent basis at `x`.
    pub fn weingarten_in(&self, x: &Vec3, basis: &(Vec3, Vec3)) -> Matrix2<f64> {
        let g = (self.shape * (x - self.center)).norm();
        let (e1, e2) = basis;
        let a11 = e1.dot(&(self.shape * e1)) / g;
        let a12 = e1.dot(&(self.shape * e2)) / g;
        let a22 = e2.dot(&(self.shape * e2)) / g;
        Matrix2::new(a11, a12, a12, a22)
    }

    /// Principal curvatures at `x`, ascending.
    pub fn principal_curvatures(&self, x: &Vec3) -> Result<[f64; 2]> {
        let w = self.weingarten(x)?;
        let e = SymmetricEigen::new(w).eigenvalues;
        Ok([e[0].min(e[1]), e[0].max(e[1])])
    }

    pub fn standard_chart(&self, x: &Vec3) -> Result<LocalChart> {
        self.require_on_surface(x)?;
        let normal = self.normal(x);
        let (e1, e2) = tangent_basis(&normal);
        Ok(LocalChart {
            base: *x,
            e1,
            e2,
            normal,
            r0: self.patch_radius(),
            center: self.center,
            shape: self.shape,
        })
    }

    /// Closest surface point to `p` (any `p` outside or inside except the center).
    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        let local = self.frame.transpose() * (p - self.center);
        let a2 = self.radii.map(|r| r * r);
        let at = |t: f64| -> Vec3 {
            Vec3::new(local.x * a2[0] / (a2[0] + t), local.y * a2[1] / (a2[1] + t), local.z * a2[2] / (a2[2] + t))
        };
        let lvl = |t: f64| {
            let q = at(t);
            q.x * q.x / a2[0] + q.y * q.y / a2[1] + q.z * q.z / a2[2] - 1.0
        };
        // x = (I + tQ)⁻¹ p in the body frame; the level is decreasing in t on (-min a², ∞).
        let amin = a2.iter().cloned().fold(f64::INFINITY, f64::min);
        let (mut lo, mut hi) = if lvl(0.0) > 0.0 {
            let mut hi = amin.max(1.0);
            while lvl(hi) > 0.0 {
                hi *= 2.0;
            }
            (0.0, hi)
        } else {
            (-amin * (1.0 - 1e-15), 0.0)
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if lvl(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.project(&(self.center + self.frame * at(0.5 * (lo + hi))))
    }

    /// Signed distance, positive outside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let d = (p - self.closest_point(p)).norm();
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let half = Vec3::from_fn(|i, _| {
            (0..3).map(|k| (self.frame[(i, k)] * self.radii[k]).powi(2)).sum::<f64>().sqrt()
        });
        (self.center - half, self.center + half)
    }

    /// Whether `inner` lies strictly inside this surface, judged on a fine sample.
    pub fn encloses(&self, inner: &Surface) -> bool {
        build_quadrature(inner, 24)
            .map(|m| m.nodes.iter().all(|n| self.contains(&n.x)))
            .unwrap_or(false)
    }
}

/// Common eigenvalue of the Weingarten map of the spheroid with foci `p`, `y₀` and
/// string length `l0`, at the apex `x₀` with `|x₀ - y₀| = d0`.
pub fn spheroid_weingarten(l0: f64, d0: f64) -> Result<f64> {
    if !(d0 > 0.0 && l0 > d0) {
        return domain(format!("need l0 > d0 > 0, got l0 = {l0}, d0 = {d0}"));
    }
    Ok(l0 / (2.0 * (l0 - d0) * d0))
}

/// Graph chart `σ ↦ x + σ₁e₁ + σ₂e₂ - g(σ)ν` over the tangent plane at `x`.
#[derive(Clone, Debug)]
pub struct LocalChart {
    pub base: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub normal: Vec3,
    pub r0: f64,
    center: Vec3,
    shape: Matrix3<f64>,
}

impl LocalChart {
    /// Height below the tangent plane; `None` when the normal line misses the surface.
    pub fn height(&self, s: &Vector2<f64>) -> Option<f64> {
        let q0 = self.base + self.e1 * s.x + self.e2 * s.y - self.center;
        let qn = self.shape * self.normal;
        let a = self.normal.dot(&qn);
        let b = qn.dot(&q0);
        let c = q0.dot(&(self.shape * q0)) - 1.0;
        let disc = b * b - a * c;
        if disc < 0.0 || b + disc.sqrt() <= 0.0 {
            return None;
        }
        Some(c / (b + disc.sqrt()))
    }

    pub fn point(&self, s: &Vector2<f64>) -> Option<Vec3> {
        self.height(s).map(|h| self.base + self.e1 * s.x + self.e2 * s.y - self.normal * h)
    }

    pub fn normal_at(&self, s: &Vector2<f64>) -> Option<Vec3> {
        self.point(s).map(|x| (self.shape * (x - self.center)).normalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshNode {
    pub x: Vec3,
    pub normal: Vec3,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct QuadratureMesh {
    pub nodes: Vec<MeshNode>,
    pub resolution: usize,
}

impl QuadratureMesh {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn nearest(&self, x: &Vec3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.x - x).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Largest local cell size, estimated as the square root of a node weight.
    pub fn max_cell(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight.sqrt()).fold(0.0, f64::max)
    }

    pub fn translated(&self, t: Vec3) -> Self {
        let nodes = self.nodes.iter().map(|n| MeshNode { x: n.x + t, ..*n }).collect();
        Self { nodes, resolution: self.resolution }
    }
}

/// Grading of a pole-focused mesh. Lengths are arc lengths near the focus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusedMeshSpec {
    /// Node spacing at the focus.
    pub h_min: f64,
    /// Node spacing far from the focus.
    pub h_max: f64,
    /// Ratio between consecutive polar panels.
    pub growth: f64,
    /// Gauss-Legendre nodes per polar panel.
    pub order: usize,
    pub min_azimuth: usize,
}

impl FocusedMeshSpec {
    /// Grading used for meshes at refinement level `resolution` on a body of diameter `scale`.
    pub fn for_resolution(resolution: usize, scale: f64) -> Self {
        let n = resolution.max(1) as f64;
        Self { h_min: 0.02 * scale / n, h_max: scale / n, growth: 1.6, order: 5, min_azimuth: 8 }
    }
}

/// Visit the nodes of a polar product rule whose pole sits at direction `pole` from the center.
fn visit_polar(
    surface: &Surface,
    pole: &Vec3,
    theta_rule: &[(f64, f64, f64)],
    azimuth: (usize, usize),
    mut visit: impl FnMut(Vec3, Vec3, f64),
) {
    let (a, b) = tangent_basis(pole);
    let arm = surface.radial_point(pole).2;
    for &(theta, wt, spacing) in theta_rule {
        let (st, ct) = theta.sin_cos();
        let count = ((2.0 * PI * arm * st / spacing).ceil() as usize).clamp(azimuth.0, azimuth.1);
        let dphi = 2.0 * PI / count as f64;
        for k in 0..count {
            let (sp, cp) = (k as f64 * dphi).sin_cos();
            let dir = pole * ct + (a * cp + b * sp) * st;
            let (x, n, r) = surface.radial_point(&dir);
            visit(x, n, wt * dphi * st * r * r / dir.dot(&n));
        }
    }
}

/// Polar rule `(θ, weight, local spacing)` with panels graded toward `θ = 0`.
fn focused_theta_rule(arm: f64, spec: &FocusedMeshSpec) -> Vec<(f64, f64, f64)> {
    let q = spec.order.max(2);
    let first = q as f64 * spec.h_min / arm;
    let largest = q as f64 * spec.h_max / arm;
    let breaks = quad::graded_breakpoints(PI, first, spec.growth, largest.max(first));
    let mut rule = Vec::new();
    for w in breaks.windows(2) {
        let spacing = (w[1] - w[0]) * arm / q as f64;
        for (t, wt) in quad::gauss_legendre_on(q, w[0], w[1]) {
            rule.push((t, wt, spacing));
        }
    }
    rule
}

/// Product rule in body-frame spherical angles: Gauss-Legendre in θ, trapezoid in φ.
pub fn build_quadrature(surface: &Surface, resolution: usize) -> Result<QuadratureMesh> {
    if resolution < 4 {
        return domain(format!("resolution must be at least 4, got {resolution}"));
    }
    let pole = surface.frame.column(2).into_owned();
    let (a, b) = (surface.frame.column(0).into_owned(), surface.frame.column(1).into_owned());
    let mut nodes = Vec::with_capacity(2 * resolution * resolution);
    let count = 2 * resolution;
    let dphi = 2.0 * PI / count as f64;
    for (theta, wt) in quad::gauss_legendre_on(resolution, 0.0, PI) {
        let (st, ct) = theta.sin_cos();
        for k in 0..count {
            let (sp, cp) = ((k as f64 + 0.5) * dphi).sin_cos();
            let dir = pole * ct + (a * cp + b * sp) * st;
            let (x, n, r) = surface.radial_point(&dir);
            nodes.push(MeshNode { x, normal: n, weight: wt * dphi * st * r * r / dir.dot(&n) });
        }
    }
    Ok(QuadratureMesh { nodes, resolution })
}

/// Product rule whose pole sits at `focus` with panels graded toward it.
pub fn build_focused_quadrature(
    surface: &Surface,
    focus: &Vec3,
    spec: &FocusedMeshSpec,
) -> Result<QuadratureMesh> {
    if !(spec.h_min > 0.0 && spec.h_max >= spec.h_min && spec.growth >= 1.0) {
        return domain(format!("invalid mesh grading {spec:?}"));
    }
    let pole = (focus - surface.center).normalize();
    let arm = surface.radial_point(&pole).2;
    let rule = focused_theta_rule(arm, spec);
    let mut nodes = Vec::new();
    visit_polar(surface, &pole, &rule, (spec.min_azimuth, usize::MAX), |x, normal, weight| {
        nodes.push(MeshNode { x, normal, weight })
    });
    Ok(QuadratureMesh { nodes, resolution: spec.order })
}

/// Integrate `f(z, ν_z)` over the surface with a rule graded toward `focus` at scale `scale`.
/// Integrands with an integrable `1/|z - focus|` singularity are handled by the polar Jacobian.
pub fn integrate_focused(
    surface: &Surface,
    focus: &Vec3,
    scale: f64,
    mut f: impl FnMut(&Vec3, &Vec3) -> f64,
) -> f64 {
    let spec = FocusedMeshSpec {
        h_min: 0.05 * scale,
        h_max: (0.15 * surface.r_min()).max(0.05 * scale),
        growth: 1.5,
        order: 8,
        min_azimuth: 16,
    };
    let pole = (focus - surface.center).normalize();
    let arm = surface.radial_point(&pole).2;
    let rule = focused_theta_rule(arm, &spec);
    let mut acc = 0.0;
    visit_polar(surface, &pole, &rule, (16, 32), |x, n, w| acc += w * f(&x, &n));
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub strictly_convex: bool,
    pub min_eigenvalue: f64,
}

pub fn strict_convexity_check(surface: &Surface, mesh: &QuadratureMesh) -> ConvexityReport {
    let mut min_eig = f64::INFINITY;
    for node in &mesh.nodes {
        let x = surface.project(&node.x);
        if let Ok(k) = surface.principal_curvatures(&x) {
            min_eig = min_eig.min(k[0]);
        }
    }
    ConvexityReport { strictly_convex: min_eig > 0.0, min_eigenvalue: min_eig }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tangent_basis_is_orthonormal_and_right_handed() {
        for n in [Vec3::x(), Vec3::new(0.3, -0.4, 0.866).normalize(), -Vec3::z()] {
            let (e1, e2) = tangent_basis(&n);
            assert!(e1.dot(&n).abs() < 1e-15 && e2.dot(&n).abs() < 1e-15);
            assert!((e1.cross(&e2) - n).norm() < 1e-14);
        }
    }

    #[test]
    fn chart_height_vanishes_at_base_with_zero_slope() {
        let s = Surface::ellipsoid(Vec3::zeros(), [2.0, 1.0, 1.5], UnitQuaternion::identity()).unwrap();
        let (x, _) = s.eval([0.7, 1.1]).unwrap();
        let chart = s.standard_chart(&x).unwrap();
        let h = 1e-5;
        assert!(chart.height(&Vector2::zeros()).unwrap().abs() < 1e-15);
        let gx = chart.height(&Vector2::new(h, 0.0)).unwrap() - chart.height(&Vector2::new(-h, 0.0)).unwrap();
        assert!(gx.abs() / (2.0 * h) < 1e-9);
    }

    #[test]
    fn spheroid_quadric_matches_focal_definition() {
        let f1 = Vec3::new(2.2, 0.0, 0.0);
        let f2 = Vec3::new(2.0, 0.0, 0.0);
        let s = Surface::spheroid_by_foci(f1, f2, 1.2).unwrap();
        for t in [0.1, 0.9, 2.0] {
            let (x, _) = s.eval([t, 0.3 * t]).unwrap();
            assert!(((x - f1).norm() + (x - f2).norm() - 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn closest_point_on_ellipsoid_has_parallel_normal() {
        let s = Surface::ellipsoid(Vec3::new(0.1, 0.0, 0.2), [2.0, 1.0, 1.5], UnitQuaternion::identity()).unwrap();
        let p = Vec3::new(3.0, 1.0, -0.5);
        let y = s.closest_point(&p);
        assert!(s.on_surface(&y));
        assert!((p - y).normalize().cross(&s.normal(&y)).norm() < 1e-9);
    }
}
