//! Outer bounds on the cavity from recovered broken-path lengths.
//!
//! For a probe `p` with length `l` and a body-boundary sample `y`, the cavity lies in
//! `E_p(y) = {x : |p - x| + |x - y| ≥ l}`. Over a finite sample `Γ` the binding `y` for a
//! given `x` is always the nearest one, so the voxel predicate reduces to
//! `min_p (|p - x| - l_p) + dist(x, Γ) ≥ 0`. The left side is 2-Lipschitz in `x`, which is
//! what the conservative voxel test uses.

use std::io::Write;
use std::path::Path;

use bitvec::prelude::*;
use kiddo::{ImmutableKdTree, SquaredEuclidean};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{arr3, Surface, Vec3};

/// `|p - x| + |x - y| ≥ l`, boundary included.
pub fn ellipsoid_membership(x: &Vec3, p: &Vec3, y: &Vec3, l: f64) -> bool {
    (p - x).norm() + (x - y).norm() >= l
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub p: Vec3,
    pub l: f64,
    /// Distance from `p` to the body boundary.
    pub d_boundary: f64,
}

impl ProbeResult {
    pub fn new(p: Vec3, l: f64, omega: &Surface) -> Result<Self> {
        let d = omega.signed_distance(&p);
        if d <= 0.0 {
            return domain(format!("probe {:?} is not outside the body", arr3(&p)));
        }
        if !(l >= d) {
            return domain(format!("length {l} is below the probe distance {d} to the body"));
        }
        Ok(Self { p, l, d_boundary: d })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoxelTest {
    /// Keep a voxel when its center passes. Tight, not guaranteed.
    #[default]
    Center,
    /// Keep a voxel when any point of it could pass: center, corners, and the Lipschitz
    /// margin of the predicate over the half diagonal.
    Conservative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    /// Corner of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl VoxelGrid {
    /// Cubic voxels covering the bounding box of `surface` with `resolution` along its longest side.
    pub fn covering(surface: &Surface, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return domain(format!("voxel resolution must be at least 2, got {resolution}"));
        }
        let (lo, hi) = surface.bounding_box();
        let ext = hi - lo;
        let spacing = ext.max() / resolution as f64;
        let dims = [0, 1, 2].map(|k| ((ext[k] / spacing).ceil() as usize).max(1));
        Ok(Self { origin: arr3(&lo), spacing, dims })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// x fastest, then y, then z.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        [i, j, idx / (self.dims[0] * self.dims[1])]
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.ijk(idx);
        Vec3::new(
            self.origin[0] + (i as f64 + 0.5) * self.spacing,
            self.origin[1] + (j as f64 + 0.5) * self.spacing,
            self.origin[2] + (k as f64 + 0.5) * self.spacing,
        )
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * 3f64.sqrt() * self.spacing
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    /// Voxel containing `x`, if inside the grid.
    pub fn locate(&self, x: &Vec3) -> Option<usize> {
        let mut c = [0usize; 3];
        for k in 0..3 {
            let f = (x[k] - self.origin[k]) / self.spacing;
            if f < 0.0 || f >= self.dims[k] as f64 {
                return None;
            }
            c[k] = f as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }
}

#[derive(Clone, Debug)]
pub struct EnclosureRegion {
    pub grid: VoxelGrid,
    pub mode: VoxelTest,
    /// "Possibly contains the cavity", one bit per voxel.
    pub cells: BitVec<u64, Lsb0>,
    pub probes: usize,
}

/// Nearest-neighbour distance to the sample `Γ`.
pub struct BoundarySample {
    tree: ImmutableKdTree<f64, 3>,
    pub points: Vec<Vec3>,
}

impl BoundarySample {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return domain("boundary sample is empty");
        }
        let raw: Vec<[f64; 3]> = points.iter().map(arr3).collect();
        let tree = ImmutableKdTree::new_from_slice(&raw).map_err(|e| crate::Error::Domain(format!("k-d tree: {e:?}")))?;
        Ok(Self { tree, points })
    }

    pub fn distance(&self, x: &Vec3) -> f64 {
        self.tree.query(&arr3(x)).nearest_one::<SquaredEuclidean<f64>>().execute().distance.sqrt()
    }
}

/// Intersection of `E_p(y)` over all probes and all `y ∈ Γ`, clipped to the body.
pub fn build_enclosure(
    probes: &[ProbeResult],
    gamma: &BoundarySample,
    omega: &Surface,
    resolution: usize,
    mode: VoxelTest,
) -> Result<EnclosureRegion> {
    for pr in probes {
        if omega.contains(&pr.p) || omega.on_surface(&pr.p) {
            return domain(format!("probe {:?} is not outside the body", arr3(&pr.p)));
        }
    }
    let grid = VoxelGrid::covering(omega, resolution)?;
    let margin = match mode {
        VoxelTest::Center => 0.0,
        VoxelTest::Conservative => 2.0 * grid.half_diagonal(),
    };
    let hd = grid.half_diagonal();
    let keep: Vec<bool> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || 0usize,
            |last, idx| {
                let x = grid.center(idx);
                let inside = match mode {
                    VoxelTest::Center => omega.contains(&x),
                    VoxelTest::Conservative => {
                        omega.contains(&x) || (omega.level_distance(&x) < 4.0 * hd && omega.signed_distance(&x) <= hd)
                    }
                };
                if !inside || probes.is_empty() {
                    return inside;
                }
                let dg = gamma.distance(&x);
                // Try the probe that rejected the previous voxel first.
                let fails = |pr: &ProbeResult| (pr.p - x).norm() - pr.l + dg < -margin;
                if fails(&probes[*last % probes.len()]) {
                    return false;
                }
                match probes.iter().position(fails) {
                    Some(k) => {
                        *last = k;
                        false
                    }
                    None => true,
                }
            },
        )
        .collect();
    let cells: BitVec<u64, Lsb0> = keep.into_iter().collect();
    info!("enclosure: {} of {} voxels kept", cells.count_ones(), grid.len());
    Ok(EnclosureRegion { grid, mode, cells, probes: probes.len() })
}

/// Probes on the sphere of radius `radius` about `center`, Fibonacci-spaced.
pub fn fibonacci_shell(center: &Vec3, radius: f64, count: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let s = (1.0 - z * z).sqrt();
            let a = golden * k as f64;
            center + radius * Vec3::new(s * a.cos(), s * a.sin(), z)
        })
        .collect()
}

/// `h_D(-ω)` with `ω = (y_min - p)/|y_min - p|`, `y_min` the nearest body point to `p`.
/// Valid only when the reflection minimizer is collinear with `p` and `y_min`; the caller
/// vouches for that.
pub fn support_bound(p: &Vec3, omega: &Surface, l: f64, y_min: Option<Vec3>) -> Result<(f64, Vec3)> {
    if !(omega.kappa_min() > 0.0) {
        return domain("support bound needs a strictly convex body");
    }
    if omega.contains(p) {
        return domain("probe must be outside the body");
    }
    let y = y_min.unwrap_or_else(|| omega.closest_point(p));
    let d = (y - p).norm();
    let w = (y - p) / d;
    Ok((-p.dot(&w) - 0.5 * (d + l), w))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionComparison {
    /// Volume of the region minus the reference, and vice versa, from sub-sampled boundary voxels.
    pub excess_volume: f64,
    pub missing_volume: f64,
    pub reference_volume: f64,
    /// `(excess + missing) / reference`.
    pub relative_symmetric_difference: f64,
    /// Largest distance from a kept voxel center to the reference body.
    pub excess_hausdorff: f64,
    /// Largest distance from a reference voxel center to the nearest kept voxel center.
    pub missing_hausdorff: f64,
    pub spacing: f64,
}

impl EnclosureRegion {
    pub fn contains_voxel(&self, idx: usize) -> bool {
        self.cells[idx]
    }

    /// Whether the voxel holding `x` is kept; points outside the grid are not.
    pub fn contains_point(&self, x: &Vec3) -> bool {
        self.grid.locate(x).is_some_and(|i| self.cells[i])
    }

    pub fn count(&self) -> usize {
        self.cells.count_ones()
    }

    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.grid.voxel_volume()
    }

    /// Points that fall in a rejected voxel.
    pub fn violations<'a>(&self, points: impl IntoIterator<Item = &'a Vec3>) -> usize {
        points.into_iter().filter(|x| !self.contains_point(x)).count()
    }

    /// Distance from `p` to the nearest kept voxel center.
    pub fn distance_from(&self, p: &Vec3) -> f64 {
        self.cells.iter_ones().map(|i| (self.grid.center(i) - p).norm()).fold(f64::INFINITY, f64::min)
    }

    /// `2 d(p, region) ≥ l + d_∂Ω(p)`, allowing one half diagonal of voxel slack.
    pub fn distance_check(&self, probe: &ProbeResult) -> (f64, bool) {
        let d = self.distance_from(&probe.p);
        (d, 2.0 * (d + self.grid.half_diagonal()) >= probe.l + probe.d_boundary)
    }

    /// Compare with the solid bounded by `reference`, sub-sampling voxels near its surface.
    pub fn compare(&self, reference: &Surface, subsamples: usize) -> RegionComparison {
        let g = &self.grid;
        let hd = g.half_diagonal();
        let n = subsamples.max(1);
        let frac = |idx: usize| -> f64 {
            let c = g.center(idx);
            if reference.level_distance(&c) > 3.0 * hd {
                return if reference.contains(&c) { 1.0 } else { 0.0 };
            }
            let mut inside = 0usize;
            for a in 0..n {
                for b in 0..n {
                    for e in 0..n {
                        let off = Vec3::new(a as f64, b as f64, e as f64).map(|v| ((v + 0.5) / n as f64 - 0.5) * g.spacing);
                        inside += reference.contains(&(c + off)) as usize;
                    }
                }
            }
            inside as f64 / (n * n * n) as f64
        };
        let (excess, missing, refv) = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let f = frac(i);
                if self.cells[i] {
                    (1.0 - f, 0.0, f)
                } else {
                    (0.0, f, f)
                }
            })
            .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
        let vol = g.voxel_volume();
        let excess_hausdorff = self
            .cells
            .iter_ones()
            .map(|i| {
                let c = g.center(i);
                if reference.contains(&c) {
                    0.0
                } else {
                    reference.signed_distance(&c).max(0.0)
                }
            })
            .fold(0.0, f64::max);
        let missing_hausdorff = (0..g.len())
            .filter(|&i| !self.cells[i] && reference.contains(&g.center(i)))
            .map(|i| self.nearest_kept(i))
            .fold(0.0, f64::max);
        RegionComparison {
            excess_volume: excess * vol,
            missing_volume: missing * vol,
            reference_volume: refv * vol,
            relative_symmetric_difference: (excess + missing) / refv,
            excess_hausdorff,
            missing_hausdorff,
            spacing: g.spacing,
        }
    }

    /// Distance from voxel `idx` to the nearest kept voxel center, searching outward shell by shell.
    fn nearest_kept(&self, idx: usize) -> f64 {
        let g = &self.grid;
        let [i, j, k] = g.ijk(idx).map(|v| v as i64);
        let c = g.center(idx);
        let maxr = *g.dims.iter().max().unwrap() as i64;
        let mut best = f64::INFINITY;
        for r in 1..=maxr {
            if (r as f64 - 1.0) * g.spacing > best {
                break;
            }
            for a in -r..=r {
                for b in -r..=r {
                    for e in -r..=r {
                        if a.abs().max(b.abs()).max(e.abs()) != r {
                            continue;
                        }
                        let (x, y, z) = (i + a, j + b, k + e);
                        if x < 0 || y < 0 || z < 0 || x >= g.dims[0] as i64 || y >= g.dims[1] as i64 || z >= g.dims[2] as i64 {
                            continue;
                        }
                        let q = g.index(x as usize, y as usize, z as usize);
                        if self.cells[q] {
                            best = best.min((g.center(q) - c).norm());
                        }
                    }
                }
            }
        }
        best
    }

    pub fn header(&self, seed: u64) -> RegionHeader {
        RegionHeader {
            seed,
            dims: self.grid.dims,
            spacing: self.grid.spacing,
            origin: self.grid.origin,
            mode: self.mode,
            probes: self.probes,
            kept: self.count(),
            bit_order: "x fastest, then y, then z; bit i of byte b is voxel 8b+i".into(),
        }
    }

    /// Packed bits, least significant bit first within each byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.grid.len().div_ceil(8)];
        for i in self.cells.iter_ones() {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_bytes(header: &RegionHeader, bytes: &[u8]) -> Result<Self> {
        let grid = VoxelGrid { origin: header.origin, spacing: header.spacing, dims: header.dims };
        if bytes.len() != grid.len().div_ceil(8) {
            return domain(format!("bitset has {} bytes, expected {}", bytes.len(), grid.len().div_ceil(8)));
        }
        let cells = (0..grid.len()).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(Self { grid, mode: header.mode, cells, probes: header.probes })
    }

    /// `#` for kept voxels in the z-slice `k`, rows printed with y decreasing.
    pub fn ascii_slice(&self, k: usize) -> String {
        let g = &self.grid;
        let mut s = String::with_capacity((g.dims[0] + 1) * g.dims[1]);
        for j in (0..g.dims[1]).rev() {
            for i in 0..g.dims[0] {
                s.push(if self.cells[g.index(i, j, k)] { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    /// Writes `<stem>.bits`, `<stem>.json` and `<stem>_slice.txt` (the middle z-slice).
    pub fn export(&self, dir: &Path, stem: &str, seed: u64) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.bits")), self.to_bytes())?;
        let header = serde_json::to_string_pretty(&self.header(seed)).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("{stem}.json")), header)?;
        let mut f = std::fs::File::create(dir.join(format!("{stem}_slice.txt")))?;
        write!(f, "{}", self.ascii_slice(self.grid.dims[2] / 2))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionHeader {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
    pub mode: VoxelTest,
    pub probes: usize,
    pub kept: usize,
    pub bit_order: String,
}
