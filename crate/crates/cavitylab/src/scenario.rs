//! Scenario descriptions and the end-to-end pipelines built on them.
//!
//! Lengths are in the units of the surface specs; time in the units of the flux horizon.

use log::info;
use serde::{Deserialize, Serialize};

use crate::bem::{assemble_y, i0_boundary, BemGeometry, DensitySolver, KernelContext};
use crate::enclosure::{
    build_enclosure, fibonacci_shell, support_bound, BoundarySample, EnclosureRegion, ProbeResult, RegionComparison,
    VoxelTest,
};
use crate::error::{config, solver, Result};
use crate::geometry::{arr3, build_quadrature, vec3, Surface, SurfaceKind, SurfaceSpec, Vec3};
use crate::heat_forward::{
    indicator_1d, indicator_radial_cavity, solve_radial, solve_rod, RadialScenario, Rod1DScenario, RodIndicator,
    TimeScheme,
};
use crate::indicator::{
    g_on_mesh, predict_leading_term, slope_fit, FluxSpec, IndicatorRow, IndicatorSample, SlopeFit, SpatialProfile,
};
use crate::path_optics::{minimize_broken_path, MinimizeOptions, MinimizerReport, MinimizerSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauLadder {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl TauLadder {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        (0..self.count).map(|k| self.min + (self.max - self.min) * k as f64 / (self.count - 1) as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.max >= self.min && self.count >= 1) || (self.count > 1 && self.max == self.min) {
            return config(format!("bad tau ladder: min {}, max {}, count {}", self.min, self.max, self.count));
        }
        Ok(())
    }
}

fn default_resolution() -> usize {
    16
}

fn default_minimizer_grid() -> usize {
    24
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSettings {
    /// Boundary-element mesh resolution; node counts grow roughly quadratically.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Uniform pair-scan resolution of the broken-path minimizer.
    #[serde(default = "default_minimizer_grid")]
    pub minimizer_grid: usize,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self { resolution: default_resolution(), minimizer_grid: default_minimizer_grid() }
    }
}

fn default_prefactor() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    /// `[τ_lo, τ_hi]`; the upper half of the ladder when absent.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    /// Exponent `k` in `I ≈ c τ^{-k} e^{-τ l}`.
    #[serde(default = "default_prefactor")]
    pub prefactor_exponent: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { window: None, prefactor_exponent: default_prefactor() }
    }
}

/// Radial time-domain solver, used when cavity and body are concentric spheres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSettings {
    pub scheme: TimeScheme,
    pub cells: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnclosureSettings {
    /// Distances of the probe shells from the body surface.
    pub shell_offsets: Vec<f64>,
    pub probes_per_shell: usize,
    /// Voxels along the longest side of the body's bounding box.
    #[serde(default = "default_voxels")]
    pub voxels: usize,
    /// Resolution of the body-boundary sample `Γ`.
    #[serde(default = "default_gamma")]
    pub gamma_resolution: usize,
    #[serde(default)]
    pub mode: VoxelTest,
}

fn default_voxels() -> usize {
    128
}

fn default_gamma() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodSettings {
    pub a: f64,
    pub rho: f64,
    /// Probe position, negative.
    pub p: f64,
    pub horizon: f64,
    pub cells: usize,
    pub steps: usize,
    pub scheme: TimeScheme,
    pub tau: TauLadder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub omega: SurfaceSpec,
    pub cavity: SurfaceSpec,
    /// Robin coefficient on the cavity wall.
    pub rho: f64,
    /// Prescribed normal flux on the body surface.
    pub flux: FluxSpec,
    pub probes: Vec<[f64; 3]>,
    pub tau: TauLadder,
    #[serde(default)]
    pub mesh: MeshSettings,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub time: Option<TimeSettings>,
    #[serde(default)]
    pub enclosure: Option<EnclosureSettings>,
    #[serde(default)]
    pub oned: Option<RodSettings>,
    /// Output directory; the command line may override it.
    #[serde(default)]
    pub output: Option<String>,
}

/// Surfaces of a validated scenario.
pub struct Resolved {
    pub omega: Surface,
    pub cavity: Surface,
}

impl ScenarioConfig {
    /// Checks that need no solver: value ranges and surface parameters.
    pub fn validate(&self) -> Result<()> {
        self.tau.validate()?;
        self.flux.validate()?;
        if !self.rho.is_finite() {
            return config("rho must be finite");
        }
        if self.mesh.resolution < 4 || self.mesh.minimizer_grid < 4 {
            return config("mesh resolutions must be at least 4");
        }
        if let Some(r) = &self.oned {
            r.tau.validate()?;
            self.rod_scenario(r).validate()?;
            if !(r.p < 0.0) {
                return config(format!("rod probe must sit at p < 0, got {}", r.p));
            }
        }
        if let Some(e) = &self.enclosure {
            if e.shell_offsets.iter().any(|h| !(*h > 0.0)) {
                return config("probe shell offsets must be positive");
            }
        }
        Surface::from_spec(&self.omega).map_err(|e| crate::Error::Config(e.to_string()))?;
        Surface::from_spec(&self.cavity).map_err(|e| crate::Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Geometry checks: the cavity strictly inside the body and probes strictly outside.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let omega = Surface::from_spec(&self.omega)?;
        let cavity = Surface::from_spec(&self.cavity)?;
        if !omega.encloses(&cavity) {
            return solver("cavity is not strictly inside the body");
        }
        for p in &self.probes {
            let p = vec3(*p);
            if omega.contains(&p) || omega.on_surface(&p) {
                return solver(format!("probe {:?} is not outside the body", arr3(&p)));
            }
        }
        Ok(Resolved { omega, cavity })
    }

    pub fn minimize_options(&self) -> MinimizeOptions {
        MinimizeOptions { grid_resolution: self.mesh.minimizer_grid, ..MinimizeOptions::default() }
    }

    fn rod_scenario(&self, r: &RodSettings) -> Rod1DScenario {
        Rod1DScenario {
            a: r.a,
            rho: r.rho,
            flux: FluxSpec::constant(-1.0, r.horizon),
            cells: r.cells,
            steps: r.steps,
            scheme: r.scheme,
        }
    }

    /// The radial shell problem when the surfaces are concentric spheres and the flux is uniform.
    pub fn radial(&self, res: &Resolved) -> Option<RadialScenario> {
        let t = self.time.as_ref()?;
        let spheres = res.omega.kind() == SurfaceKind::Sphere && res.cavity.kind() == SurfaceKind::Sphere;
        let uniform = matches!(self.flux.spatial, SpatialProfile::Constant { .. });
        if !spheres || !uniform || (res.omega.center() - res.cavity.center()).norm() > 1e-12 {
            return None;
        }
        let value = match self.flux.spatial {
            SpatialProfile::Constant { value } => value,
            _ => unreachable!(),
        };
        Some(RadialScenario {
            outer_radius: res.omega.radii()[0],
            inner_radius: res.cavity.radii()[0],
            rho: self.rho,
            flux: FluxSpec { spatial: SpatialProfile::Constant { value: 1.0 }, ..self.flux.scaled(value) },
            cells: t.cells,
            steps: t.steps,
            scheme: t.scheme,
        })
    }
}

/// Per-τ solver diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub tau: f64,
    pub operator_norm: f64,
    pub condition_estimate: f64,
    pub residual: f64,
    pub under_resolved: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOutput {
    pub scenario: String,
    pub seed: u64,
    pub probe: [f64; 3],
    pub nodes_cavity: usize,
    pub nodes_body: usize,
    pub minimizers: MinimizerSet,
    pub minimizer_report: MinimizerReport,
    pub rows: Vec<IndicatorRow>,
    pub diagnostics: Vec<SolveDiagnostics>,
    pub fit: SlopeFit,
}

/// Elliptic-route indicator over the τ ladder for probe `probe_index`, with the leading-term
/// prediction and, for concentric spheres, the time-domain indicator alongside.
pub fn run_sweep(cfg: &ScenarioConfig, probe_index: usize) -> Result<SweepOutput> {
    let res = cfg.resolve()?;
    let p = vec3(*cfg.probes.get(probe_index).ok_or_else(|| crate::Error::Config(format!("no probe #{probe_index}")))?);
    let set = minimize_broken_path(&p, &res.cavity, &res.omega, &cfg.minimize_options())?;
    let first = set.points.first().ok_or_else(|| crate::Error::Solver("no minimizer found".into()))?;
    let geom = BemGeometry::focused(res.cavity.clone(), res.omega.clone(), &first.x0, &first.y0, cfg.mesh.resolution)?;
    info!("sweep {}: {} cavity and {} body nodes, l = {:.6}", cfg.name, geom.mesh_d.len(), geom.mesh_omega.len(), set.l_value);
    let radial = match cfg.radial(&res) {
        Some(sc) => Some((solve_radial(&sc)?, p - res.omega.center())),
        None => None,
    };
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for tau in cfg.tau.values() {
        let ctx = KernelContext::constant(tau, cfg.rho)?;
        let blocks = assemble_y(&ctx, &geom)?;
        let solver = DensitySolver::new(&blocks)?;
        let g = g_on_mesh(&cfg.flux, &geom.mesh_omega, tau)?;
        let dens = solver.solve(&g)?;
        let i0 = i0_boundary(&geom, tau, &dens, &p);
        let prediction = predict_leading_term(&set, &res.cavity, &cfg.flux, &p, tau).map(|t| t.prediction).unwrap_or(f64::NAN);
        let i_td = match &radial {
            Some((run, q)) => Some(indicator_radial_cavity(run, q, tau)?),
            None => None,
        };
        info!("tau {tau}: I0 = {i0:.6e}, prediction {prediction:.6e}");
        rows.push(IndicatorRow {
            tau,
            i0,
            i_td,
            log_abs_over_tau: i0.abs().ln() / tau,
            prediction,
            ratio: i0 / prediction,
        });
        diagnostics.push(SolveDiagnostics {
            tau,
            operator_norm: blocks.norm_inf(),
            condition_estimate: solver.condition_estimate,
            residual: dens.residual,
            under_resolved: blocks.under_resolved,
        });
    }
    let samples: Vec<IndicatorSample> = rows.iter().map(|r| IndicatorSample::new(r.tau, r.i0)).collect();
    let fit = slope_fit(&samples, cfg.fit.window, cfg.fit.prefactor_exponent)?;
    Ok(SweepOutput {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        probe: arr3(&p),
        nodes_cavity: geom.mesh_d.len(),
        nodes_body: geom.mesh_omega.len(),
        minimizer_report: set.report(&res.cavity, &p),
        minimizers: set,
        rows,
        diagnostics,
        fit,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OneDOutput {
    pub seed: u64,
    pub rows: Vec<RodIndicator>,
    /// Fit of the cavity-side `Ĩ` with `k = 3`; its slope estimates `2a - p`.
    pub fit_tilde: SlopeFit,
    /// Fit of `I(τ)` with `k = 2`; estimates `2a`.
    pub fit_i: SlopeFit,
    /// Fit of the literal boundary pairing, kept to show where it loses the signal.
    pub fit_tilde_measured: Option<SlopeFit>,
}

pub fn run_oned(cfg: &ScenarioConfig) -> Result<OneDOutput> {
    cfg.validate()?;
    let r = cfg.oned.as_ref().ok_or_else(|| crate::Error::Config("scenario has no [oned] table".into()))?;
    let run = solve_rod(&cfg.rod_scenario(r))?;
    let rows: Vec<RodIndicator> = r.tau.values().iter().map(|t| indicator_1d(&run, r.p, *t)).collect::<Result<_>>()?;
    let fit = |f: &dyn Fn(&RodIndicator) -> f64, k: f64| {
        let s: Vec<IndicatorSample> = rows.iter().map(|x| IndicatorSample::new(x.tau, f(x))).collect();
        slope_fit(&s, cfg.fit.window.or(Some([r.tau.min, r.tau.max])), k)
    };
    Ok(OneDOutput {
        seed: cfg.seed,
        fit_tilde: fit(&|x| x.tilde_cavity, 3.0)?,
        fit_i: fit(&|x| x.i_cavity, 2.0)?,
        fit_tilde_measured: fit(&|x| x.tilde_measured, 3.0).ok(),
        rows,
    })
}

pub fn write_oned_csv(rows: &[RodIndicator], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "tau,tilde_cavity,tilde_measured,I_cavity,I_measured")?;
    for r in rows {
        writeln!(out, "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", r.tau, r.tilde_cavity, r.tilde_measured, r.i_cavity, r.i_measured)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportRow {
    pub probe: [f64; 3],
    pub l: f64,
    pub direction: [f64; 3],
    /// `h_D(-ω)` from the collinear formula.
    pub bound: f64,
    /// Actual support value of the cavity in the same direction.
    pub actual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnclosureOutput {
    pub seed: u64,
    pub probes: Vec<ProbeResult>,
    pub kept_voxels: usize,
    pub volume: f64,
    /// Cavity mesh nodes falling in rejected voxels.
    pub node_violations: usize,
    /// Cavity mesh nodes failing the pointwise predicate (should be none for exact lengths).
    pub pointwise_violations: usize,
    pub comparison: RegionComparison,
    /// Probes passing `2 d(p, region) ≥ l + d_∂Ω(p)`, out of `distance_checks`.
    pub distance_checks_passed: usize,
    pub distance_checks: usize,
    pub support: Vec<SupportRow>,
    #[serde(skip)]
    pub region: Option<EnclosureRegion>,
}

/// Geometric lengths for the configured probes and probe shells.
pub fn enclosure_probes(cfg: &ScenarioConfig, res: &Resolved) -> Result<Vec<ProbeResult>> {
    let opts = MinimizeOptions { grid_resolution: 16, ..cfg.minimize_options() };
    let mut points: Vec<Vec3> = cfg.probes.iter().map(|p| vec3(*p)).collect();
    if let Some(e) = &cfg.enclosure {
        let r_out = res.omega.radii().iter().cloned().fold(0.0, f64::max);
        for h in &e.shell_offsets {
            points.extend(fibonacci_shell(&res.omega.center(), r_out + h, e.probes_per_shell));
        }
    }
    points
        .iter()
        .map(|p| {
            let set = minimize_broken_path(p, &res.cavity, &res.omega, &opts)?;
            ProbeResult::new(*p, set.l_value, &res.omega)
        })
        .collect()
}

pub fn run_enclosure(cfg: &ScenarioConfig, mode: Option<VoxelTest>) -> Result<EnclosureOutput> {
    let res = cfg.resolve()?;
    let e = cfg.enclosure.clone().unwrap_or(EnclosureSettings {
        shell_offsets: vec![],
        probes_per_shell: 0,
        voxels: default_voxels(),
        gamma_resolution: default_gamma(),
        mode: VoxelTest::Center,
    });
    let probes = enclosure_probes(cfg, &res)?;
    let gm = build_quadrature(&res.omega, e.gamma_resolution)?;
    let gamma = BoundarySample::new(gm.nodes.iter().map(|n| n.x).collect())?;
    let region = build_enclosure(&probes, &gamma, &res.omega, e.voxels, mode.unwrap_or(e.mode))?;
    let dm = build_quadrature(&res.cavity, 24)?;
    let node_violations = region.violations(dm.nodes.iter().map(|n| &n.x));
    let pointwise_violations = dm
        .nodes
        .iter()
        .filter(|n| probes.iter().any(|pr| (pr.p - n.x).norm() + gamma.distance(&n.x) < pr.l))
        .count();
    // Every configured probe and an even spread of the shell probes.
    let stride = (probes.len() / 64).max(1);
    let checked: Vec<&ProbeResult> =
        probes.iter().enumerate().filter(|(k, _)| *k < cfg.probes.len() || k % stride == 0).map(|(_, p)| p).collect();
    let distance_checks_passed = checked.iter().filter(|pr| region.distance_check(pr).1).count();
    let support = cfg
        .probes
        .iter()
        .zip(&probes)
        .map(|(_, pr)| {
            let (bound, w) = support_bound(&pr.p, &res.omega, pr.l, None)?;
            let dir = -w;
            let actual = dm.nodes.iter().map(|n| n.x.dot(&dir)).fold(f64::NEG_INFINITY, f64::max);
            Ok(SupportRow { probe: arr3(&pr.p), l: pr.l, direction: arr3(&dir), bound, actual })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnclosureOutput {
        seed: cfg.seed,
        kept_voxels: region.count(),
        volume: region.volume(),
        node_violations,
        pointwise_violations,
        comparison: region.compare(&res.cavity, 4),
        distance_checks_passed,
        distance_checks: checked.len(),
        support,
        probes,
        region: Some(region),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometryOutput {
    pub probe: [f64; 3],
    pub minimizers: MinimizerSet,
    pub report: MinimizerReport,
}

/// Minimizer sets for every probe.
pub fn run_geometry(cfg: &ScenarioConfig) -> Result<Vec<GeometryOutput>> {
    let res = cfg.resolve()?;
    cfg.probes
        .iter()
        .map(|p| {
            let p = vec3(*p);
            let set = minimize_broken_path(&p, &res.cavity, &res.omega, &cfg.minimize_options())?;
            Ok(GeometryOutput { probe: arr3(&p), report: set.report(&res.cavity, &p), minimizers: set })
        })
        .collect()
}
