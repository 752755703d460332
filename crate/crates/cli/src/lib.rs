//! Scenario files in, CSV and JSON artifacts out.

use std::fs;
use std::path::{Path, PathBuf};

use cavitylab::checks::run_checks;
use cavitylab::indicator::write_indicator_csv;
use cavitylab::scenario::{run_enclosure, run_geometry, run_oned, run_sweep, write_oned_csv, ScenarioConfig, TauLadder};
use cavitylab::Error;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "cavitylab", version, about = "Enclosure-method experiments for a cavity in a heat conductor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Indicator over the tau ladder for every probe, with slope fit and minimizer report.
    Sweep,
    /// Run an invariant suite and write a JSON report.
    Checks,
    /// Build the voxel enclosure of the cavity from the probe set.
    Enclose,
    /// The one-dimensional rod experiment.
    Oned,
    /// Dump the minimizing pairs of the broken path for every probe.
    Geometry,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to the scenario's `output`, else `out/<name>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tau_min: Option<f64>,
    #[arg(long, global = true)]
    pub tau_max: Option<f64>,
    #[arg(long, global = true)]
    pub tau_count: Option<usize>,
    /// Boundary-element mesh resolution.
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suite for `checks`: geometry, optics, kernels, laplace, flux or all.
    #[arg(long, global = true, default_value = "all")]
    pub suite: String,
}

/// Exit status classes: 2 for anything wrong with the scenario file or flags, 3 for failures
/// inside the pipeline, including geometry the solvers reject.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn emit_config(cfg: &ScenarioConfig) -> Result<String, CliError> {
    toml::to_string_pretty(cfg).map_err(|e| CliError::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Command-line values take precedence over the file.
pub fn apply_overrides(cfg: &mut ScenarioConfig, o: &Overrides) -> Result<(), CliError> {
    let TauLadder { min, max, count } = cfg.tau.clone();
    cfg.tau = TauLadder { min: o.tau_min.unwrap_or(min), max: o.tau_max.unwrap_or(max), count: o.tau_count.unwrap_or(count) };
    if let Some(r) = o.resolution {
        cfg.mesh.resolution = r;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Solver(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct Header<'a, T: Serialize> {
    scenario: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn with_header<T: Serialize>(cfg: &ScenarioConfig, body: T) -> Header<'_, T> {
    Header { scenario: &cfg.name, seed: cfg.seed, body }
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let path = cli.opts.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = load_config(path)?;
    apply_overrides(&mut cfg, &cli.opts)?;
    let out = cli
        .opts
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    match cli.command {
        Command::Sweep => {
            for k in 0..cfg.probes.len() {
                let s = run_sweep(&cfg, k)?;
                let csv = out.join(format!("indicator_p{k}.csv"));
                write_indicator_csv(&s.rows, fs::File::create(&csv)?)?;
                let mins = out.join(format!("minimizers_p{k}.json"));
                write_json(&mins, &with_header(&cfg, &s.minimizers))?;
                let fit = out.join(format!("slope_fit_p{k}.json"));
                write_json(&fit, &with_header(&cfg, &s.fit))?;
                let full = out.join(format!("sweep_p{k}.json"));
                write_json(&full, &s)?;
                info!("probe {k}: l estimate {:.6} (geometric {:.6})", s.fit.estimate, s.minimizers.l_value);
                println!("probe {k}: l_fit = {:.6}, l_geometric = {:.6}", s.fit.estimate, s.minimizers.l_value);
                written.extend([csv, mins, fit, full]);
            }
        }
        Command::Checks => {
            let report = run_checks(&cfg, &cli.opts.suite)?;
            let p = out.join(format!("checks_{}.json", cli.opts.suite));
            write_json(&p, &report)?;
            for e in &report.entries {
                println!("[{}] {}: {}", if e.pass { "PASS" } else { "FAIL" }, e.suite, e.name);
            }
            written.push(p);
        }
        Command::Enclose => {
            let e = run_enclosure(&cfg, None)?;
            if let Some(region) = &e.region {
                region.export(&out, "region", cfg.seed)?;
                written.extend(["region.bits", "region.json", "region_slice.txt"].map(|f| out.join(f)));
            }
            let p = out.join("enclosure.json");
            write_json(&p, &with_header(&cfg, &e))?;
            println!(
                "kept {} voxels, volume {:.4}, symmetric difference {:.2}% of the cavity, {} node violations",
                e.kept_voxels,
                e.volume,
                100.0 * e.comparison.relative_symmetric_difference,
                e.node_violations
            );
            written.push(p);
        }
        Command::Oned => {
            let o = run_oned(&cfg)?;
            let csv = out.join("oned.csv");
            write_oned_csv(&o.rows, fs::File::create(&csv)?)?;
            let p = out.join("oned.json");
            write_json(&p, &with_header(&cfg, &o))?;
            println!("cavity-side slope {:.5}, I(tau) slope {:.5}", o.fit_tilde.estimate, o.fit_i.estimate);
            written.extend([csv, p]);
        }
        Command::Geometry => {
            let g = run_geometry(&cfg)?;
            let p = out.join("geometry.json");
            #[derive(Serialize)]
            struct Probes<T> {
                probes: T,
            }
            write_json(&p, &with_header(&cfg, Probes { probes: &g }))?;
            for (k, r) in g.iter().enumerate() {
                println!("probe {k}: l = {:.6}, {} minimizing pair(s)", r.report.l_value, r.report.points.len());
            }
            written.push(p);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
rho = 0.0
probes = [[3.0, 0.0, 0.0]]
omega = { kind = "sphere", center = [0.0, 0.0, 0.0], radius = 2.0 }
cavity = { kind = "sphere", center = [0.0, 0.0, 0.0], radius = 1.0 }
flux = { horizon = 1.0, spatial = { kind = "constant", value = 1.0 }, time = { kind = "constant", value = 1.0 } }
tau = { min = 10.0, max = 20.0, count = 3 }
"#;

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        let o = Overrides { tau_max: Some(30.0), resolution: Some(8), seed: Some(4), ..Default::default() };
        apply_overrides(&mut cfg, &o).unwrap();
        assert_eq!((cfg.tau.min, cfg.tau.max, cfg.tau.count), (10.0, 30.0, 3));
        assert_eq!(cfg.mesh.resolution, 8);
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn invalid_override_is_a_config_error() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        let o = Overrides { tau_count: Some(0), ..Default::default() };
        assert_eq!(apply_overrides(&mut cfg, &o).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::Solver("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(std::io::Error::other("x")).exit_code(), 3);
    }
}
