use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cavitylab_cli::{emit_config, load_config, parse_config};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn cavitylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavitylab")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn bundled_scenarios_round_trip_through_toml() {
    for name in ["concentric.toml", "offcenter.toml"] {
        let cfg = load_config(&scenario(name)).unwrap();
        let again = parse_config(&emit_config(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "name = \"x\"\nrho = \"not a number\"\n");
    let out = cavitylab(&["geometry", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("concentric.toml")).unwrap() + "\nbogus = 1\n";
    // Appended after the last table, so it lands inside [oned].
    let p = write(dir.path(), "extra.toml", &text);
    let out = cavitylab(&["geometry", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_tau_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let c = scenario("concentric.toml");
    let out = cavitylab(&["sweep", "--config", c.to_str().unwrap(), "--tau-min", "-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let c = scenario("concentric.toml");
    let out = cavitylab(&["checks", "--config", c.to_str().unwrap(), "--suite", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_and_bad_flags_exit_2() {
    assert_eq!(cavitylab(&["sweep"]).status.code(), Some(2));
    assert_eq!(cavitylab(&["sweep", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(cavitylab(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn cavity_outside_body_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("offcenter.toml"))
        .unwrap()
        .replace("center = [0.3, 0.0, 0.0]", "center = [1.8, 0.0, 0.0]");
    assert!(text.contains("[1.8, 0.0, 0.0]"));
    let p = write(dir.path(), "outside.toml", &text);
    let out = cavitylab(&["geometry", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn geometry_writes_minimizers_with_seed() {
    let dir = tempfile::tempdir().unwrap();
    let c = scenario("offcenter.toml");
    let out = cavitylab(&["geometry", "--config", c.to_str().unwrap(), "--seed", "99", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("geometry.json")).unwrap()).unwrap();
    assert_eq!(v["seed"], 99);
    assert_eq!(v["scenario"], "offcenter");
    let l = v["probes"][0]["minimizers"]["l_value"].as_f64().unwrap();
    assert!((l - 3.4).abs() < 1e-9);
}

#[test]
fn oned_recovers_the_rod_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let c = scenario("concentric.toml");
    let out = cavitylab(&["oned", "--config", c.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("oned.json")).unwrap()).unwrap();
    assert!((v["fit_tilde"]["estimate"].as_f64().unwrap() - 2.5).abs() < 0.075);
    assert!((v["fit_i"]["estimate"].as_f64().unwrap() - 2.0).abs() < 0.06);
    assert_eq!(v["seed"], 7);
}

fn small_sweep(dir: &Path) -> Output {
    let c = scenario("concentric.toml");
    cavitylab(&[
        "sweep",
        "--config",
        c.to_str().unwrap(),
        "--resolution",
        "6",
        "--tau-min",
        "15",
        "--tau-max",
        "30",
        "--tau-count",
        "4",
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn sweep_artifacts_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = small_sweep(a.path());
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(small_sweep(b.path()).status.success());
    let csv = std::fs::read_to_string(a.path().join("indicator_p0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "tau,I0,I_td,log_abs_over_tau,prediction,ratio");
    assert_eq!(lines.count(), 4);
    for f in ["indicator_p0.csv", "minimizers_p0.json", "slope_fit_p0.json", "sweep_p0.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.path().join("slope_fit_p0.json")).unwrap()).unwrap();
    assert_eq!(fit["seed"], 7);
    assert!((fit["estimate"].as_f64().unwrap() - 1.2).abs() < 0.06);
}

#[test]
fn checks_report_for_one_suite() {
    let dir = tempfile::tempdir().unwrap();
    let c = scenario("concentric.toml");
    let out = cavitylab(&["checks", "--config", c.to_str().unwrap(), "--suite", "geometry", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("checks_geometry.json")).unwrap()).unwrap();
    assert_eq!(v["all_pass"], true);
    assert_eq!(v["seed"], 7);
}
