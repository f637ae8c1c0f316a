use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn jtame(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jtame"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .expect("binary runs")
}

fn with_config(dir: &TempDir, text: &str) -> String {
    let p = dir.path().join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn report(dir: &TempDir) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap()
}

fn find<'a>(rep: &'a Value, list: &str, name: &str) -> &'a Value {
    rep[list].as_array().unwrap().iter().find(|v| v["name"] == name).unwrap_or_else(|| panic!("no {list} entry {name}"))
}

const TRIVIAL: &str = r#"
[scenario]
kind = "inflate-trivial"
t_target = 5.0
eps1 = 0.5
eps2 = 1.0
[scenario.model]
r_max = 0.3
family = { skew = { kind = "constant", a = 0.8, b = 0.0 }, twist = [1.5, 0.0] }
"#;

#[test]
fn inflate_trivial_writes_profile_and_class_shift() {
    let dir = TempDir::new().unwrap();
    let cfg = with_config(&dir, TRIVIAL);
    let out = jtame(dir.path(), &["inflate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let mut rd = csv::Reader::from_path(dir.path().join("out/profile.csv")).unwrap();
    let head: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(head, ["r", "f", "f_prime", "a", "b", "margin", "sufficient_condition"]);
    assert!(rd.records().count() > 10);
    let shift = find(&report(&dir), "outputs", "class_shift")["value"].as_f64().unwrap();
    assert!((shift - 5.0).abs() < 0.05, "{shift}");
}

#[test]
fn linear_sweep_margin_column_follows_the_law() {
    let dir = TempDir::new().unwrap();
    let cfg = with_config(&dir, "seed = 11\n[scenario]\nkind = \"linear-sweep\"\nn_values = [0.0, 0.7, 1.9, 2.5]\n");
    let out = jtame(dir.path(), &["linear", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let mut rd = csv::Reader::from_path(dir.path().join("out/linear_sweep.csv")).unwrap();
    let head = rd.headers().unwrap().clone();
    let (i_n, i_m) = (head.iter().position(|h| h == "n").unwrap(), head.iter().position(|h| h == "margin").unwrap());
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        let n: f64 = rec[i_n].parse().unwrap();
        let m: f64 = rec[i_m].parse().unwrap();
        assert!((m - (1.0 - n / 2.0)).abs() < 1e-9, "N = {n}: {m}");
        rows += 1;
    }
    assert_eq!(rows, 4);
}

#[test]
fn prepare_reaches_zero_skew_along_the_curve() {
    let dir = TempDir::new().unwrap();
    let cfg = with_config(
        &dir,
        "[scenario]\nkind = \"prepare\"\nfamily = { skew = { kind = \"constant\", a = 1.0, b = 0.0 } }\n[scenario.grid]\nn_z = 12\nn_w = 9\nradius = 0.5\n",
    );
    let out = jtame(dir.path(), &["prepare", "--config", &cfg, "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("out/trace.json").exists());
    assert!(dir.path().join("out/steps.csv").exists());
    let n = find(&report(&dir), "outputs", "final_n_along_z")["value"].as_f64().unwrap();
    assert!(n < 1e-6, "{n}");
}

#[test]
fn selftest_with_impossible_tolerances_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = with_config(&dir, "[tolerances]\nstructural = 1e-15\nderived = 1e-15\nsampled = 1e-15\n");
    let out = jtame(dir.path(), &["selftest", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    assert_eq!(report(&dir)["passed"], Value::Bool(false));
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let cases: [(&str, &str, &str); 4] = [
        ("inflate", "[scenario]\nkind = \"inflate-trivial\"\nbogus = 1\n", "config"),
        (
            "inflate",
            "[scenario]\nkind = \"inflate-negative\"\nm = 2\nm_prime = 0.6\n[scenario.model]\nr_max = 0.3\nfamily = { skew = { kind = \"constant\", a = 0.6, b = 0.0 } }\n",
            "1/m = 0.5",
        ),
        ("linear", "[scenario]\nkind = \"linear-sweep\"\n", "seed"),
        ("isotopy", "seed = 1\n[scenario]\nkind = \"linear-sweep\"\n", "does not belong"),
    ];
    for (cmd, text, needle) in cases {
        let cfg = with_config(&dir, text);
        let out = jtame(dir.path(), &[cmd, "--config", &cfg]);
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{cmd}: {err}");
        assert!(err.contains(needle), "{cmd}: {err}");
    }
    let out = jtame(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = jtame(dir.path(), &["inflate", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
