use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reefmap::io_formats::tables::Table;
use reefmap::io_formats::RunManifest;

const SMALL: &str = r#"
[world]
preset = "plateau_gap"

[trajectory]
start_x = 0.0
end_x = 1.0
step = 0.1

[camera]
width = 128
height = 96

[map]
resolution = 0.05
length_x = 6.0
length_y = 6.0

[seed]
value = 5
"#;

fn reefmap(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reefmap"));
    cmd.args(args).env_remove("REEFMAP_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, out: &str) -> PathBuf {
    let cfg = small_config(dir);
    let out = dir.join(out);
    let o = reefmap(&["simulate", "--config", s(&cfg), "--out", s(&out)], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn missing_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = reefmap(&["simulate", "--config", "/nonexistent/x.toml", "--out", s(dir.path())], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let o = reefmap(&["simulate", "--out", s(dir.path())], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_field_exits_two_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[map]\nresolution = 0.0\n").unwrap();
    let o = reefmap(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("map.resolution"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn simulate_writes_outputs_and_evaluate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), "run");
    for f in ["map.egrid", "truth.egrid", "steps.csv", "config.toml", "variance.pgm", "variance.pgm.txt", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let steps = Table::from_bytes(&fs::read(out.join("steps.csv")).unwrap()).unwrap();
    assert_eq!(steps.rows.len(), 11);

    let eval = |sections: &str| reefmap(&["evaluate", "--out", s(&out), "--sections", sections], &[]);
    assert!(eval("0,1.35").status.success());
    let files = ["metrics.csv", "cross_section.csv", "error_map.pgm", "error_map.pgm.txt"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    assert!(eval("0,1.35").status.success());
    let second: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    assert_eq!(first, second);

    let metrics = Table::from_bytes(&first[0]).unwrap();
    for col in ["region", "max_error", "rmse", "coverage"] {
        assert!(metrics.column(col).is_some(), "missing column {col}");
    }
    let regions: Vec<&str> = metrics.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(regions, ["all", "corridor", "gap", "plateau_top"]);

    let manifest = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, 5);
    for f in files {
        assert!(manifest.outputs.iter().any(|o| o.path == f));
    }
    assert_eq!(fs::read_dir(&out).unwrap().count(), 11);

    assert_ne!(eval("99").status.code(), Some(0));
}

#[test]
fn tampered_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), "run");
    let path = out.join("map.egrid");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    let o = reefmap(&["evaluate", "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());
}

#[test]
fn simulate_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a");
    let b = simulate(dir.path(), "b");
    for f in ["map.egrid", "truth.egrid", "steps.csv", "config.toml", "variance.pgm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_rows_and_monotone_variance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sweep");
    let o = reefmap(&["sweep", "--config", s(&cfg), "--eps", "0,0.25,0.5", "--out", s(&out)], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = Table::from_bytes(&fs::read(out.join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 3);
    assert_eq!(table.numbers("epsilon").unwrap(), vec![0.0, 0.25, 0.5]);
    let v = table.numbers("mean_range_variance").unwrap();
    assert_eq!(v[0], 0.0);
    assert!(v.windows(2).all(|w| w[1] > w[0]), "{v:?}");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn epsilon_out_of_range_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("o");
    let o = reefmap(&["sweep", "--config", s(&cfg), "--eps", "0,1.5", "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = reefmap(&["simulate", "--config", s(&cfg), "--eps", "-0.1", "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = reefmap(&["sweep", "--config", s(&cfg), "--eps", "0,abc", "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn seed_precedence_config_env_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let seed_of = |out: &str, extra: &[&str], envs: &[(&str, &str)]| {
        let out = dir.path().join(out);
        let mut args = vec!["sweep", "--config", s(&cfg), "--eps", "0", "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = reefmap(&args, envs);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        RunManifest::read(&out.join("manifest.json")).unwrap().seed
    };
    assert_eq!(seed_of("a", &[], &[]), 5);
    assert_eq!(seed_of("b", &[], &[("REEFMAP_SEED", "9")]), 9);
    assert_eq!(seed_of("c", &["--seed", "11"], &[("REEFMAP_SEED", "9")]), 11);
    let o = reefmap(&["sweep", "--config", s(&cfg), "--out", s(&dir.path().join("d"))], &[("REEFMAP_SEED", "x")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_without_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = reefmap(&["evaluate", "--out", s(dir.path())], &[]);
    assert_eq!(o.status.code(), Some(3));
}
