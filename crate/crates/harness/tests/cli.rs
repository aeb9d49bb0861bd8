use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridguard::{fixtures, synth};

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn gridguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridguard"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn committed_grids_match_their_builders() {
    for (file, grid) in [
        ("triangle.json", fixtures::triangle()),
        ("stress_triangle.json", fixtures::stress_triangle()),
        ("grid36.json", synth::grid36()),
    ] {
        let text = fs::read_to_string(data().join(file)).unwrap();
        assert_eq!(text, grid.to_json(), "{file} is stale; rerun the export_grids example");
    }
    let csv = fs::read_to_string(data().join("scenarios/stress_triangle/stress-ramp.csv")).unwrap();
    assert_eq!(csv, fixtures::stress_ramp_scenario(30).to_csv(&fixtures::stress_triangle()));
}

#[test]
fn exit_codes() {
    assert_eq!(gridguard(&["eval", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(gridguard(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(gridguard(&["--help"]).status.code(), Some(0));
    let out = gridguard(&["eval", "--grid", "/nonexistent.json", "--scenarios", "/nowhere", "--policy", "do-nothing"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    // trained policies need weights
    let grid = data().join("stress_triangle.json");
    let sc = data().join("scenarios/stress_triangle");
    let out = gridguard(&["eval", "--grid", path(&grid), "--scenarios", path(&sc), "--policy", "physics-guided"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_emits_metrics_json() {
    let grid = data().join("stress_triangle.json");
    let sc = data().join("scenarios/stress_triangle");
    let out = gridguard(&["eval", "--grid", path(&grid), "--scenarios", path(&sc), "--policy", "do-nothing"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["avg_survival_time"], 11.0);
    assert_eq!(m["pct_do_nothing"], 100.0);
    assert_eq!(m["catalog_size"], 7);
}

#[test]
fn eval_metrics_validate_against_schema() {
    let schema: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/eval_metrics.schema.json")).unwrap(),
    )
    .unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let cfg = data().join("run.json");
    for policy in ["do-nothing", "reconnection"] {
        let out = gridguard(&["eval", "--config", path(&cfg), "--policy", policy, "--seed", "3"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let errors: Vec<String> = validator.iter_errors(&m).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{policy}: {errors:?}");
        assert_eq!(m["catalog_size"], 169);
    }
    let mut broken = serde_json::to_value(gridguard::metrics::aggregate("x", &[], 3)).unwrap();
    broken["pct_removal"] = serde_json::json!(120.0);
    assert!(!validator.is_valid(&broken));
}

#[test]
fn gen_scenarios_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let grid = data().join("grid36.json");
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = gridguard(&[
            "gen-scenarios", "--grid", path(&grid), "--count", "3", "--length", "20", "--profile", "stress-ramp",
            "--seed", "11", "--out", path(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<String> = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["stress-ramp-0000.csv", "stress-ramp-0001.csv", "stress-ramp-0002.csv"]);
    for n in &names {
        assert_eq!(fs::read(dir.path().join("a").join(n)).unwrap(), fs::read(dir.path().join("b").join(n)).unwrap());
    }
    let committed = fs::read_dir(data().join("scenarios/grid36")).unwrap().count();
    assert_eq!(committed, 6);
}

#[test]
fn sens_dumps_triangle_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let status = dir.path().join("status.csv");
    fs::write(&status, "line,status\n2,0\n").unwrap();
    let grid = data().join("triangle.json");
    let o = gridguard(&["sens", "--grid", path(&grid), "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ptdf = fs::read_to_string(dir.path().join("ptdf.csv")).unwrap();
    let rows: Vec<Vec<&str>> = ptdf.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["line", "1", "2", "3"]);
    assert_eq!(rows[1][0], "1");
    assert_eq!(rows[1][2], "-6.66666666667e-1");
    let v: f64 = rows[1][2].parse().unwrap();
    assert!((v + 2.0 / 3.0).abs() < 1e-11);

    let o = gridguard(&["sens", "--grid", path(&grid), "--status", path(&status)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    // with line 2 out the other two are bridges
    let lodf: Vec<&str> = text.split("\n\n").nth(1).unwrap().lines().collect();
    assert_eq!(lodf[0], "line,1,2,3");
    assert!(lodf[1..].iter().all(|r| r.split(',').skip(1).all(|c| c == "NaN")));
}

#[test]
fn whatif_previews_the_scripted_removal() {
    let cfg = data().join("stress_run.json");
    let o = gridguard(&["whatif", "--config", path(&cfg), "--action", "3", "--step", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["step"], 8);
    assert_eq!(r["action_id"], 3);
    // full stress: line 2-3 picks up all 2.5 MW of its 2.75 MW limit
    let m: Vec<f64> = r["predicted_margins"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((m[1] - 1.0 / 1.1).abs() < 1e-12, "{m:?}");
    assert_eq!(m[2], 0.0);
    let o = gridguard(&["whatif", "--config", path(&cfg), "--action", "4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("already connected"));
}

#[test]
fn train_writes_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data().join("stress_run.json");
    let o = gridguard(&["train", "--config", path(&cfg), "--steps", "120", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.bin", "checkpoint.json", "train_log.csv", "actions.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(meta["step"], 120);
    let actions = fs::read_to_string(dir.path().join("actions.csv")).unwrap();
    assert_eq!(actions.lines().count(), 1 + 7);

    let resumed = dir.path().join("resumed");
    let ck = dir.path().join("checkpoint.bin");
    let o = gridguard(&["train", "--config", path(&cfg), "--steps", "30", "--out", path(&resumed), "--resume", path(&ck)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(resumed.join("checkpoint.json")).unwrap()).unwrap();
    assert!(meta2["critical_steps"].as_u64().unwrap() >= meta["critical_steps"].as_u64().unwrap());
}

#[test]
fn sweep_trains_one_run_per_weight() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data().join("stress_run.json");
    let o = gridguard(&["train", "--config", path(&cfg), "--steps", "40", "--out", path(dir.path()), "--sweep"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut hashes = Vec::new();
    for mu in ["0", "0.5", "1", "1.5"] {
        let sub = dir.path().join(format!("mu_line_{mu}"));
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(sub.join("checkpoint.json")).unwrap()).unwrap();
        hashes.push(meta["config_hash"].as_str().unwrap().to_string());
    }
    hashes.dedup();
    assert_eq!(hashes.len(), 4);
}
