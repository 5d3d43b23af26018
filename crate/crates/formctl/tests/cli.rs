use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn formctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_formctl"))
        .args(args)
        .env_remove("FORMCTL_OUT_DIR")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn edited(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(scenario("example1.json")).unwrap()).unwrap();
    edit(&mut v);
    let p = dir.join("edited.json");
    fs::write(&p, v.to_string()).unwrap();
    p
}

#[test]
fn missing_file_exits_3() {
    let o = formctl(&["validate", "/nonexistent/x.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    let o = formctl(&["run", "/nonexistent/x.json"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn schema_error_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = edited(dir.path(), |v| v["surprise"] = serde_json::json!(true));
    let o = formctl(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("surprise"));
}

#[test]
fn synth_writes_gains_and_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = formctl(&["synth", scenario("example1.json").to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("PASS"));
    assert!(!text(&o).contains("FAIL"));
    let gains: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("example1.gains.json")).unwrap()).unwrap();
    assert_eq!(gains["k2"][0][0], serde_json::json!(-111.3));
    assert!(dir.path().join("example1.certificates.txt").exists());

    // the gains file pastes back into a scenario
    let p = edited(dir.path(), |v| v["gains"] = gains);
    let o = formctl(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
}

#[test]
fn undetectable_output_fails_synth() {
    let dir = tempfile::tempdir().unwrap();
    let p = edited(dir.path(), |v| v["model"]["c"] = serde_json::json!(vec![vec![0.0; 6]; 5]));
    let o = formctl(&["synth", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("not detectable"), "{}", text(&o));
}

#[test]
fn validate_reports_assumption_failure() {
    let o = formctl(&["validate", scenario("example1.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let dir = tempfile::tempdir().unwrap();
    let p = edited(dir.path(), |v| {
        v["regime"]["kind"] = serde_json::json!("undirected_tracking");
        v["regime"]["options"] = serde_json::json!({});
        v["leader_input"] = serde_json::json!({"family": "zero"});
    });
    let o = formctl(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("FAIL  topology"), "{}", text(&o));
    let o = formctl(&["validate", "--json", p.to_str().unwrap()]);
    let rep: serde_json::Value = serde_json::from_str(&String::from_utf8_lossy(&o.stderr)).unwrap();
    assert_eq!(rep["name"], serde_json::json!("example1"));
}

#[test]
fn dt_flag_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = formctl(&["run", scenario("example1.json").to_str().unwrap(), "--dt", "2e-3", "--t-final", "1", "--out", out]);
    assert!(dir.path().join("example1.timeseries.csv").exists(), "{}", text(&o));
    let s: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("example1.summary.json")).unwrap()).unwrap();
    assert_eq!(s["dt"], serde_json::json!(2e-3));
    assert_eq!(s["steps"], serde_json::json!(500));
    // one second is far too short for the embedded thresholds
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("FAIL  acceptance"));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let run = |dir: &Path, seed: &str| {
        formctl(&["run", scenario("example1.json").to_str().unwrap(), "--seed", seed, "--t-final", "2", "--out", dir.to_str().unwrap()])
    };
    run(a.path(), "7");
    run(b.path(), "7");
    run(c.path(), "8");
    let csv = |d: &Path| fs::read(d.join("example1.timeseries.csv")).unwrap();
    assert_eq!(csv(a.path()), csv(b.path()));
    assert_ne!(csv(a.path()), csv(c.path()));
}

#[test]
fn snapshot_flag_and_env_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_formctl"))
        .args(["run", scenario("example2.json").to_str().unwrap(), "--t-final", "1", "--snapshots", "0,0.5,1"])
        .env("FORMCTL_OUT_DIR", dir.path())
        .output()
        .unwrap();
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.contains(".snapshot_t")).count(), 3, "{names:?}\n{}", text(&o));
    assert!(names.contains(&"example2.snapshot_t0.5.svg".to_string()));
    let header = fs::read_to_string(dir.path().join("example2.timeseries.csv")).unwrap();
    assert!(header.lines().next().unwrap().ends_with("turn10"));
}

#[test]
fn coarse_step_diverges_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = formctl(&["run", scenario("example1.json").to_str().unwrap(), "--dt", "0.5", "--t-final", "50", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("diverged"));
    let s: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("example1.summary.json")).unwrap()).unwrap();
    assert!(s["aborted_at"].is_number());
}

#[test]
fn validation_failure_blocks_run_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let p = edited(dir.path(), |v| v["formation"]["k1"][0][0] = serde_json::json!(-2.0));
    let out = dir.path().join("o");
    let o = formctl(&["run", p.to_str().unwrap(), "--t-final", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let o = formctl(&["run", p.to_str().unwrap(), "--t-final", "1", "--force", "--out", out.to_str().unwrap()]);
    assert!(out.join("example1.timeseries.csv").exists(), "{}", text(&o));
}

#[test]
fn parallel_batch_matches_sequential() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s1 = scenario("example1.json");
    let s2 = scenario("example2.json");
    let args = |d: &Path, jobs: &str| {
        vec![
            "run".to_string(),
            s1.to_str().unwrap().into(),
            s2.to_str().unwrap().into(),
            "--t-final".into(),
            "1".into(),
            "--jobs".into(),
            jobs.into(),
            "--out".into(),
            d.to_str().unwrap().into(),
        ]
    };
    let run = |v: Vec<String>| {
        let refs: Vec<&str> = v.iter().map(String::as_str).collect();
        formctl(&refs)
    };
    let oa = run(args(a.path(), "2"));
    let ob = run(args(b.path(), "1"));
    assert_eq!(oa.status.code(), ob.status.code());
    for name in ["example1.timeseries.csv", "example2.timeseries.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}
