use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectral-interp"))
        .args(args)
        .arg("-o")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn result(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap()
}

fn model(name: &str) -> String {
    models().join(name).display().to_string()
}

#[test]
fn estimate_writes_result_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["estimate", &model("ou_noiseless.json")], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(dir.path());
    assert_eq!(r["command"], "estimate");
    assert_eq!(r["config"]["model"]["grid"]["n_points"], 4097);
    let res = &r["result"];
    let (op, sp) = (res["delta_operator_form"].as_f64().unwrap(), res["delta_spectral_form"].as_f64().unwrap());
    assert!((op - sp).abs() <= 1e-4 * op);
    let h = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(h.lines().next(), Some("lambda,re_h_1,im_h_1"));
    assert_eq!(h.lines().count(), 4098);
    let c = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert_eq!(c.lines().next(), Some("t,re_c_1,im_c_1"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.ends_with("result.json")));
}

#[test]
fn identical_runs_differ_only_in_timestamp() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&["estimate", &model("ou_noisy.json"), "--n-points", "1025", "--lambda-max", "32"], d.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let (mut ra, mut rb) = (result(a.path()), result(b.path()));
    ra["timestamp"] = Value::Null;
    rb["timestamp"] = Value::Null;
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    assert_eq!(ra["config"]["overrides"]["n_points"], 1025);
    assert_eq!(
        std::fs::read(a.path().join("h.csv")).unwrap(),
        std::fs::read(b.path().join("h.csv")).unwrap()
    );
}

#[test]
fn non_psd_sample_fails_validation_with_its_index() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<String> = (0..5)
        .map(|j| format!("[[[{}, 0]]]", if j == 3 { -0.5 } else { 1.0 }))
        .collect();
    let text = format!(
        r#"{{"dim": 1, "grid": {{"lambda_max": 4, "n_points": 5}},
            "F": {{"kind": "samples", "params": {{"values": [{}]}}}},
            "G": {{"kind": "zero"}}, "S": [[-1, 0]], "a": {{"expression": "ones"}}}}"#,
        values.join(",")
    );
    let path = dir.path().join("bad.json");
    std::fs::write(&path, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&["validate", path.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(&out);
    let v = &r["result"]["densities"]["F"]["violations"];
    assert!(v.as_array().unwrap().iter().any(|x| x["index"] == 3 && x["kind"] == "not_positive_semidefinite"));
    let o = run(&["estimate", path.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn singleton_minimax_matches_estimate() {
    let e = tempfile::tempdir().unwrap();
    let m = tempfile::tempdir().unwrap();
    let model_path = model("ou_noisy.json");
    let classes = model("classes_singleton.json");
    let grid = ["--n-points", "1025", "--lambda-max", "32"];
    let est: Vec<&str> = ["estimate", model_path.as_str()].into_iter().chain(grid).collect();
    assert_eq!(run(&est, e.path()).status.code(), Some(0));
    let mm: Vec<&str> = ["minimax", model_path.as_str(), "--classes", classes.as_str()]
        .into_iter()
        .chain(grid)
        .collect();
    let o = run(&mm, m.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let d = result(e.path())["result"]["delta"].as_f64().unwrap();
    let r = result(m.path());
    let d0 = r["result"]["delta0"].as_f64().unwrap();
    assert!((d - d0).abs() <= 1e-8 * d, "{d} vs {d0}");
    assert_eq!(r["result"]["iterations"], 1);
    assert!(m.path().join("f0.csv").exists());
}

#[test]
fn toy_minimax_reports_kkt_sections() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["minimax", &model("toy_minimax.json"), "--classes", &model("classes_toy.json")],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(dir.path())["result"].clone();
    assert!(r["gap"].as_f64().unwrap() <= 1e-4);
    for key in ["residuals", "multipliers", "slackness"] {
        assert!(r["kkt"][key]["F"].is_object() || r["kkt"][key]["F"].is_array(), "{key}");
    }
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iteration,delta,gap"));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["estimate", &model("ou_noisy.json"), "--n-points", "4096"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["estimate", &model("ou_noisy.json"), "--lambda-max", "5000"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["minimax", &model("ou_noisy.json"), "--classes", &model("classes_toy.json"), "--tol", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(models().join("ou_noisy.json")).unwrap().replace("\"dim\": 1,", "\"dim\": 1, \"colour\": 2,");
    std::fs::write(&bad, text).unwrap();
    let o = run(&["estimate", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("colour") && stderr.contains("line"), "{stderr}");

    let o = run(&["estimate", "/nonexistent/model.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn singular_density_exits_with_three_and_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.json");
    std::fs::write(
        &path,
        r#"{"dim": 1, "grid": {"lambda_max": 16, "n_points": 257},
            "F": {"kind": "white", "params": {"level": 0}}, "G": {"kind": "zero"},
            "S": [[-1, 0]], "a": {"expression": "ones"}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["estimate", path.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let diag: Value = serde_json::from_str(&std::fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(diag["kind"], "numerical");
    assert_eq!(diag["exit_code"], 3);
}

#[test]
fn simulate_emits_paths_and_reuses_cached_operators() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let out = dir.path().join("out");
    let args = [
        "simulate",
        &model("ou_noisy.json"),
        "--n-replications",
        "200",
        "--emit-paths",
        "--cache-dir",
        cache.to_str().unwrap(),
    ];
    let first = Command::new(env!("CARGO_BIN_EXE_spectral-interp"))
        .args(args)
        .arg("-o")
        .arg(&out)
        .env("SPECTRAL_INTERP_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let r1 = result(&out);
    assert_eq!(r1["config"]["threads"], 2);
    assert_eq!(r1["result"]["estimate"]["operator_cache_hit"], false);
    assert_eq!(r1["result"]["ensemble"]["n_replications"], 200);
    let paths = std::fs::read_to_string(out.join("paths.csv")).unwrap();
    assert_eq!(paths.lines().next(), Some("t,xi_1,eta_1"));
    assert_eq!(run(&args, &out).status.code(), Some(0));
    let r2 = result(&out);
    assert_eq!(r2["result"]["estimate"]["operator_cache_hit"], true);
    assert_eq!(r1["result"]["ensemble"], r2["result"]["ensemble"]);
}
