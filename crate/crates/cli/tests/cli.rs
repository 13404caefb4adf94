use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fnncc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fnncc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fnncc(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit status and the `code` field of the error record on stderr.
fn failure(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = fnncc(dir, args);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap_or_default();
    let record: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not an error record: {stderr}"));
    (out.status.code().unwrap(), record["error"]["code"].as_str().unwrap().to_string())
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn paths(prefix: &str) -> Value {
    json!({ "profiles": format!("{prefix}_profiles.csv"), "responses": format!("{prefix}_responses.csv") })
}

fn simulate(dir: &Path, scenario: &str, seed: &str) {
    write_json(
        &dir.join("sim.json"),
        &json!({
            "scenario": scenario,
            "sizes": { "train": 400, "validation": 100, "tuning": 400, "oc": 200 }
        }),
    );
    ok(dir, &["simulate", "--config", "sim.json", "--seed", seed]);
}

fn small_fnn() -> Value {
    json!({
        "layers": [4, 1],
        "activations": ["relu", "linear"],
        "weight_basis": { "order": 4, "n_basis": 5 },
        "learning_rate": 0.01,
        "batch_size": 32,
        "max_epochs": 40
    })
}

#[test]
fn train_then_monitor_in_sample_respects_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "B", "3");
    write_json(
        &d.join("train.json"),
        &json!({ "chart": "FNNCC", "train": paths("train"), "validation": paths("validation"), "fnn": small_fnn() }),
    );
    ok(d, &["train", "--config", "train.json"]);
    assert!(d.join("history.json").exists());
    write_json(&d.join("build.json"), &json!({ "predictor": "predictor.json", "tuning": paths("train"), "alpha": 0.05 }));
    ok(d, &["build-chart", "--config", "build.json"]);
    write_json(&d.join("monitor.json"), &json!({ "chart": "chart.json", "data": paths("train") }));
    let summary: Value = serde_json::from_str(ok(d, &["monitor", "--config", "monitor.json"]).trim()).unwrap();
    let n = summary["n"].as_f64().unwrap();
    assert_eq!(n, 400.0);
    assert!(summary["fraction"].as_f64().unwrap() <= 0.05 + 2.0 / n, "{summary}");

    let points = fs::read_to_string(d.join("chart_points.csv")).unwrap();
    assert!(points.starts_with("id,statistic,lcl,ucl,signal"));
    assert_eq!(points.lines().count(), 401);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn weights(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("covariate_id,t,weight"));
    lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

#[test]
fn linear_network_weights_track_the_linear_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "A", "5");
    let linear = json!({
        "layers": [1],
        "activations": ["linear"],
        "weight_basis": { "order": 4, "n_basis": 6 },
        "learning_rate": 0.05,
        "batch_size": 400,
        "max_epochs": 3000,
        "patience": 3000,
        "lr_decay": 0.999
    });
    for (chart, sub) in [("FNNCC", "fnn"), ("FRCC", "sof")] {
        fs::create_dir_all(d.join(sub)).unwrap();
        write_json(
            &d.join("train.json"),
            &json!({ "chart": chart, "train": paths("train"), "validation": paths("validation"), "fnn": linear }),
        );
        ok(d, &["train", "--config", "train.json", "--out-dir", sub]);
        write_json(&d.join("export.json"), &json!({ "predictor": format!("{sub}/predictor.json"), "points": 101 }));
        ok(d, &["export-weights", "--config", "export.json", "--out-dir", sub]);
    }
    let gamma = weights(&d.join("fnn/weights.csv"));
    let beta = weights(&d.join("sof/weights.csv"));
    assert_eq!(gamma.len(), 101);
    let r = correlation(&gamma, &beta);
    assert!(r > 0.95, "correlation {r}");

    write_json(&d.join("export.json"), &json!({ "predictor": "missing.json" }));
    assert_eq!(failure(d, &["export-weights", "--config", "export.json"]), (21, "io".into()));
}

#[test]
fn simulate_and_study_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "C", "8");
    let first = fs::read(d.join("oc_profiles.csv")).unwrap();
    simulate(d, "C", "8");
    assert_eq!(first, fs::read(d.join("oc_profiles.csv")).unwrap());
    simulate(d, "C", "9");
    assert_ne!(first, fs::read(d.join("oc_profiles.csv")).unwrap());

    write_json(
        &d.join("study.json"),
        &json!({
            "scenarios": ["A", "C"],
            "shifts": [0.0, 1.0],
            "covariate_deltas": [0.0],
            "charts": ["SCC", "FRCC", "FNNCC"],
            "sizes": { "train": 300, "validation": 100, "tuning": 400, "oc": 300 },
            "fnn": { "fixed": small_fnn() }
        }),
    );
    let run = |sub: &str| {
        ok(d, &["arl-study", "--config", "study.json", "--seed", "2", "--workers", "1", "--out-dir", sub]);
        fs::read_to_string(d.join(sub).join("arl.csv")).unwrap()
    };
    let a = run("one");
    assert_eq!(a, run("two"));
    assert!(a.starts_with("scenario,chart,shift_multiple,covariate_delta,n_oc,p_hat,arl,se_arl,censored,status"));
    assert_eq!(a.lines().count(), 1 + 2 * 3 * 2);
    assert!(d.join("one/arl_C_delta0.svg").exists());
}

#[test]
fn errors_are_machine_readable_with_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(failure(d, &["simulate"]), (10, "config".into()));

    write_json(&d.join("bad.json"), &json!({ "scenario": "A", "sizes_typo": 3 }));
    assert_eq!(failure(d, &["simulate", "--config", "bad.json"]), (11, "schema".into()));

    fs::write(d.join("cut.json"), "{\"scenario\": \"A\", \"seed\":").unwrap();
    assert_eq!(failure(d, &["simulate", "--config", "cut.json"]), (12, "parse".into()));

    simulate(d, "A", "1");
    write_json(&d.join("train.json"), &json!({ "chart": "FRCC", "train": paths("train"), "validation": paths("validation") }));
    ok(d, &["train", "--config", "train.json"]);
    let doc = fs::read_to_string(d.join("predictor.json")).unwrap();
    fs::write(d.join("old.json"), doc.replacen("\"format_version\": 1", "\"format_version\": 0", 1)).unwrap();
    write_json(&d.join("build.json"), &json!({ "predictor": "old.json", "tuning": paths("tuning") }));
    assert_eq!(failure(d, &["build-chart", "--config", "build.json"]), (13, "version_mismatch".into()));

    fs::write(d.join("short.json"), &doc[..doc.len() / 2]).unwrap();
    write_json(&d.join("build.json"), &json!({ "predictor": "short.json", "tuning": paths("tuning") }));
    let out = fnncc(d, &["build-chart", "--config", "build.json"]);
    assert_eq!(out.status.code(), Some(12));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error at byte"));

    let mut responses = fs::read_to_string(d.join("tuning_responses.csv")).unwrap();
    responses.push_str("stranger,1.0\n");
    fs::write(d.join("tuning_responses.csv"), responses).unwrap();
    write_json(&d.join("build.json"), &json!({ "predictor": "predictor.json", "tuning": paths("tuning") }));
    assert_eq!(failure(d, &["build-chart", "--config", "build.json"]), (14, "data".into()));
}

#[test]
fn ingest_trims_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut profiles = String::from("sample_id,covariate_id,t,value\n");
    let mut responses = String::from("sample_id,y\n");
    for i in 0..12 {
        for j in 0..81 {
            let t = j as f64 / 80.0;
            let noise = ((i * 81 + j) as f64 * 12.9898).sin() * 0.01;
            profiles.push_str(&format!("s{i},temp,{t},{}\n", (6.0 * t + i as f64 * 0.1).sin() + noise));
        }
        responses.push_str(&format!("s{i},{}\n", i as f64 * 0.5));
    }
    fs::write(d.join("raw.csv"), profiles).unwrap();
    fs::write(d.join("y.csv"), responses).unwrap();
    write_json(
        &d.join("ingest.json"),
        &json!({ "profiles": "raw.csv", "responses": "y.csv", "smoothing": { "trim": 0.25, "n_basis": 20, "output_points": 51 } }),
    );
    ok(d, &["ingest", "--config", "ingest.json", "--out-dir", "first"]);
    let canonical = fs::read_to_string(d.join("first/canonical_profiles.csv")).unwrap();
    assert_eq!(canonical.lines().count(), 1 + 12 * 61);
    assert!(canonical.lines().nth(1).unwrap().starts_with("s0,temp,0.0,"));

    write_json(
        &d.join("again.json"),
        &json!({ "profiles": "first/canonical_profiles.csv", "responses": "y.csv", "smoothing": { "n_basis": 20, "output_points": 51 } }),
    );
    ok(d, &["ingest", "--config", "again.json", "--out-dir", "second"]);
    let body = |p: &str| -> Value {
        let v: Value = serde_json::from_str(&fs::read_to_string(d.join(p)).unwrap()).unwrap();
        v["body"]["functional"].clone()
    };
    assert_eq!(body("first/functional.json"), body("second/functional.json"));
    assert_eq!(
        fs::read(d.join("first/canonical_profiles.csv")).unwrap(),
        fs::read(d.join("second/canonical_profiles.csv")).unwrap()
    );

    let reversed: String = {
        let text = fs::read_to_string(d.join("raw.csv")).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(5, 6);
        lines.join("\n")
    };
    fs::write(d.join("raw.csv"), reversed).unwrap();
    let (code, kind) = failure(d, &["ingest", "--config", "ingest.json"]);
    assert_eq!((code, kind.as_str()), (14, "data"));
}
