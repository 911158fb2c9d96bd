use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dualagent"));
    cmd.stdout(Stdio::null());
    cmd
}

fn synth(dir: &Path, extra: &[&str]) {
    let status = bin()
        .args(["synth", "--out-dir"])
        .arg(dir)
        .args(extra)
        .status()
        .unwrap();
    assert!(status.success());
}

fn small_spec(dir: &Path, data: &Path) -> std::path::PathBuf {
    let spec = serde_json::json!({
        "engine": {"t_max": 20, "population_total": 40},
        "single_population_size": 80,
        "users": 2,
        "seeds": [0, 1, 2],
        "dataset": {"files": {
            "catalog": data.join("catalog.jsonl"),
            "interactions": data.join("interactions.jsonl"),
            "embeddings": data.join("embeddings.jsonl"),
        }},
    });
    let path = dir.join("spec.json");
    fs::write(&path, spec.to_string()).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, &[]);
    synth(&b, &[]);
    synth(&c, &["--seed", "7"]);
    for name in ["catalog.jsonl", "interactions.jsonl", "embeddings.jsonl"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(a.join("catalog.jsonl")).unwrap(), fs::read(c.join("catalog.jsonl")).unwrap());
}

#[test]
fn run_writes_metrics_traces_and_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let spec = small_spec(tmp.path(), &data);
    let out = |name: &str| {
        let dir = tmp.path().join(name);
        let status = bin()
            .args(["run", "--config"])
            .arg(&spec)
            .arg("--out-dir")
            .arg(&dir)
            .status()
            .unwrap();
        assert!(status.success());
        dir
    };
    let first = out("first");
    let second = out("second");

    let rows = csv_rows(&first.join("metrics.csv"));
    // 4 modes x 3 seeds plus one mean row per mode.
    assert_eq!(rows.len(), 16);
    assert_eq!(rows.iter().filter(|r| &r[1] == "mean").count(), 4);

    let traces: Vec<_> = fs::read_dir(first.join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 4 * 3 * 2);
    let trace = csv_rows(&first.join("traces/dual_seed0_user-000.csv"));
    assert_eq!(trace.len(), 21);

    for name in ["metrics.csv", "coordination.csv", "traces/dual_seed2_user-001.csv"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }

    let report = tmp.path().join("report");
    let status = bin()
        .args(["report", "--input"])
        .arg(first.join("metrics.csv"))
        .arg("--out-dir")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    let means = csv_rows(&report.join("report.csv"));
    let originals: Vec<_> = rows.iter().filter(|r| &r[1] == "mean").collect();
    assert_eq!(means.len(), 4);
    for (m, o) in means.iter().zip(originals) {
        assert_eq!(&m[0], &o[0]);
        let (x, y): (f64, f64) = (m[2].parse().unwrap(), o[2].parse().unwrap());
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn mock_llm_replies_drive_allocation_and_fall_back() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let spec = small_spec(tmp.path(), &data);
    let mock = tmp.path().join("mock.json");
    fs::write(&mock, r#"["{\"alpha\": 0.6, \"rationale\": \"balance\"}"]"#).unwrap();
    let good = tmp.path().join("good");
    let status = bin()
        .args(["run", "--modes", "dual", "--seeds", "3", "--config"])
        .arg(&spec)
        .arg("--mock-llm")
        .arg(&mock)
        .arg("--out-dir")
        .arg(&good)
        .status()
        .unwrap();
    assert!(status.success());
    let events = csv_rows(&good.join("coordination.csv"));
    assert!(!events.is_empty());
    for e in &events {
        assert_eq!(&e[4], "0.6");
        assert_eq!(&e[5], "llm");
        assert_eq!((&e[6], &e[7]), ("24", "16"));
    }

    fs::write(&mock, r#"["not json at all"]"#).unwrap();
    let bad = tmp.path().join("bad");
    let rule = tmp.path().join("rule");
    for (dir, modes, extra) in [(&bad, "dual", true), (&rule, "no-llm", false)] {
        let mut cmd = bin();
        cmd.args(["run", "--seeds", "3", "--modes", modes, "--config"]).arg(&spec);
        if extra {
            cmd.arg("--mock-llm").arg(&mock);
        }
        assert!(cmd.arg("--out-dir").arg(dir).status().unwrap().success());
    }
    let fallback = csv_rows(&bad.join("coordination.csv"));
    assert!(fallback.iter().all(|e| &e[5] == "llm-fallback" && !e[8].is_empty()));
    assert_eq!(
        fs::read(bad.join("traces/dual_seed3_user-000.csv")).unwrap(),
        fs::read(rule.join("traces/no-llm_seed3_user-000.csv")).unwrap()
    );
}

#[test]
fn ablation_covers_the_grid() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"engine": {"t_max": 10}, "seeds": [0],
            "dataset": {"synthetic": {"n_items": 150, "n_users": 2}}}"#,
    )
    .unwrap();
    let out = tmp.path().join("ablate");
    let status = bin()
        .args(["ablate", "--config"])
        .arg(&spec)
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.code().is_some());
    let mut reader = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "time_s"));
    let rows: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 12);
    for p in ["population", "mutation", "constraints", "generations"] {
        assert_eq!(rows.iter().filter(|r| &r[0] == p).count(), 3);
    }
}

#[test]
fn bad_input_exits_with_usage_error() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, r#"{"dataset": {"files": {"catalog": "/nope.jsonl", "interactions": "/nope2.jsonl"}}}"#).unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&spec)
        .arg("--out-dir")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    let dup = bin()
        .args(["run", "--seeds", "1,1", "--out-dir"])
        .arg(tmp.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(dup.status.code(), Some(2));
}
