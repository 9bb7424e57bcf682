use std::path::Path;
use std::process::{Command, Output};

fn neurottt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurottt"))
        .args(args)
        .env("NEUROTTT_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is json");
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(
        &p,
        "task = \"syn_stress\"\nn_seeds = 2\nstrategies = [\"supervised_only\", \"tent\"]\n[generator]\ntrials_per_subject = 12\n[finetune]\nepochs = 2\n",
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_2_as_json() {
    let out = neurottt(&["evaluate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "task = \"syn_mi\"\nn_seeds = 0\n").unwrap();
    let out = neurottt(&["evaluate", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "config");

    let cfg = tiny_config(dir.path());
    let out = neurottt(&["gradcheck", "--config", &cfg, "--task", "syn_mi"]);
    assert_eq!(out.status.code(), Some(2), "task mismatch");
}

#[test]
fn missing_input_exits_3() {
    let out = neurottt(&["report", "--input", "/nonexistent/report.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_kind(&out), "io");
}

#[test]
fn evaluate_csv_agrees_with_stdout_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("eval");
    let out = neurottt(&["evaluate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();

    let mut rdr = csv::Reader::from_path(out_dir.join("results.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["strategy", "seed", "metric", "value"]);
    let mut per_seed = Vec::new();
    let mut means = Vec::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let value: f64 = rec[3].parse().unwrap();
        match &rec[1] {
            "mean" => means.push((rec[0].to_string(), rec[2].to_string(), value)),
            "std" => {}
            _ => per_seed.push((rec[0].to_string(), rec[2].to_string(), value)),
        }
    }
    assert!(!means.is_empty());
    for (strategy, metric, mean) in means {
        let vals: Vec<f64> = per_seed.iter().filter(|r| r.0 == strategy && r.1 == metric).map(|r| r.2).collect();
        assert_eq!(vals.len(), 2);
        assert!((vals.iter().sum::<f64>() / 2.0 - mean).abs() < 1e-12);
        let row = summary["strategies"].as_array().unwrap().iter().find(|s| s["strategy"] == strategy.as_str()).unwrap();
        assert_eq!(row["metrics"][&metric]["mean"].as_f64().unwrap(), mean);
    }
}
