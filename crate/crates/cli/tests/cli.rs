use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ensemble(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ensemble"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Order-0 table models over {a, b} plus a run config using all of them.
fn table_workspace(rows: &[[f64; 2]], weights: &[f64], extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let mut models = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let name = format!("m{i}.json");
        fs::write(
            dir.path().join(&name),
            format!(r#"{{"order":0,"vocab":["a","b"],"default":[{},{}]}}"#, r[0], r[1]),
        )
        .unwrap();
        models.push(format!(r#"{{"kind":"table","path":"{name}"}}"#));
    }
    let config = format!(
        r#"{{"models":[{}],"weights":{:?},"seed":7,"max_new_tokens":200{extra}}}"#,
        models.join(","),
        weights
    );
    let path = dir.path().join("run.json");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn pair() -> (TempDir, PathBuf) {
    table_workspace(&[[0.6, 0.4], [0.2, 0.8]], &[0.5, 0.5], "")
}

#[test]
fn train_abab_learns_deterministic_successor() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.txt"), "abab").unwrap();
    let args = ["train", "--corpus", "c.txt", "--order", "2", "--alpha", "0", "--out"];
    let out = ensemble(dir.path(), &[&args[..], &["m.json"]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(dir.path().join("m.json"));
    assert_eq!(m["counts"]["a"], serde_json::json!({"b": 2}));
    assert_eq!(m["alpha"], 0.0);

    // the trained model drives generation: after "a" the only option is "b"
    fs::write(
        dir.path().join("run.json"),
        r#"{"models":[{"kind":"ngram","path":"m.json"}],"prompt":"a","max_new_tokens":1,"strategy":"single"}"#,
    )
    .unwrap();
    let out = ensemble(dir.path(), &["generate", "--config", "run.json"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "b");
}

#[test]
fn train_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.txt"), "the cat sat on the mat. the dog sat on the log.").unwrap();
    for name in ["one.json", "two.json"] {
        let out = ensemble(dir.path(), &["train", "--corpus", "c.txt", "--order", "3", "--out", name]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(
        fs::read(dir.path().join("one.json")).unwrap(),
        fs::read(dir.path().join("two.json")).unwrap()
    );
}

#[test]
fn train_empty_corpus_is_config_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("empty.txt"), "").unwrap();
    let out = ensemble(dir.path(), &["train", "--corpus", "empty.txt", "--out", "m.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn train_missing_corpus_is_config_error() {
    let dir = TempDir::new().unwrap();
    let out = ensemble(dir.path(), &["train", "--corpus", "nope.txt", "--out", "m.json"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn generate_me_is_deterministic() {
    let (dir, _) = pair();
    for out_dir in ["r1", "r2"] {
        let out = ensemble(
            dir.path(),
            &["generate", "--config", "run.json", "--strategy", "me", "--seed", "7", "--out", out_dir],
        );
        assert_eq!(code(&out), 0);
    }
    for file in ["trace.jsonl", "summary.json"] {
        assert_eq!(
            fs::read(dir.path().join("r1").join(file)).unwrap(),
            fs::read(dir.path().join("r2").join(file)).unwrap(),
            "{file} differs"
        );
    }
    let lines = fs::read_to_string(dir.path().join("r1/trace.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 200);
    assert!(dir.path().join("r1/meta.json").exists());
}

#[test]
fn generate_work_law_ce_vs_me() {
    let (dir, _) = pair();
    let mut forwards = Vec::new();
    for strategy in ["ce", "me"] {
        let out = ensemble(
            dir.path(),
            &["generate", "--config", "run.json", "--strategy", strategy, "--out", strategy],
        );
        assert_eq!(code(&out), 0);
        let summary = read_json(dir.path().join(strategy).join("summary.json"));
        assert_eq!(summary["tokens"], 200);
        forwards.push(summary["decode_forwards"].as_u64().unwrap());
    }
    assert_eq!(forwards, vec![400, 200]);
}

#[test]
fn generate_three_model_speedup_in_band() {
    let (dir, _) = table_workspace(&[[0.6, 0.4], [0.2, 0.8], [0.5, 0.5]], &[0.3, 0.3, 0.4], "");
    let out = ensemble(dir.path(), &["generate", "--config", "run.json", "--strategy", "me"]);
    assert_eq!(code(&out), 0);
    let summary = read_json(dir.path().join("out/summary.json"));
    let speedup = summary["simulated"]["speedup_vs_ce"].as_f64().unwrap();
    assert!((2.4..=3.0).contains(&speedup), "speedup {speedup}");
}

#[test]
fn bench_reports_both_strategies() {
    let (dir, _) = table_workspace(&[[0.6, 0.4], [0.2, 0.8], [0.5, 0.5]], &[0.3, 0.3, 0.4], "");
    let out = ensemble(dir.path(), &["bench", "--config", "run.json", "--out", "b"]);
    assert_eq!(code(&out), 0);
    let bench = read_json(dir.path().join("b/bench.json"));
    let fused = &bench["cases"][0];
    assert_eq!(fused["runs"][0]["strategy"], "ce");
    assert_eq!(fused["runs"][0]["decode_forwards"], 600);
    assert_eq!(fused["runs"][1]["decode_forwards"], 200);
    let speedup = fused["speedup"].as_f64().unwrap();
    assert!((2.4..=3.0).contains(&speedup), "speedup {speedup}");
}

#[test]
fn generate_config_errors_exit_2() {
    let (dir, _) = pair();
    let cases = [
        r#"{"models":[{"kind":"table","path":"m0.json"}],"temperature":1}"#,
        r#"{"models":[{"kind":"table","path":"m0.json"}],"weights":[0.5,0.5]}"#,
        r#"{"models":[{"kind":"table","path":"missing.json"}]}"#,
        r#"{"models":[{"kind":"table","path":"m0.json"}],"prompt":"xyz"}"#,
        r#"{"models":[{"kind":"table","path":"m0.json"}],"strategy":"me","greedy":true}"#,
        "not json",
    ];
    for (i, c) in cases.iter().enumerate() {
        fs::write(dir.path().join("bad.json"), c).unwrap();
        let out = ensemble(dir.path(), &["generate", "--config", "bad.json", "--out", "bad"]);
        assert_eq!(code(&out), 2, "case {i}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = ensemble(dir.path(), &["generate", "--config", "run.json", "--lambda", "0.9,0.9"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn generate_runtime_error_exits_1_with_partial_trace() {
    // a remote model whose endpoint refuses connections fails on the first step
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("v.json"), r#"["a","b"]"#).unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"models":[{"kind":"remote","endpoint":"http://127.0.0.1:9/v1/completions","model":"m","vocab":"v.json","timeout_ms":200}],"max_new_tokens":3}"#,
    )
    .unwrap();
    let out = ensemble(dir.path(), &["generate", "--config", "run.json"]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/trace.jsonl").exists());
    assert_eq!(read_json(dir.path().join("out/summary.json"))["finish"], "error");
}

#[test]
fn equivalence_matched_pass_and_mismatched_fail() {
    let (dir, _) = pair();
    let out = ensemble(dir.path(), &["equivalence", "--config", "run.json", "--samples", "200000"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().last(), Some("PASS"));
    let report = read_json(dir.path().join("out/equivalence.json"));
    assert_eq!(report["pass"], true);
    assert!(report["max_tv"].as_f64().unwrap() < 0.01);

    let out = ensemble(
        dir.path(),
        &["equivalence", "--config", "run.json", "--samples", "200000", "--sample-lambda", "0.9,0.1"],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().last(), Some("FAIL"));
    let report = read_json(dir.path().join("out/equivalence.json"));
    assert_eq!(report["pass"], false);
    let tv = report["max_tv"].as_f64().unwrap();
    assert!((tv - 0.16).abs() < 0.01, "tv {tv}");
}

#[test]
fn equivalence_sweep_passes_on_grid() {
    let (dir, _) = pair();
    let out = ensemble(
        dir.path(),
        &["equivalence", "--config", "run.json", "--samples", "200000", "--sweep"],
    );
    assert_eq!(code(&out), 0);
    let report = read_json(dir.path().join("out/equivalence.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["sweep"].as_array().unwrap().len(), 11);
}

#[test]
fn equivalence_with_prefix_file_and_ngram_models() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("a.txt"), "abracadabra cabbage").unwrap();
    fs::write(dir.path().join("b.txt"), "a bad cab barged").unwrap();
    for (c, m) in [("a.txt", "a.json"), ("b.txt", "b.json")] {
        let out = ensemble(dir.path(), &["train", "--corpus", c, "--order", "2", "--out", m]);
        assert_eq!(code(&out), 0);
    }
    fs::write(
        dir.path().join("run.json"),
        r#"{"models":[{"kind":"ngram","path":"a.json"},{"kind":"ngram","path":"b.json"}],"weights":[0.3,0.7]}"#,
    )
    .unwrap();
    fs::write(dir.path().join("prefixes.txt"), "a\nca\nb\n").unwrap();
    let out = ensemble(
        dir.path(),
        &["equivalence", "--config", "run.json", "--samples", "200000", "--prefixes", "prefixes.txt"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(dir.path().join("out/equivalence.json"));
    assert_eq!(report["prefixes"].as_array().unwrap().len(), 3);
    assert_eq!(report["pass"], true);
}

#[test]
fn equivalence_rejects_small_sample_counts() {
    let (dir, _) = pair();
    let out = ensemble(dir.path(), &["equivalence", "--config", "run.json", "--samples", "100"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn decompose_oracle() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), "[0.4, 0.6]").unwrap();
    fs::write(dir.path().join("p.json"), "[0.6, 0.4]").unwrap();
    let out = ensemble(dir.path(), &["decompose", "--combined", "c.json", "--base", "p.json", "--lambda", "0.5"]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let residual: Vec<f64> = serde_json::from_value(doc["residual"].clone()).unwrap();
    assert!((residual[0] - 0.2).abs() < 1e-12 && (residual[1] - 0.8).abs() < 1e-12);
}

#[test]
fn decompose_violation_prints_witness_and_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = ensemble(dir.path(), &["decompose", "--combined", "[0.4,0.6]", "--base", "[0.9,0.1]", "--lambda", "0.5"]);
    assert_eq!(code(&out), 3);
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["violation"], "containment");
    assert_eq!(doc["token"], 0);
    assert!((doc["scaled_base"].as_f64().unwrap() - 0.45).abs() < 1e-12);
}

#[test]
fn decompose_lambda_zero_is_config_error() {
    let dir = TempDir::new().unwrap();
    let out = ensemble(dir.path(), &["decompose", "--combined", "[0.4,0.6]", "--base", "[0.6,0.4]", "--lambda", "0.0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}
