use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fuseqa_core::experiment::RunReport;
use fuseqa_core::questions::PromptRecord;
use fuseqa_core::sarprep::{read_raster, write_raster, Raster, Units};

fn fuseqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuseqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_pair(dir: &Path, id: &str, offset: f32) {
    let vv: Vec<f32> = (0..64).map(|i| -12.0 + offset + (i % 7) as f32).collect();
    let vh: Vec<f32> = (0..64).map(|i| -19.0 + offset + (i % 5) as f32).collect();
    write_raster(dir.join(format!("{id}_vv")), &Raster::new(8, 8, 1, Units::Decibel, vv).unwrap()).unwrap();
    write_raster(dir.join(format!("{id}_vh")), &Raster::new(8, 8, 1, Units::Decibel, vh).unwrap()).unwrap();
}

fn small_config(dir: &Path, fusion: &str, extra: &str) -> String {
    let path = dir.join(format!("{fusion}.json"));
    let text = format!(
        r#"{{"fusion": "{fusion}", "questions_per_sample": 5,
            "train": {{"epochs": 5}},
            "data": {{"source": "synth", "n_samples": 300}}{extra}}}"#
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn preprocess_three_channel_and_rerun_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    fs::create_dir(&input).unwrap();
    write_pair(&input, "a", 0.0);
    write_pair(&input, "b", 2.0);
    let out = tmp.path().join("out");
    let args = ["preprocess", "--in", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mode", "3ch"];
    let o = fuseqa(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_raster(out.join("a")).unwrap();
    assert_eq!(r.channels(), 3);
    assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let first = fs::read(out.join("a.bin")).unwrap();
    let bounds = fs::read(out.join("bounds.json")).unwrap();
    assert_eq!(code(&fuseqa(&args)), 0);
    assert_eq!(fs::read(out.join("a.bin")).unwrap(), first);
    assert_eq!(fs::read(out.join("bounds.json")).unwrap(), bounds);

    let o = fuseqa(&["preprocess", "--in", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mode", "2ch"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_raster(out.join("b")).unwrap().channels(), 2);
}

#[test]
fn preprocess_missing_sidecar_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    write_pair(tmp.path(), "a", 0.0);
    fs::remove_file(tmp.path().join("a_vh.json")).unwrap();
    let out = tmp.path().join("out");
    let o = fuseqa(&["preprocess", "--in", tmp.path().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("a_vh.json"), "{}", stderr(&o));
}

#[test]
fn run_is_deterministic_and_marks_absent_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "none_s2", "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = fuseqa(&["run", "--config", &cfg, "--seed", "4", "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let ra: RunReport = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let rb: RunReport = serde_json::from_str(&fs::read_to_string(b.join("report.json")).unwrap()).unwrap();
    assert_eq!(ra.canonical_json().unwrap(), rb.canonical_json().unwrap());
    assert_eq!(ra.seed, 4);
    assert!(ra.stages.s1.is_none() && ra.stages.s2.is_some());
    let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert!(raw["stages"]["s1"].is_null());

    let o = fuseqa(&["run", "--config", &cfg, "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.starts_with("stage,F2Macro,F1Micro,HD,MR,GA,Y/N A,LC A\ns2,"), "{table}");
}

#[test]
fn run_config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"step": "C", "nomenclature": "rsvqa61", "split": "shifted", "weighted_loss": true}"#).unwrap();
    assert_eq!(code(&fuseqa(&["run", "--config", bad.to_str().unwrap()])), 1);
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&fuseqa(&["run", "--config", bad.to_str().unwrap()])), 1);
    assert_eq!(code(&fuseqa(&["run", "--config", "/nonexistent/cfg.json"])), 2);
    assert_eq!(code(&fuseqa(&["run"])), 1);
    let cfg = small_config(tmp.path(), "late", "");
    let o = Command::new(env!("CARGO_BIN_EXE_fuseqa"))
        .args(["run", "--config", &cfg])
        .env("FUSEQA_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn step_preset_fills_missing_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("b.json");
    fs::write(
        &cfg,
        r#"{"step": "B", "train": {"epochs": 3}, "questions_per_sample": 3,
            "data": {"source": "synth", "n_samples": 300}}"#,
    )
    .unwrap();
    let o = fuseqa(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: RunReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report.classes.len(), 61);
    assert!(report.config.weighted_loss);

    fs::write(&cfg, r#"{"step": "C", "weighted_loss": true}"#).unwrap();
    assert_eq!(code(&fuseqa(&["run", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn compare_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let s1 = small_config(tmp.path(), "none_s1", "");
    let late = small_config(tmp.path(), "late", "");
    let other = small_config(tmp.path(), "early", r#", "nomenclature": "rsvqa61""#);
    let mut paths = Vec::new();
    for (name, cfg) in [("s1", &s1), ("late", &late), ("other", &other)] {
        let dir = tmp.path().join(name);
        assert_eq!(code(&fuseqa(&["run", "--config", cfg, "--out", dir.to_str().unwrap()])), 0);
        paths.push(dir.join("report.json").to_str().unwrap().to_string());
    }
    let o = fuseqa(&["compare", &paths[0], &paths[0], "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for m in v["metrics"].as_array().unwrap() {
        for d in m["deltas"].as_array().unwrap() {
            assert!(d.is_null() || d.as_f64() == Some(0.0));
        }
    }
    assert_eq!(v["per_class_f1"].as_array().unwrap().len(), 19);

    let o = fuseqa(&["compare", &paths[0], &paths[1]]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("metric,"));
    assert!(csv.contains("F2Macro"));

    assert_eq!(code(&fuseqa(&["compare", &paths[0], &paths[2]])), 3);
    assert_eq!(code(&fuseqa(&["compare", &paths[0]])), 1);
}

#[test]
fn export_prompts_line_count_order_and_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = fuseqa(&["generate", "--out", data.to_str().unwrap(), "--samples", "20", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // keep four test samples
    let labels = fs::read_to_string(data.join("test_labels.csv")).unwrap();
    let kept: Vec<&str> = labels.lines().take(5).collect();
    let ids: Vec<&str> = kept[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    let labels_path = tmp.path().join("labels.csv");
    fs::write(&labels_path, kept.join("\n") + "\n").unwrap();
    let questions = fs::read_to_string(data.join("test_questions.jsonl")).unwrap();
    let mut kept_q: Vec<&str> = questions
        .lines()
        .filter(|l| ids.iter().any(|id| l.contains(&format!("\"sample_id\":\"{id}\""))))
        .collect();
    assert_eq!(kept_q.len(), 100);
    // shuffle sample order in the question file; output must follow the label file
    kept_q.reverse();
    let q_path = tmp.path().join("q.jsonl");
    fs::write(&q_path, kept_q.join("\n") + "\n").unwrap();

    let out = tmp.path().join("prompts.jsonl");
    let args = |q: &str| {
        vec![
            "export-prompts".to_string(),
            "--labels".into(),
            labels_path.to_str().unwrap().into(),
            "--questions".into(),
            q.into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let a = args(q_path.to_str().unwrap());
    let o = fuseqa(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<PromptRecord> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 100);
    assert!(lines.iter().all(|p| !p.context.is_empty()));
    // sample-major in label-file order, question file order within a sample
    for (k, id) in ids.iter().enumerate() {
        let tag = format!("\"sample_id\":\"{id}\"");
        let expect: Vec<String> = kept_q
            .iter()
            .filter(|l| l.contains(&tag))
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["question"].as_str().unwrap().to_string())
            .collect();
        let got: Vec<String> = lines[25 * k..25 * (k + 1)].iter().map(|p| p.question.clone()).collect();
        assert_eq!(got, expect);
    }

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let a = args(empty.to_str().unwrap());
    let o = fuseqa(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), "");

    let stray = tmp.path().join("stray.jsonl");
    fs::write(&stray, r#"{"sample_id":"nope","question":"is there a beaches?","type":"yes_no","answer":"no"}"#).unwrap();
    let a = args(stray.to_str().unwrap());
    assert_eq!(code(&fuseqa(&a.iter().map(String::as_str).collect::<Vec<_>>())), 3);
}
