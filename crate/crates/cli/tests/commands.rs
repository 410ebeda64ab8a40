use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sentinel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentinel"))
        .args(args)
        .env_remove("SENTINEL_SEED")
        .output()
        .expect("spawn sentinel")
}

fn ok(args: &[&str]) -> Value {
    let out = sentinel(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json summary")
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CONV_TRAIN: &str = r#"
[[stages]]
stage = "scale"
kind = "standard"

[detector]
kind = "forecaster"
network = "conv1d"

[detector.config]
max_epochs = 2
"#;

fn synth(dir: &TempDir, seed: &str, points: &str) -> (PathBuf, PathBuf) {
    let frame = p(dir, &format!("frame{seed}.csv"));
    let truth = p(dir, &format!("truth{seed}.json"));
    ok(&[
        "synth", "--seed", seed, "--days", "2", "--points", points, "--out", s(&frame), "--truth", s(&truth),
    ]);
    (frame, truth)
}

#[test]
fn replay_ingest_writes_frame() {
    let dir = TempDir::new().unwrap();
    let inv = p(&dir, "inv.csv");
    fs::write(
        &inv,
        "device_id,topic,stream,unique_sensor,edge_process\nD1,room,temp,true,none\nD1,room,hum,true,none\n",
    )
    .unwrap();
    let readings = p(&dir, "readings.csv");
    let mut text = String::from("timestamp,device_id,topic,stream,value\n");
    for i in 0..10 {
        let t = 1_700_000_000 + i * 60;
        text += &format!("{t},D1,room,temp,{}\n{},D1,room,hum,{}\n", 20 + i, t + 5, 40 + i);
    }
    text += "1700000030,D1,room,temp,garbage\n";
    fs::write(&readings, text).unwrap();
    let frame = p(&dir, "frame.csv");

    let v = ok(&[
        "ingest", "--replay", s(&readings), "--grid", "60", "--inventory", s(&inv), "--out", s(&frame),
    ]);
    assert_eq!(v["rows"], 10);
    assert_eq!(v["columns"], 2);
    assert_eq!(v["dropped_readings"], 1);

    let body = fs::read_to_string(&frame).unwrap();
    assert_eq!(body.lines().next().unwrap(), "timestamp,room/hum,room/temp");
    assert_eq!(body.lines().count(), 11);
    let meta: Value = serde_json::from_str(&fs::read_to_string(p(&dir, "frame.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config_hash"], v["config_hash"]);
}

#[test]
fn missing_input_exits_2_and_names_path() {
    let dir = TempDir::new().unwrap();
    let missing = p(&dir, "nowhere.csv");
    let out = sentinel(&["ingest", "--replay", s(&missing), "--out", s(&p(&dir, "f.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn live_capture_against_absent_broker_writes_empty_capture() {
    let dir = TempDir::new().unwrap();
    // Grab a free port and release it so nothing is listening there.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out_path = p(&dir, "capture.csv");
    let broker = format!("mqtt://127.0.0.1:{port}");
    let v = ok(&["ingest", "--live", "--broker", &broker, "--duration", "500ms", "--out", s(&out_path)]);
    assert_eq!(v["readings"], 0);
    let body = fs::read_to_string(&out_path).unwrap();
    assert_eq!(body.trim(), "timestamp,device_id,topic,stream,value");
}

#[test]
fn live_without_broker_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = sentinel(&["ingest", "--live", "--out", s(&p(&dir, "c.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_deterministic_given_seed() {
    let dir = TempDir::new().unwrap();
    let (frame, _) = synth(&dir, "5", "0");
    let cfg = p(&dir, "train.toml");
    fs::write(&cfg, CONV_TRAIN).unwrap();
    let a = p(&dir, "a.json");
    let b = p(&dir, "b.json");
    ok(&["train", "--config", s(&cfg), "--frame", s(&frame), "--seed", "7", "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--frame", s(&frame), "--seed", "7", "--out", s(&b)]);

    let params = |path: &Path| fs::read(path).unwrap();
    assert_eq!(params(&a), params(&b));

    let c = p(&dir, "c.json");
    ok(&["train", "--config", s(&cfg), "--frame", s(&frame), "--seed", "8", "--out", s(&c)]);
    assert_ne!(params(&a), params(&c));
}

#[test]
fn training_without_seed_is_refused() {
    let dir = TempDir::new().unwrap();
    let (frame, _) = synth(&dir, "5", "0");
    let cfg = p(&dir, "train.toml");
    fs::write(&cfg, CONV_TRAIN).unwrap();
    let out = sentinel(&["train", "--config", s(&cfg), "--frame", s(&frame), "--out", s(&p(&dir, "m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let out = Command::new(env!("CARGO_BIN_EXE_sentinel"))
        .args(["train", "--config", s(&cfg), "--frame", s(&frame), "--out", s(&p(&dir, "m.json"))])
        .env("SENTINEL_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn detect_then_eval() {
    let dir = TempDir::new().unwrap();
    let (frame, truth) = synth(&dir, "11", "3");
    let cfg = p(&dir, "train.toml");
    fs::write(&cfg, CONV_TRAIN).unwrap();
    let model = p(&dir, "m.json");
    let verdicts = p(&dir, "v.csv");
    let report = p(&dir, "report.json");
    ok(&["train", "--config", s(&cfg), "--frame", s(&frame), "--seed", "1", "--out", s(&model)]);
    let d = ok(&["detect", "--model", s(&model), "--frame", s(&frame), "--out", s(&verdicts)]);
    assert!(d["verdicts"].as_u64().unwrap() > 0);

    let e = ok(&["eval", "--verdicts", s(&verdicts), "--truth", s(&truth), "--out", s(&report)]);
    let written: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(written, e);
    let tp = e["tp"].as_u64().unwrap();
    let fn_ = e["fn"].as_u64().unwrap();
    assert_eq!(tp + fn_, 3);
    let total = e["fp"].as_u64().unwrap() + e["tn"].as_u64().unwrap() + e["in_event"].as_u64().unwrap();
    assert_eq!(total, e["evaluated"].as_u64().unwrap());
    assert!(e["config_hash"].is_string());
}

#[test]
fn eval_refuses_truth_for_another_frame() {
    let dir = TempDir::new().unwrap();
    let (frame, _) = synth(&dir, "11", "2");
    let (_, other_truth) = synth(&dir, "12", "2");
    let cfg = p(&dir, "train.toml");
    fs::write(&cfg, CONV_TRAIN).unwrap();
    let model = p(&dir, "m.json");
    let verdicts = p(&dir, "v.csv");
    ok(&["train", "--config", s(&cfg), "--frame", s(&frame), "--seed", "1", "--out", s(&model)]);
    ok(&["detect", "--model", s(&model), "--frame", s(&frame), "--out", s(&verdicts)]);
    let out = sentinel(&["eval", "--verdicts", s(&verdicts), "--truth", s(&other_truth)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame"));
}

#[test]
fn sweep_two_conditions_by_two_detectors() {
    let dir = TempDir::new().unwrap();
    let (frame, truth) = synth(&dir, "21", "2");
    let plan = p(&dir, "plan.toml");
    let mut text = String::from("seed = 3\nworkers = 2\n");
    for (cond, threshold) in [("DT", 0.1), ("NT", 0.1)] {
        for det in ["isolation_forest", "conv"] {
            text += &format!("\n[[run]]\nconfig_id = \"{cond}-{det}\"\n");
            text += &format!(
                "[run.condition]\ncondition = \"{cond}\"\nsource_stream = \"nir/natural\"\nthreshold = {threshold}\n"
            );
            text += "[[run.stages]]\nstage = \"scale\"\nkind = \"standard\"\n";
            if det == "conv" {
                text += "[run.detector]\nkind = \"forecaster\"\nnetwork = \"conv1d\"\n[run.detector.config]\nmax_epochs = 2\n";
            } else {
                text += "[run.detector]\nkind = \"isolation_forest\"\ntrees = 20\nsubsample = 64\nseed = 0\n";
            }
        }
    }
    fs::write(&plan, text).unwrap();
    let results = p(&dir, "results.csv");
    let plot = p(&dir, "plot.jsonl");
    let v = ok(&[
        "sweep", "--plan", s(&plan), "--train", s(&frame), "--truth", s(&truth), "--results", s(&results),
        "--plot", s(&plot),
    ]);
    assert_eq!(v["runs"], 4);
    assert_eq!(v["failed"], 0);
    let body = fs::read_to_string(&results).unwrap();
    assert_eq!(body.lines().count(), 5, "{body}");
    for id in ["DT-isolation_forest", "DT-conv", "NT-isolation_forest", "NT-conv"] {
        assert!(body.contains(id), "{id} missing from {body}");
    }
    // One series per (scaling, detector), each holding both conditions.
    let plot = fs::read_to_string(&plot).unwrap();
    let series: Vec<Value> = plot.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(series.len(), 2);
    assert!(series.iter().all(|s| s["config_ids"].as_array().unwrap().len() == 2));
}

#[test]
fn help_on_every_command() {
    let commands = ["ingest", "synth", "train", "detect", "eval", "sweep", "combos"];
    let top = sentinel(&["--help"]);
    assert_eq!(top.status.code(), Some(0));
    let text = String::from_utf8_lossy(&top.stdout);
    for c in commands {
        assert!(text.contains(c), "{c} not listed");
        let out = sentinel(&[c, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{c} --help");
        let help = String::from_utf8_lossy(&out.stdout);
        // Each flag line should carry a description.
        for line in help.lines().filter(|l| l.trim_start().starts_with("--")) {
            let parts: Vec<&str> = line.trim().splitn(2, "  ").collect();
            assert!(
                parts.len() == 2 && !parts[1].trim().is_empty(),
                "{c}: undocumented flag `{line}`"
            );
        }
    }
}

#[test]
fn combos_counts_reference_inventory() {
    let out = sentinel(&["combos"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("intra=") && text.contains("inter="), "{text}");
}
