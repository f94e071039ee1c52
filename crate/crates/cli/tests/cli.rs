use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn plv(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plv"))
        .args(args)
        .env("PLV_DATA", data)
        .output()
        .expect("plv runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn submit(data: &Path, actor: &str, op: &str, args: &str) -> String {
    stdout(&plv(data, &["tx", "submit", "--as", actor, "--op", op, "--args", args]))
}

fn seeded(dir: &Path) {
    stdout(&plv(dir, &["init", "--durability", "buffered"]));
    submit(dir, "farm-a", "register_animal", r#"{"animal_id":"cow-1","born_at":"2023-03-01"}"#);
    submit(dir, "farm-a", "register_batch", r#"{"batch_id":"m-1","source_animals":["cow-1"],"rfid":"E2001"}"#);
    submit(dir, "farm-a", "transfer_custody", r#"{"batch_id":"m-1","to":"proc-1"}"#);
    submit(dir, "proc-1", "process_batch", r#"{"inputs":["m-1"],"output_id":"c-1","process_kind":"cheese"}"#);
}

#[test]
fn submit_prints_tx_id_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&plv(dir.path(), &["init"]));
    let line = submit(dir.path(), "farm-a", "register_animal", r#"{"animal_id":"cow-1","born_at":"2023-03-01"}"#);
    let (tx_id, flag) = line.trim().split_once(' ').unwrap();
    assert_eq!(tx_id.len(), 64);
    assert_eq!(flag, "VALID");

    let twice = plv(dir.path(), &["init"]);
    assert!(!twice.status.success());
    assert!(String::from_utf8_lossy(&twice.stderr).contains("ALREADY_INITIALIZED"));
}

#[test]
fn explicit_endorsers_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&plv(dir.path(), &["init"]));
    let args = r#"{"animal_id":"cow-1","born_at":"2023-03-01"}"#;
    let base = ["tx", "submit", "--as", "farm-a", "--op", "register_animal", "--args", args, "--endorsers"];
    let single = plv(dir.path(), &[&base[..], &["peer-bank"]].concat());
    assert!(String::from_utf8_lossy(&single.stderr).contains("INSUFFICIENT_ENDORSEMENTS"));
    let stranger = plv(dir.path(), &[&base[..], &["peer-bank,peer-nowhere"]].concat());
    assert!(!stranger.status.success());
    assert!(String::from_utf8_lossy(&stranger.stderr).contains("NOT_AN_ENDORSER"));
    let good = plv(dir.path(), &[&base[..], &["peer-bank,peer-shop-2"]].concat());
    assert!(stdout(&good).trim().ends_with("VALID"));
}

#[test]
fn queries_over_a_reopened_network() {
    let dir = tempfile::tempdir().unwrap();
    seeded(dir.path());

    let back: Value = serde_json::from_str(&stdout(&plv(dir.path(), &["trace", "back", "c-1"]))).unwrap();
    assert_eq!(back["origin_farms"], serde_json::json!(["farm-a"]));
    let tokens: Value = serde_json::from_str(&stdout(&plv(dir.path(), &["tokens", "farm-a"]))).unwrap();
    assert_eq!(tokens["balance"], 1);

    let payload = stdout(&plv(dir.path(), &["qr", "encode", "c-1"]));
    assert!(payload.starts_with("PLV1:c-1:"));
    let verified: Value = serde_json::from_str(&stdout(&plv(dir.path(), &["qr", "verify", payload.trim()]))).unwrap();
    assert_eq!(verified["batch_id"], "c-1");
    let bad = plv(dir.path(), &["qr", "verify", "PLV1:c-1:1"]);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("MALFORMED_PAYLOAD"));

    let dump = stdout(&plv(dir.path(), &["state", "dump", "--peer", "peer-farm-b"]));
    let keys: Vec<String> = dump
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["key"].as_str().unwrap().to_string())
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(keys.len() >= 4);
}

#[test]
fn recall_from_a_saved_report() {
    let dir = tempfile::tempdir().unwrap();
    seeded(dir.path());
    let report = stdout(&plv(dir.path(), &["trace", "forward", "farm-a"]));
    let path = dir.path().join("report.json");
    std::fs::write(&path, report).unwrap();
    let report_arg = path.to_str().unwrap();

    let line = stdout(&plv(dir.path(), &["recall", "m-1", "c-1", "--report", report_arg]));
    assert!(line.trim().ends_with("VALID"));
    let outside = plv(dir.path(), &["recall", "c-9", "--report", report_arg]);
    assert!(String::from_utf8_lossy(&outside.stderr).contains("NOT_IN_REPORT"));
}

#[test]
fn ledger_verify_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    seeded(dir.path());
    let file = dir.path().join("peer-shop-1").join("main.ledger");
    let file_arg = file.to_str().unwrap();
    assert_eq!(stdout(&plv(dir.path(), &["ledger", "verify", file_arg])).trim(), "OK 5");

    let mut bytes = std::fs::read(&file).unwrap();
    let at = bytes.len() - 40;
    bytes[at] ^= 0x01;
    std::fs::write(&file, bytes).unwrap();
    let out = plv(dir.path(), &["ledger", "verify", file_arg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("BAD block="));
}

#[test]
fn sim_workload_then_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (scenario, config, metrics) = (p("scenario.json"), p("config.json"), p("metrics.json"));
    let args = ["sim", "workload", "--farms", "3", "--batches", "40", "--scenario", &scenario, "--config", &config];
    assert!(stdout(&plv(dir.path(), &args)).contains("40 batches"));
    stdout(&plv(dir.path(), &["sim", "run", "--config", &config, "--scenario", &scenario, "--out", &metrics]));
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    let scenario: Value = serde_json::from_str(&std::fs::read_to_string(&scenario).unwrap()).unwrap();
    assert_eq!(metrics["committed_tx"], scenario["actions"].as_array().unwrap().len());
    assert_eq!(metrics["refused_tx"], 0);
}
