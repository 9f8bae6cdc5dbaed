use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spectf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectf")).current_dir(dir).args(args).output().expect("spawn spectf")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

const SPEC: &str = r#"{"length": 400, "bands": [{"bin": 1, "base_amp": 1.0}, {"bin": 3, "base_amp": 1.0}],
 "regime": {"bin": 3, "factor": 2.0, "period": 48, "text_lead": 12}, "noise_sigma": 0.05}"#;

const CONFIG: &str = r#"{"data": {"series": "data/series.csv", "text": "data/text.jsonl", "name": "synth"},
 "d_model": 8, "d_k": 4, "train_epochs": 2, "patience": 1, "learning_rate": 0.001, "text_encoder": {"dim": 16}}"#;

#[test]
fn synth_train_eval_spectrum_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("spec.json"), SPEC).unwrap();
    fs::write(dir.join("cfg.json"), CONFIG).unwrap();

    let out = spectf(dir, &["synth", "--spec", "spec.json", "--out-dir", "data", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("data/series.csv").exists() && dir.join("data/text.jsonl").exists());

    let out = spectf(dir, &["--json", "train", "--config", "cfg.json", "--out-dir", "runs", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trained = json(&out);
    let report = &trained["runs"][0]["report"];
    assert_eq!(report["run_id"], "synth-full-s5-h12");
    let run = dir.join("runs/synth-full-s5-h12");
    for f in ["params.sptf", "model.json", "config.json", "report.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ledger = fs::read_to_string(dir.join("runs/ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 2);

    // evaluating the saved checkpoint reproduces the training-time test metrics
    let out = spectf(dir, &["--json", "eval", "--checkpoint", "runs", "--baseline"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval = json(&out);
    assert_eq!(eval["results"][0]["metrics"], report["test"]);
    assert!(eval["results"][0]["baseline"]["mse_norm"].is_number());

    let out = spectf(dir, &["--json", "spectrum", "--checkpoint", "runs/synth-full-s5-h12", "--window", "2", "--out", "s.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dump: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("s.json")).unwrap()).unwrap();
    assert_eq!(dump["input"].as_array().unwrap().len(), 13);
    assert_eq!(dump["fused"].as_array().unwrap().len(), 13);
    assert_eq!(dump["predicted"].as_array().unwrap().len(), 7);
    assert_eq!(dump["attention"][0].as_array().unwrap().len(), 24);

    // count-params agrees with the checkpoint payload
    let out = spectf(dir, &["--json", "count-params", "--config", "cfg.json"]);
    let params = json(&out)["params"].as_u64().unwrap();
    assert_eq!(report["params"].as_u64().unwrap(), params);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.json"), r#"{"batch_sise": 4}"#).unwrap();
    let out = spectf(dir, &["count-params", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_sise"));

    let out = spectf(dir, &["eval", "--checkpoint", "nowhere"]);
    assert_eq!(out.status.code(), Some(2));

    let out = spectf(dir, &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));

    let out = spectf(dir, &["verify"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.ends_with("PASS")).count(), 4, "{text}");
}
