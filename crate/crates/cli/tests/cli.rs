use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const TINY: &str = r#"
seed = 21

[generator]
n_agents = 8
weeks_train = 2
weeks_test = 1

[anomalies]
fraction = 0.25

[training]
epochs = 1
batch_size = 4

[embedding]
d_model = 8
heads = 2
ff_width = 16
d_embed = 4
window_len = 16
encoder_layers = 1
decoder_layers = 1

[poi]
hidden = 8

[duration]
components = 3
d_model = 8
heads = 2
ff_width = 16
"#;

fn bayesic(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bayesic"));
    cmd.args(args).env_remove("BAYESIC_CONFIG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn sha(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

fn assert_outputs_hashed(m: &Value) {
    let outputs = m["outputs"].as_object().unwrap();
    assert!(!outputs.is_empty());
    for a in outputs.values() {
        let p = PathBuf::from(a["path"].as_str().unwrap());
        assert_eq!(a["sha256"].as_str().unwrap(), sha(&p), "{}", p.display());
    }
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = root.join("run.toml");
    std::fs::write(&config, TINY).unwrap();
    Workspace { _tmp: tmp, root, config }
}

#[test]
fn full_workflow_writes_one_manifest_per_command() {
    let ws = workspace();
    let out = ws.root.join("out");
    let cfg = s(&ws.config);
    let o = s(&out);
    ok(bayesic(&["generate", "--config", cfg, "--out-dir", o], &[]));
    let train = out.join("train.csv");
    let test = out.join("test.csv");
    let labels = out.join("agent_labels.csv");
    ok(bayesic(&["train", "--config", cfg, "--out-dir", o, "--train", s(&train)], &[]));
    let ckpt = out.join("model.ckpt");
    assert!(ckpt.exists() && out.join("model.ckpt.json").exists());
    let log = std::fs::read_to_string(out.join("training_log.jsonl")).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "l_ae", "l_f", "l_total"] {
        assert!(first.get(key).is_some(), "log line lacks {key}");
    }

    ok(bayesic(&["score", "--config", cfg, "--out-dir", o, "--checkpoint", s(&ckpt), "--test", s(&test)], &[]));
    let header = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    let agent_scores = out.join("agent_scores.csv");
    assert!(header.starts_with("agent_id,staypoint_idx,arrival_epoch,p_arrival,p_poi,p_duration,joint,score"));

    let scores = out.join("scores.csv");
    let eval_args = [
        "evaluate", "--config", cfg, "--out-dir", o, "--scores", s(&scores), "--test", s(&test), "--labels",
        s(&labels),
    ];
    ok(bayesic(&eval_args, &[]));
    let metrics_first = std::fs::read(out.join("metrics.json")).unwrap();
    ok(bayesic(&eval_args, &[]));
    assert_eq!(metrics_first, std::fs::read(out.join("metrics.json")).unwrap());
    let metrics: Value = serde_json::from_slice(&metrics_first).unwrap();
    assert!(metrics["agent"]["auroc"].is_f64());
    for f in ["roc_agent.csv", "pr_agent.csv", "roc_staypoint.csv", "pr_staypoint.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(std::fs::read_to_string(out.join("roc_agent.csv")).unwrap().starts_with("fpr,tpr\n"));
    assert!(std::fs::read_to_string(out.join("pr_agent.csv")).unwrap().starts_with("recall,precision\n"));

    ok(bayesic(
        &[
            "fuse", "--config", cfg, "--out-dir", o, "--agent-scores", s(&agent_scores), "--train",
            s(&train), "--test", s(&test), "--labels", s(&labels),
        ],
        &[],
    ));
    let fused: Value = serde_json::from_str(&std::fs::read_to_string(out.join("fused_metrics.json")).unwrap()).unwrap();
    assert!(fused["fused"]["aupr"].is_f64() && fused["unfused"]["aupr"].is_f64());

    for command in ["generate", "train", "score", "evaluate", "fuse"] {
        let m = manifest(&out, command);
        assert_eq!(m["command"], command);
        assert_eq!(m["seed"], 21);
        assert_eq!(m["config"]["training"]["seed"], 21);
        assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
        assert_outputs_hashed(&m);
    }
    let manifests = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".manifest.json"))
        .count();
    assert_eq!(manifests, 5);
}

#[test]
fn training_is_reproducible() {
    let ws = workspace();
    let data = ws.root.join("data");
    ok(bayesic(&["generate", "--config", s(&ws.config), "--out-dir", s(&data)], &[]));
    let train = data.join("train.csv");
    let mut hashes = Vec::new();
    for run in ["a", "b"] {
        let out = ws.root.join(run);
        ok(bayesic(
            &["train", "--config", s(&ws.config), "--out-dir", s(&out), "--train", s(&train)],
            &[],
        ));
        hashes.push(manifest(&out, "train")["outputs"]["checkpoint"]["sha256"].as_str().unwrap().to_string());
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn evaluate_perfect_separation() {
    let ws = workspace();
    let test = ws.root.join("test.csv");
    let scores = ws.root.join("scores.csv");
    std::fs::write(
        &test,
        "agent_id,arrival_epoch,duration_s,poi_type,lat,lon,label\n\
         1,100,60,home,,,normal\n1,200,60,work,,,anomalous\n\
         2,100,60,home,,,normal\n2,200,60,home,,,normal\n",
    )
    .unwrap();
    std::fs::write(
        &scores,
        "agent_id,staypoint_idx,arrival_epoch,p_arrival,p_poi,p_duration,joint,score\n\
         1,0,100,1,1,0.9,0.9,0.1\n1,1,200,1,1,0.1,0.1,0.9\n\
         2,0,100,1,1,0.8,0.8,0.2\n2,1,200,1,1,0.7,0.7,0.3\n",
    )
    .unwrap();
    let out = ws.root.join("eval");
    ok(bayesic(
        &["evaluate", "--set", "seed=1", "--out-dir", s(&out), "--scores", s(&scores), "--test", s(&test)],
        &[],
    ));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["staypoint"]["auroc"], 1.0);
    assert_eq!(m["agent"]["auroc"], 1.0);
    assert_eq!(m["agent"]["aupr"], 1.0);
}

#[test]
fn ablate_reports_full_plus_four_rows() {
    let ws = workspace();
    let data = ws.root.join("data");
    ok(bayesic(&["generate", "--config", s(&ws.config), "--out-dir", s(&data)], &[]));
    let out = ws.root.join("ablate");
    let (train, test, labels) = (data.join("train.csv"), data.join("test.csv"), data.join("agent_labels.csv"));
    let o = ok(bayesic(
        &["ablate", "--out-dir", s(&out), "--train", s(&train), "--test", s(&test), "--labels", s(&labels)],
        &[("BAYESIC_CONFIG", &ws.config)],
    ));
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let variants: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["full", "no_arrival", "no_poi", "no_duration", "no_embedding"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);
    assert_outputs_hashed(&manifest(&out, "ablate"));
}

#[test]
fn configuration_errors_are_reported() {
    let ws = workspace();
    let out = ws.root.join("err");
    let o = bayesic(&["generate", "--out-dir", s(&out)], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    let o = bayesic(
        &["generate", "--config", s(&ws.config), "--set", "generator.agents=3", "--out-dir", s(&out)],
        &[],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("agents"));

    let o = bayesic(&["frobnicate"], &[]);
    assert!(!o.status.success());

    let o = bayesic(&["train", "--config", s(&ws.config), "--out-dir", s(&out), "--train", "/nonexistent.csv"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonexistent"));
}

#[test]
fn env_config_fallback_and_overrides() {
    let ws = workspace();
    let out = ws.root.join("gen");
    ok(bayesic(
        &["generate", "--set", "generator.n_agents=5", "--set", "seed=4", "--out-dir", s(&out)],
        &[("BAYESIC_CONFIG", &ws.config)],
    ));
    let m = manifest(&out, "generate");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config"]["generator"]["n_agents"], 5);
    assert_eq!(m["config"]["generator"]["weeks_train"], 2);
}
