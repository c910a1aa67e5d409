use std::path::Path;
use std::process::{Command, Output};

fn steerreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steerreg")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, model: &str) -> String {
    let text = format!(
        "[data]\nextent = 17\nn_blobs = 3\nn_train = 2\nn_test = 2\nseed = 4\n\n[model]\n{model}\n\n[optim]\nsteps = 3\nseed = 1\n\n[output]\ndir = {}\n",
        dir.join("run").display()
    );
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", o.status.code(), stdout(o), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn param_count_reports_both_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.ini", "variant = standard");
    let o = steerreg(&["param-count", "--config", &cfg]);
    assert_ok(&o);
    assert!(stdout(&o).contains("standard 51291"), "{}", stdout(&o));
    let json = std::fs::read_to_string(dir.path().join("run/param_count.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["equivariant_total"].as_u64().unwrap() < v["standard_total"].as_u64().unwrap());
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ini");
    std::fs::write(&p, "[model]\nvariant = equivariant\n").unwrap();
    let o = steerreg(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ratio"));
    let o = steerreg(&["train", "--config", dir.path().join("missing.ini").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = steerreg(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_rotate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.ini", "variant = standard");
    let out = dir.path().join("run");
    assert_ok(&steerreg(&["gen-data", "--config", &cfg]));
    assert!(out.join("data/pair_003/manifest.json").is_file());
    assert_ok(&steerreg(&["train", "--config", &cfg]));
    let first = std::fs::read(out.join("checkpoint.strg")).unwrap();
    let curve = std::fs::read_to_string(out.join("train_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(curve.starts_with("config_hash,step,pair,total,similarity,smoothness"));

    // Same config, same bytes.
    assert_ok(&steerreg(&["train", "--config", &cfg]));
    assert_eq!(std::fs::read(out.join("checkpoint.strg")).unwrap(), first);

    assert_ok(&steerreg(&["eval", "--config", &cfg]));
    let jsonl = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let recs: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 2);
    for key in ["pair_id", "dice_mean", "dice_per_label", "assd_mean", "loss", "rotation_deg", "config_hash"] {
        assert!(recs[0].get(key).is_some(), "missing {key}");
    }

    assert_ok(&steerreg(&["rotate-eval", "--config", &cfg]));
    let rot = std::fs::read_to_string(out.join("rotate_eval.jsonl")).unwrap();
    let at_zero: Vec<serde_json::Value> = rot
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["rotation_deg"].as_f64() == Some(0.0))
        .collect();
    assert_eq!(at_zero, recs, "angle 0 must reproduce eval");
    assert_eq!(std::fs::read_to_string(out.join("rotate_eval.csv")).unwrap().lines().count(), 8);

    // A checkpoint from another architecture is refused.
    let other = write_config(dir.path(), "b.ini", "variant = equivariant\nratio = 5:2:1");
    let o = steerreg(&["eval", "--config", &other, "--checkpoint", out.join("checkpoint.strg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model config"));
}

#[test]
fn equiv_check_untrained_equivariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e.ini", "variant = equivariant\nratio = 5:2:1");
    let o = steerreg(&["equiv-check", "--config", &cfg]);
    assert_ok(&o);
    let csv = std::fs::read_to_string(dir.path().join("run/equiv_check.csv")).unwrap();
    let stack: f64 = csv
        .lines()
        .find(|l| l.contains(",octahedral,stack,"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(stack <= 1e-5, "stack residual {stack}");
    assert!(csv.contains("rotation_15deg"));
}

#[test]
fn ratio_sweep_and_sample_efficiency_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.ini", "variant = standard");
    let o = steerreg(&["ratio-sweep", "--config", &cfg, "--ratios", "1:0:0,5:2:1,2:2:2"]);
    assert_ok(&o);
    let csv = std::fs::read_to_string(dir.path().join("run/ratio_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("5:2:1"));
    assert!(csv.contains("8/18/18/18"));
    let o = steerreg(&["ratio-sweep", "--config", &cfg, "--ratios", "1:x:0"]);
    assert_eq!(o.status.code(), Some(2));

    // 1/8 of 2 training pairs is empty.
    let o = steerreg(&["sample-efficiency", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));

    let p = dir.path().join("eff.ini");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("n_train = 2", "n_train = 8").replace("steps = 3", "steps = 1");
    std::fs::write(&p, text).unwrap();
    let o = steerreg(&["sample-efficiency", "--config", p.to_str().unwrap()]);
    assert_ok(&o);
    let csv = std::fs::read_to_string(dir.path().join("run/sample_efficiency.csv")).unwrap();
    let n_train: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(n_train, ["8", "4", "2", "1"]);
}
