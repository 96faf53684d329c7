use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use econsim_core::experiment::ExperimentConfig;
use econsim_serve::SessionConfig;

fn econsim(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_econsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "econsim {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const TINY: &str = r#"
seeds = [1, 2]
eval_episodes = 2

[env]
horizon = 100
tax_period = 50

[train]
replicas = 2
horizon = 50
seq_len = 25
agent_minibatch = 50
planner_minibatch = 50
agent_updates = 1
planner_updates = 1
phase1_samples = 100
phase2_samples = 100
anneal_samples = 100

[train.agent_arch]
conv_channels = [2]
fc_layers = 1
fc_dim = 8
cell_size = 8

[train.planner_arch]
conv_channels = [2]
fc_layers = 1
fc_dim = 8
cell_size = 8
"#;

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    ExperimentConfig::load(&root.join("desk.toml")).unwrap().validate().unwrap();
    let s: SessionConfig = toml::from_str(&fs::read_to_string(root.join("session.toml")).unwrap()).unwrap();
    s.validate().unwrap();
    assert_eq!(s.env.horizon, 3000);
}

#[test]
fn train_eval_replay_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("runs");
    let out_s = out.to_str().unwrap();

    econsim(&["train", "-c", cfg, "--treatment", "learned", "--seeds", "3", "-o", out_s]);
    let seed_dir = out.join("learned/seed-3");
    for f in ["phase1.ckpt", "phase2.ckpt", "training-phase1.csv", "training-phase2.csv"] {
        assert!(seed_dir.join(f).exists(), "missing {f}");
    }

    let ckpt = seed_dir.join("phase2.ckpt");
    let o = econsim(&[
        "eval", "-c", cfg, "--treatment", "learned", "-o", out_s, "--checkpoint", ckpt.to_str().unwrap(),
    ]);
    assert!(stdout(&o).starts_with("learned: 4 episodes"), "{}", stdout(&o));
    econsim(&["eval", "-c", cfg, "--treatment", "us-federal", "-o", out_s]);

    let summary = fs::read_to_string(out.join("learned/summary.csv")).unwrap();
    assert!(summary.starts_with("treatment,seed,episode,productivity"));
    assert_eq!(summary.lines().count(), 5);

    let mut replays: Vec<PathBuf> = fs::read_dir(out.join("us_federal/replays"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    replays.sort();
    assert_eq!(replays.len(), 4);
    let ticks = dir.path().join("ticks.csv");
    let o = econsim(&["replay", replays[0].to_str().unwrap(), "--ticks-csv", ticks.to_str().unwrap()]);
    assert!(stdout(&o).starts_with("ok: 100 ticks"));
    assert_eq!(fs::read_to_string(&ticks).unwrap().lines().count(), 101);

    let bd = dir.path().join("breakdown.csv");
    let mut args = vec!["analyze", "breakdown", "-o", bd.to_str().unwrap()];
    args.extend(replays.iter().map(|p| p.to_str().unwrap()));
    econsim(&args);
    assert_eq!(fs::read_to_string(&bd).unwrap().lines().count(), 5);

    let o = econsim(&["analyze", "gaming", replays[1].to_str().unwrap(), "--agent", "2"]);
    assert!(stdout(&o).contains("smoothed_tax"));

    let a = out.join("learned/summary.csv");
    let b = out.join("us_federal/summary.csv");
    let o = econsim(&["analyze", "ttest", a.to_str().unwrap(), b.to_str().unwrap(), "--metric", "productivity"]);
    assert!(stdout(&o).starts_with("productivity: n 4"), "{}", stdout(&o));
}

#[test]
fn tampered_replay_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("runs");
    econsim(&["eval", "-c", cfg.to_str().unwrap(), "--seeds", "5", "-o", out.to_str().unwrap()]);
    let rdir = out.join("free/replays");
    let file = fs::read_dir(&rdir).unwrap().next().unwrap().unwrap().path();
    let text = fs::read_to_string(&file).unwrap();
    // bump one recorded coin value
    let tampered = text.replacen("\"coin\":[0.0", "\"coin\":[0.5", 1);
    assert_ne!(text, tampered);
    fs::write(&file, tampered).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_econsim")).args(["replay", file.to_str().unwrap()]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not re-simulate"));
}

#[test]
fn saez_fit_recovers_a_planted_elasticity() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("samples.csv");
    let mut text = String::from("income,rate\n");
    // z = 50 (1 - r)^0.4 exactly
    for i in 0..200 {
        let r = (i % 10) as f64 * 0.08;
        let z = 50.0 * (1.0 - r).powf(0.4) * (1.0 + (i / 10) as f64 * 0.1);
        text.push_str(&format!("{z},{r}\n"));
    }
    fs::write(&p, text).unwrap();
    let o = econsim(&["saez-fit", p.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let e = v["fit"]["elasticity"].as_f64().unwrap();
    assert!((e - 0.4).abs() < 1e-6, "{e}");
    let rates = v["rates"].as_array().unwrap();
    assert_eq!(rates.len(), 7);
    assert!(rates.iter().all(|r| (0.0..=1.0).contains(&r.as_f64().unwrap())));
}

#[test]
fn bad_input_fails_cleanly() {
    let o = Command::new(env!("CARGO_BIN_EXE_econsim")).args(["eval", "--treatment", "flat"]).output().unwrap();
    assert!(!o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_econsim"))
        .args(["replay", "/nonexistent/replay.jsonl"])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/replay.jsonl"));
}
