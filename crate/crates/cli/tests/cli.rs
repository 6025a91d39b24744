use std::path::Path;
use std::process::{Command, Output};

fn saja(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saja"))
        .args(args)
        .output()
        .unwrap()
}

fn tiny_train_config(dir: &Path) -> String {
    let path = dir.join("train.json");
    let cfg = serde_json::json!({
        "total_steps": 80,
        "batch_size": 16,
        "eval_interval": 40,
        "eval_episodes": 1,
        "actor_hidden": [8],
        "critic_hidden": [8],
        "mixer_embed": 4
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn train_tiny(dir: &Path) -> String {
    let ckpt = dir.join("ckpt");
    let cfg = tiny_train_config(dir);
    let out = saja(&[
        "train",
        "--algo",
        "facmac",
        "--scenario",
        "pp_3a",
        "--seed",
        "1",
        "--config",
        &cfg,
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    ckpt.to_str().unwrap().to_string()
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        saja(&["eval-attack", "--no-such-flag"]).status.code(),
        Some(2)
    );
    let missing = dir.path().join("missing");
    assert_eq!(
        saja(&["eval-attack", "--checkpoint", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(
        saja(&["eval-attack", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        saja(&[
            "train",
            "--algo",
            "facmac",
            "--out",
            "x",
            "--config",
            bad.to_str().unwrap()
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        saja(&[
            "train",
            "--algo",
            "maddpg",
            "--out",
            "x",
            "--eps-adv",
            "0.1"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn train_then_attack_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    assert!(Path::new(&ckpt).join("checkpoint.json").exists());
    assert!(Path::new(&ckpt).join("checkpoint.bin").exists());
    assert_eq!(
        std::fs::read_to_string(Path::new(&ckpt).join("curve.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();
    let common = [
        "--checkpoint",
        &ckpt,
        "--algo",
        "facmac",
        "--seeds",
        "2",
        "--episodes",
        "1",
        "--k-s",
        "2",
        "--k-a",
        "2",
        "--out",
        out,
    ];

    let mut args = vec![
        "eval-attack",
        "--method",
        "saja",
        "--eps-s",
        "0.02",
        "--eps-a",
        "0.05",
        "--victims",
        "3",
    ];
    args.extend_from_slice(&common);
    let r = saja(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.lines().nth(2).unwrap().contains(",3,saja,"));

    let mut args = vec!["sweep", "--totals", "0.02", "--splits", "2"];
    args.extend_from_slice(&common);
    assert!(saja(&args).status.success());
    assert_eq!(
        std::fs::read_to_string(out_dir.join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let mut args = vec![
        "hist",
        "--methods",
        "none,random_action",
        "--timesteps",
        "10",
    ];
    args.extend_from_slice(&common);
    assert!(saja(&args).status.success());
    assert_eq!(
        std::fs::read_to_string(out_dir.join("hist.csv"))
            .unwrap()
            .lines()
            .count(),
        81
    );

    let mut args = vec!["ablate", "--victim-counts", "1"];
    args.extend_from_slice(&common);
    assert!(saja(&args).status.success());
    assert_eq!(
        std::fs::read_to_string(out_dir.join("metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        7
    );

    let mut args = vec!["eval-attack", "--scenario", "pp_6a"];
    args.extend_from_slice(&common);
    assert_eq!(saja(&args).status.code(), Some(2));
}

#[test]
fn oracle_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = saja(&[
        "oracle",
        "--suite",
        "theorem1",
        "--instances",
        "5",
        "--seed",
        "7",
        "--out",
        out,
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("oracle_report.json")).unwrap(),
    )
    .unwrap();
    let instances = report["instances"].as_array().unwrap();
    assert_eq!(instances.len(), 5);
    assert!(instances.iter().all(|i| i["report"]["holds"].is_boolean()));
}
