//! End-to-end checks of the `mtd` binary: exit codes, output determinism,
//! and the deliberate-fault harness behind `verify --mutate`.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn mtd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtd"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary launches")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn write_json(path: &Path, value: &serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializable")).expect("config written");
}

fn generate(dir: &Path, n: usize, seed: u64, out_name: &str) -> std::path::PathBuf {
    let config = dir.join("gen.json");
    write_json(&config, &serde_json::json!({ "n_sequences": n }));
    let data = dir.join(out_name);
    let out = run(mtd().args([
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--out",
        data.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "generate failed: {}", stderr_of(&out));
    data
}

#[test]
fn generate_same_seed_writes_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let a = generate(dir.path(), 12, 99, "a");
    let b = generate(dir.path(), 12, 99, "b");
    for file in ["manifest.json", "seq_0.json", "seq_11.json"] {
        let left = fs::read(a.join(file)).unwrap();
        let right = fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical-seed runs");
    }
    let different = generate(dir.path(), 12, 100, "c");
    assert_ne!(
        fs::read(a.join("seq_0.json")).unwrap(),
        fs::read(different.join("seq_0.json")).unwrap(),
        "different seeds should produce different sequences"
    );
}

#[test]
fn train_eval_round_trip_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), 12, 5, "data");
    let run_cfg = dir.path().join("run.json");
    write_json(
        &run_cfg,
        &serde_json::json!({
            "dataset": data.to_str().unwrap(),
            "epochs": 2,
            "hidden_dim": 16,
            "heads": 2
        }),
    );

    let train_into = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(mtd().args([
            "train",
            "--config",
            run_cfg.to_str().unwrap(),
            "--profile",
            "ci",
            "--seed",
            "11",
            "--out",
            out_dir.to_str().unwrap(),
        ]));
        assert_eq!(code(&out), 0, "train failed: {}", stderr_of(&out));
        assert!(stdout_of(&out).contains("epoch 1/2"));
        out_dir
    };
    let first = train_into("run_a");
    let second = train_into("run_b");
    for file in ["metrics.csv", "model.ckpt"] {
        assert_eq!(
            fs::read(first.join(file)).unwrap(),
            fs::read(second.join(file)).unwrap(),
            "{file} differs between identical-seed trainings"
        );
    }

    // eval through direct flags, writing the CSV next to the run
    let csv_out = dir.path().join("eval.csv");
    let out = run(mtd().args([
        "eval",
        "--checkpoint",
        first.join("model.ckpt").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--split",
        "val",
        "--out",
        csv_out.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "eval failed: {}", stderr_of(&out));
    let printed = stdout_of(&out);
    assert!(printed.starts_with("relation,f1,ap,auc,loss,n_pairs,n_masked"));
    assert_eq!(fs::read_to_string(&csv_out).unwrap(), printed);

    // eval through a config file resolves the same way
    let eval_cfg = dir.path().join("eval.json");
    write_json(
        &eval_cfg,
        &serde_json::json!({
            "checkpoint": first.join("model.ckpt").to_str().unwrap(),
            "dataset": data.to_str().unwrap(),
            "split": "val"
        }),
    );
    let via_cfg = run(mtd().args(["eval", "--config", eval_cfg.to_str().unwrap()]));
    assert_eq!(code(&via_cfg), 0);
    assert_eq!(stdout_of(&via_cfg), printed);
}

#[test]
fn ablation_sweep_writes_one_row_group_per_cell() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), 10, 21, "data");
    let sweep_cfg = dir.path().join("sweep.json");
    write_json(
        &sweep_cfg,
        &serde_json::json!({
            "run": { "dataset": data.to_str().unwrap(), "epochs": 1, "hidden_dim": 8, "heads": 2 },
            "methods": ["multi-task", "single-task:collision"]
        }),
    );
    let sweep_out = dir.path().join("sweep");
    let out = run(mtd().args([
        "ablate",
        "--config",
        sweep_cfg.to_str().unwrap(),
        "--profile",
        "ci",
        "--seed",
        "2",
        "--out",
        sweep_out.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "ablate failed: {}", stderr_of(&out));
    let table = fs::read_to_string(sweep_out.join("ablation.csv")).unwrap();
    assert!(table.starts_with("axis,value,relation,f1,ap,auc,loss,error"));
    assert!(table.contains("method,multi-task,"));
    assert!(table.contains("method,single-task:collision,"));
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();

    // generator config missing its one required field
    let bad_gen = dir.path().join("bad_gen.json");
    write_json(&bad_gen, &serde_json::json!({ "objects_min": 2 }));
    let out = run(mtd().args([
        "generate",
        "--config",
        bad_gen.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("n_sequences"), "message should name the field");

    // run config without a dataset
    let bad_run = dir.path().join("bad_run.json");
    write_json(&bad_run, &serde_json::json!({ "epochs": 1 }));
    let out = run(mtd().args([
        "train",
        "--config",
        bad_run.to_str().unwrap(),
        "--out",
        dir.path().join("y").to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("dataset"));

    // unknown verification fault name
    let out = run(mtd().args(["verify", "--mutate", "no-such-fault"]));
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("sigmoid-backward-sign"));

    // malformed worker cap
    let out = run(mtd()
        .env("MTD_NUM_WORKERS", "many")
        .args(["verify", "--mutate", "no-such-fault"]));
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("MTD_NUM_WORKERS"));

    // training on a relation the dataset does not carry
    let data = generate(dir.path(), 6, 3, "data");
    let bad_rel = dir.path().join("bad_rel.json");
    write_json(
        &bad_rel,
        &serde_json::json!({
            "dataset": data.to_str().unwrap(),
            "epochs": 1,
            "method": "single-task:teleport"
        }),
    );
    let out = run(mtd().args([
        "train",
        "--config",
        bad_rel.to_str().unwrap(),
        "--profile",
        "ci",
        "--out",
        dir.path().join("z").to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("teleport"));
}

#[test]
fn injected_faults_break_the_gradient_checks() {
    for fault in ["sigmoid-backward-sign", "mul-backward-drop-rhs"] {
        let out = run(mtd().args(["verify", "--mutate", fault]));
        assert_eq!(code(&out), 1, "fault {fault} should fail verification");
        let report = stdout_of(&out);
        assert!(report.contains("injected fault"));
        assert!(
            report.contains("check gradients-primitives         FAIL"),
            "fault {fault} must surface in the primitive gradient check"
        );
        let err = stderr_of(&out);
        assert!(
            err.contains("verification check `gradients-primitives` failed"),
            "stderr should carry the first failing context, got: {err}"
        );
    }
}
