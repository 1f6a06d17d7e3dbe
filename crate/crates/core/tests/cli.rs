//! The `mar` binary: subcommands, outputs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn mar(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mar"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("mar runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\n{}{}",
        o.status.code(),
        stdout(o),
        stderr(o)
    );
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mar(&[], dir.path()).status.code(), Some(2));
    assert_eq!(mar(&["train"], dir.path()).status.code(), Some(2));
    let o = mar(&["simulate", "--phantom", "cube"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown phantom"));
    let o = mar(&["simulate", "--image-size", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = mar(&["recon", "--sino", "/nonexistent/s"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error:"));
    let o = mar(&["eval", "--data", "/nonexistent"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_then_correct_classically() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = mar(&["simulate", "--image-size", "32", "--mask-id", "2"], &sim);
    assert_ok(&o);
    assert!(stdout(&o).contains("metal pixels"));
    for f in [
        "s_ma.f32",
        "s_ma.json",
        "s_gt.f32",
        "x_gt.f32",
        "x_gt.png",
        "x_ma.png",
        "mask.f32",
        "trace.f32",
    ] {
        assert!(sim.join(f).exists(), "{f} missing");
    }

    let s_ma = sim.join("s_ma");
    let s_ma = s_ma.to_str().unwrap();
    let rec = dir.path().join("rec");
    assert_ok(&mar(&["recon", "--sino", s_ma], &rec));
    assert!(rec.join("recon.f32").exists() && rec.join("recon.png").exists());

    for (cmd, name) in [("mar-li", "li"), ("mar-nmar", "nmar")] {
        let out = dir.path().join(name);
        assert_ok(&mar(&[cmd, "--sino", s_ma], &out));
        assert!(out.join(format!("s_{name}.f32")).exists());
        assert!(out.join(format!("x_{name}.png")).exists());
        assert!(out.join("mask.f32").exists());
    }
}

#[test]
fn generate_train_infer_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"epochs": 1, "batch_size": 2, "image_size": 32, "n_train": 4, "n_test": 2, "width": 2, "scales": 2}"#,
    )
    .unwrap();
    let config = config.to_str().unwrap();

    let data = dir.path().join("data");
    let o = mar(&["--config", config, "gen-data"], &data);
    assert_ok(&o);
    assert!(stdout(&o).contains("4 training and 2 test cases"));
    let data_arg = data.to_str().unwrap();

    let run = dir.path().join("run");
    let o = mar(&["--config", config, "train", "--data", data_arg], &run);
    assert_ok(&o);
    assert!(stdout(&o).contains("epoch    1"));
    let ckpt = run.join("model.ckpt");
    assert!(ckpt.exists());
    let ckpt_arg = ckpt.to_str().unwrap();

    let sim = dir.path().join("sim");
    assert_ok(&mar(&["simulate", "--image-size", "32"], &sim));
    let inf = dir.path().join("infer");
    let s_ma = sim.join("s_ma");
    assert_ok(&mar(
        &["infer", "--checkpoint", ckpt_arg, "--sino", s_ma.to_str().unwrap()],
        &inf,
    ));
    for f in ["x_out.f32", "x_out.png", "x_ma.png", "mask.f32", "trace.f32"] {
        assert!(inf.join(f).exists(), "{f} missing");
    }

    let ev = dir.path().join("eval");
    let o = mar(
        &[
            "eval",
            "--data",
            data_arg,
            "--checkpoint",
            ckpt_arg,
            "--methods",
            "li,nmar,ours",
            "--panels",
            "1",
        ],
        &ev,
    );
    assert_ok(&o);
    let table = stdout(&o);
    for m in ["li", "nmar", "ours"] {
        assert!(table.lines().any(|l| l.starts_with(m)), "{m} missing from\n{table}");
    }
    assert!(ev.join("metrics.csv").exists());

    // a model method without its checkpoint is rejected
    let o = mar(
        &["eval", "--data", data_arg, "--methods", "ours"],
        &dir.path().join("eval2"),
    );
    assert!(!o.status.success());
}

#[test]
fn infer_rejects_a_scan_of_another_size() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_ok(&mar(&["simulate", "--image-size", "48"], &sim));

    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"epochs": 1, "image_size": 32, "n_train": 2, "n_test": 1, "width": 2, "scales": 2}"#,
    )
    .unwrap();
    let config = config.to_str().unwrap();
    let data = dir.path().join("data");
    assert_ok(&mar(&["--config", config, "gen-data"], &data));
    let run = dir.path().join("run");
    let o = mar(&["--config", config, "train", "--data", data.to_str().unwrap()], &run);
    assert_ok(&o);

    let o = mar(
        &[
            "infer",
            "--checkpoint",
            run.join("model.ckpt").to_str().unwrap(),
            "--sino",
            sim.join("s_ma").to_str().unwrap(),
        ],
        &dir.path().join("inf"),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
