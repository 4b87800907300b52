//! End-to-end runs of the `gmt` binary on the tiny model.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use gmt_cli::commands::Prediction;
use gmt_cli::{Overrides, RunConfig};
use gmt_core::checkpoint;
use gmt_core::dataset::{load_split, read_sample, write_dataset, write_sample};
use gmt_core::{GenConfig, ModelConfig, Pose9};

fn gmt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gmt"))
}

fn run(args: &[&str]) -> Output {
    gmt().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny model, short training, written as a config file.
fn tiny_config(dir: &Path, epochs: usize) -> PathBuf {
    let mut cfg = RunConfig::resolve(None, Overrides::default()).unwrap();
    cfg.model = ModelConfig::tiny();
    cfg.gen = GenConfig::for_model(&cfg.model);
    cfg.train.learning_rate = 3e-3;
    cfg.train.batch_size = 4;
    cfg.train.epochs = epochs;
    cfg.train.patience = 1000;
    let p = dir.join(format!("tiny{epochs}.toml"));
    fs::write(&p, cfg.to_toml()).unwrap();
    p
}

#[test]
fn gen_data_splits_and_rejects_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let data = dir.path().join("data");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data), "--num-samples", "100", "--seed", "4"]);
    for (split, n) in [("train", 90), ("val", 5), ("test", 5)] {
        assert_eq!(fs::read_dir(data.join(split)).unwrap().count(), n, "{split}");
    }
    assert!(data.join("config.toml").exists() && data.join("run.json").exists());
    assert_eq!(code(&["gen-data", "--out", s(&data), "--num-samples", "0"]), 2);
    assert_eq!(code(&["gen-data", "--out", s(&data), "--num-samples", "5"]), 2);
    assert_eq!(code(&["gen-data", "--out", s(&data)]), 2);
}

#[test]
fn interrupted_training_resumes_to_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 40);
    let data = dir.path().join("data");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data), "--num-samples", "24"]);

    let straight = dir.path().join("straight");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&straight)]);

    let broken = dir.path().join("broken");
    let mut child = gmt()
        .args(["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&broken)])
        .spawn()
        .unwrap();
    while !broken.join("last.ckpt").exists() {
        std::thread::sleep(Duration::from_millis(2));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let epoch = checkpoint::load(&broken.join("last.ckpt")).unwrap().state.unwrap().epoch;
    assert!(epoch < 40, "the run finished before it could be interrupted");

    // a fresh run refuses to clobber the directory
    assert_eq!(code(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&broken)]), 2);
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&broken), "--resume"]);
    for f in ["last.ckpt", "best.ckpt", "train.log", "config.toml", "run.json"] {
        assert_eq!(fs::read(straight.join(f)).unwrap(), fs::read(broken.join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(straight.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 80);

    // resuming under a different configuration is refused
    let other = tiny_config(dir.path(), 41);
    assert_eq!(
        code(&["train", "--config", s(&other), "--data", s(&data), "--out", s(&broken), "--resume"]),
        2
    );
}

#[test]
fn eval_reports_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2);
    let data = dir.path().join("data");
    let run_dir = dir.path().join("run");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data), "--num-samples", "40"]);
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run_dir)]);
    let ckpt = run_dir.join("best.ckpt");
    let report = dir.path().join("report.json");
    let dump = dir.path().join("dump.json");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&report), "--dump", s(&dump)]);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    for key in ["ADE[m]", "FDE[m]", "FD[m]", "AC", "CR"] {
        assert!(doc["metrics"][key].is_number(), "{key}");
    }
    assert_eq!(doc["split"], "test");
    assert_eq!(doc["samples"].as_array().unwrap().len(), 2);
    assert!(doc["samples"][0]["sample"].as_str().unwrap().starts_with("test/"));
    let d: serde_json::Value = serde_json::from_slice(&fs::read(&dump).unwrap()).unwrap();
    let first = &d["samples"][0];
    let n_hist = first["history"].as_array().unwrap().len();
    let n_gt = first["ground_truth"].as_array().unwrap().len();
    assert_eq!(first["prediction"].as_array().unwrap().len(), n_gt - n_hist);

    let val_report = dir.path().join("val.json");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "val", "--out", s(&val_report)]);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(&val_report).unwrap()).unwrap();
    assert_eq!(doc["metrics"]["n_samples"], 2);
    assert_eq!(code(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "holdout", "--out", s(&val_report)]), 2);
}

#[test]
fn eval_against_own_predictions_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2);
    let data = dir.path().join("data");
    let run_dir = dir.path().join("run");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data), "--num-samples", "20"]);
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run_dir)]);
    let ckpt = run_dir.join("last.ckpt");
    let model = checkpoint::load(&ckpt).unwrap().to_model().unwrap();

    // replace each future frame of the ground truth with the prediction
    let mut samples = Vec::new();
    for (_, mut sample) in load_split(&data, "train").unwrap() {
        let pred = model.predict(&sample, gmt_core::Ablation::None).unwrap();
        let split = gmt_core::data::split_history_future(&sample.trajectory, model.config.input_ratio).unwrap();
        for &i in &split.future {
            sample.trajectory.poses[i] = Pose9::from_slice(pred.row(i).as_slice().unwrap());
        }
        samples.push(sample);
    }
    let own = dir.path().join("own");
    write_dataset(&own, &[("test", &samples)]).unwrap();
    let report = dir.path().join("own.json");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&own), "--out", s(&report)]);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let m = &doc["metrics"];
    assert_eq!(m["ADE[m]"], 0.0);
    assert_eq!(m["FDE[m]"], 0.0);
    assert_eq!(m["FD[m]"], 0.0);
    assert!((m["AC"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn predict_with_goal_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 3);
    let data = dir.path().join("data");
    let run_dir = dir.path().join("run");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data), "--num-samples", "20"]);
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run_dir)]);
    let ckpt = run_dir.join("last.ckpt");
    let sample_path = data.join("test/000000.json");
    let sample = read_sample(&sample_path).unwrap();
    let predict = |goal: Option<String>, name: &str| -> Prediction {
        let out = dir.path().join(name);
        let mut args = vec!["predict", "--checkpoint", s(&ckpt), "--sample", s(&sample_path), "--out", s(&out)];
        let goal_arg;
        if let Some(g) = goal {
            goal_arg = g;
            args.extend(["--goal", goal_arg.as_str()]);
        }
        ok(&args);
        serde_json::from_slice(&fs::read(&out).unwrap()).unwrap()
    };
    let fmt = |p: [f64; 9]| p.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
    let plain = predict(None, "a.json");
    assert_eq!(plain.goal, sample.goal.to_array());
    assert_eq!(plain.trajectory.len(), sample.trajectory.len());
    let same = predict(Some(fmt(sample.goal.to_array())), "b.json");
    assert_eq!(same.trajectory, plain.trajectory);
    let mut moved = sample.goal.to_array();
    moved[0] -= 0.5;
    let shifted = predict(Some(fmt(moved)), "c.json");
    assert_ne!(shifted.trajectory, plain.trajectory);

    let out = dir.path().join("x.json");
    for bad in ["1,2,3", "0,0,0,0,0,0,0,0,0", "a,0,0,1,0,0,0,1,0"] {
        assert_eq!(
            code(&["predict", "--checkpoint", s(&ckpt), "--sample", s(&sample_path), "--out", s(&out), "--goal", bad]),
            2,
            "{bad}"
        );
    }
    // a broken sample document is a data error
    let mut doc: serde_json::Value = serde_json::from_slice(&fs::read(&sample_path).unwrap()).unwrap();
    doc["schema"] = "gmt-sample/0".into();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, serde_json::to_vec(&doc).unwrap()).unwrap();
    assert_eq!(code(&["predict", "--checkpoint", s(&ckpt), "--sample", s(&broken), "--out", s(&out)]), 3);
    write_sample(&broken, &sample).unwrap();
    assert_eq!(code(&["predict", "--checkpoint", s(&broken), "--sample", s(&broken), "--out", s(&out)]), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(code(&["train", "--data", s(&missing), "--out", s(&dir.path().join("r"))]), 3);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["train", "--data", "x", "--out", "y", "--ablation", "no_wheels"]), 2);
    let bad_threads = gmt()
        .env("GMT_NUM_THREADS", "zero")
        .args(["gen-data", "--out", s(&missing), "--num-samples", "20"])
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));

    // a learning rate this large overflows the weights within a few steps
    let cfg_path = tiny_config(dir.path(), 5);
    let text = fs::read_to_string(&cfg_path).unwrap().replace("learning_rate = 0.003", "learning_rate = 1e300");
    assert!(text.contains("1e300"));
    fs::write(&cfg_path, text).unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--config", s(&cfg_path), "--out", s(&data), "--num-samples", "20"]);
    assert_eq!(code(&["train", "--config", s(&cfg_path), "--data", s(&data), "--out", s(&dir.path().join("nan"))]), 4);
}
