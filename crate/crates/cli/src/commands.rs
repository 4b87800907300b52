//! The four subcommands. Every artifact is a pure function of the inputs and
//! seed: no timestamps, no absolute paths.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use gmt_core::checkpoint::{self, Checkpoint};
use gmt_core::data::split_history_future;
use gmt_core::datagen::generate_sample;
use gmt_core::dataset::{self, read_sample, write_dataset};
use gmt_core::metrics::{MetricReport, SampleMetrics};
use gmt_core::training::{evaluate_model, split_indices};
use gmt_core::{fit, Ablation, EpochLog, GmtError, GmtModel, Pose9, PreparedSample, TrainState, TrajectorySample};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, CliResult};

pub const CONFIG_ECHO: &str = "config.toml";
pub const RUN_INFO: &str = "run.json";
pub const TRAIN_LOG: &str = "train.log";
pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";

const REPORT_SCHEMA: &str = "gmt-report/1";
const DUMP_SCHEMA: &str = "gmt-dump/1";
const PREDICTION_SCHEMA: &str = "gmt-prediction/1";

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| GmtError::io(path, e).into())
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| GmtError::io(path, e).into())
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("plain data always serializes");
    bytes.push(b'\n');
    bytes
}

#[derive(Serialize)]
struct RunInfo<'a> {
    tool: &'static str,
    cli_version: &'static str,
    core_version: &'static str,
    command: &'a str,
    seed: u64,
}

/// Config echo plus tool versions, so a run directory describes itself.
fn write_run_header(dir: &Path, command: &str, cfg: &RunConfig) -> CliResult<()> {
    write_file(&dir.join(CONFIG_ECHO), cfg.to_toml().as_bytes())?;
    let info = RunInfo {
        tool: "gmt",
        cli_version: env!("CARGO_PKG_VERSION"),
        core_version: gmt_core::VERSION,
        command,
        seed: cfg.seed,
    };
    write_file(&dir.join(RUN_INFO), &json_bytes(&info))
}

#[derive(Debug, Clone)]
pub struct GenDataArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub num_samples: usize,
    pub seed: Option<u64>,
}

/// Sizes of the written splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<SplitSizes> {
    if args.num_samples == 0 {
        return Err(CliError::usage("--num-samples must be at least 1"));
    }
    let cfg = RunConfig::resolve(
        args.config.as_deref(),
        Overrides {
            seed: args.seed,
            ablation: None,
        },
    )?;
    let (train_ix, val_ix, test_ix) = split_indices(args.num_samples, cfg.seed)?;
    let samples: Vec<TrajectorySample> = (0..args.num_samples as u64)
        .into_par_iter()
        .map(|i| generate_sample(cfg.seed, i, &cfg.gen))
        .collect::<Result<_, _>>()?;
    let pick = |ix: &[usize]| -> Vec<TrajectorySample> { ix.iter().map(|&i| samples[i].clone()).collect() };
    let (train, val, test) = (pick(&train_ix), pick(&val_ix), pick(&test_ix));
    create_dir(&args.out)?;
    write_dataset(&args.out, &[("train", &train), ("val", &val), ("test", &test)])?;
    write_run_header(&args.out, "gen-data", &cfg)?;
    Ok(SplitSizes {
        train: train.len(),
        val: val.len(),
        test: test.len(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub ablation: Option<Ablation>,
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: u64,
    pub best_epoch: Option<usize>,
    pub best_ade: f64,
}

fn load_prepared(model: &GmtModel, data: &Path, split: &str) -> CliResult<Vec<PreparedSample>> {
    let samples = dataset::load_split(data, split)?;
    Ok(samples
        .par_iter()
        .map(|(path, s)| model.prepare(s).map_err(|e| GmtError::schema(path, e.to_string())))
        .collect::<Result<_, _>>()?)
}

/// Keep only log records of epochs before `epoch`, dropping any written
/// after the checkpoint an interrupted run stopped at.
fn truncate_log(path: &Path, epoch: usize) -> CliResult<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(GmtError::io(path, e).into()),
    };
    let mut kept = String::new();
    // an unterminated last line is a torn write
    for line in text.split_inclusive('\n').filter(|l| l.ends_with('\n')) {
        let line = line.trim_end();
        let rec: EpochLog = serde_json::from_str(line).map_err(|e| GmtError::schema(path, e.to_string()))?;
        if rec.epoch < epoch {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write_file(path, kept.as_bytes())
}

pub fn train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let cfg = RunConfig::resolve(
        args.config.as_deref(),
        Overrides {
            seed: args.seed,
            ablation: args.ablation,
        },
    )?;
    let last = args.out.join(LAST_CKPT);
    let log_path = args.out.join(TRAIN_LOG);
    let (mut model, mut state) = if args.resume {
        if !last.exists() {
            return Err(CliError::usage(format!("--resume: no {} to resume from", last.display())));
        }
        let ck = checkpoint::load(&last)?;
        if ck.model != cfg.model || ck.train.as_ref() != Some(&cfg.train) {
            return Err(GmtError::ConfigMismatch(format!(
                "{} was written with a different configuration",
                last.display()
            ))
            .into());
        }
        let state = ck
            .state
            .clone()
            .ok_or_else(|| GmtError::schema(&last, "checkpoint has no training state"))?;
        truncate_log(&log_path, state.epoch)?;
        (ck.to_model()?, state)
    } else {
        if last.exists() {
            return Err(CliError::usage(format!(
                "{} already holds a run; pass --resume or choose another --out",
                args.out.display()
            )));
        }
        let model = GmtModel::new(cfg.model.clone())?;
        let state = TrainState::new(&model.params);
        (model, state)
    };
    create_dir(&args.out)?;
    write_run_header(&args.out, "train", &cfg)?;
    if !args.resume {
        write_file(&log_path, b"")?;
    }

    let train_set = load_prepared(&model, &args.data, "train")?;
    let val_set = load_prepared(&model, &args.data, "val")?;
    let best = args.out.join(BEST_CKPT);
    fit(&mut model, &train_set, &val_set, &cfg.train, &mut state, |m, s, logs| {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| GmtError::io(&log_path, e))?;
        for rec in logs {
            let line = serde_json::to_string(rec).expect("log records serialize");
            writeln!(f, "{line}").map_err(|e| GmtError::io(&log_path, e))?;
        }
        if s.best_epoch == Some(s.epoch - 1) {
            checkpoint::save(&best, m, Some(&cfg.train), None)?;
        }
        checkpoint::save(&last, m, Some(&cfg.train), Some(s))?;
        Ok(ControlFlow::Continue(()))
    })?;
    Ok(TrainSummary {
        epochs: state.epoch,
        steps: state.optimizer.step,
        best_epoch: state.best_epoch,
        best_ade: state.best_ade,
    })
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: String,
    pub out: PathBuf,
    pub dump: Option<PathBuf>,
    pub ablation: Option<Ablation>,
}

#[derive(Serialize)]
struct SampleRow {
    sample: String,
    #[serde(flatten)]
    metrics: SampleMetrics,
}

#[derive(Serialize)]
struct EvalReport {
    schema: &'static str,
    split: String,
    ablation: Ablation,
    metrics: MetricReport,
    samples: Vec<SampleRow>,
}

#[derive(Serialize)]
struct DumpEntry {
    sample: String,
    history: Vec<[f64; 3]>,
    ground_truth: Vec<[f64; 3]>,
    prediction: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct Dump {
    schema: &'static str,
    samples: Vec<DumpEntry>,
}

/// Ablation from the flag, else the one the checkpoint was trained with.
fn pick_ablation(flag: Option<Ablation>, ck: &Checkpoint) -> Ablation {
    flag.or(ck.train.as_ref().map(|t| t.ablation)).unwrap_or_default()
}

pub fn eval(args: &EvalArgs) -> CliResult<MetricReport> {
    let ck = checkpoint::load(&args.checkpoint)?;
    let model = ck.to_model()?;
    let ablation = pick_ablation(args.ablation, &ck);
    let index = dataset::read_index(&args.data)?;
    let names = index.split(&args.split)?.to_vec();
    let samples: Vec<TrajectorySample> = names
        .iter()
        .map(|rel| read_sample(&args.data.join(rel)))
        .collect::<Result<_, _>>()?;
    if samples.is_empty() {
        return Err(CliError::usage(format!("split {:?} is empty", args.split)));
    }
    let res = evaluate_model(&model, &samples, ablation)?;
    let report = EvalReport {
        schema: REPORT_SCHEMA,
        split: args.split.clone(),
        ablation,
        metrics: res.report.clone(),
        samples: names
            .iter()
            .zip(&res.per_sample)
            .map(|(n, m)| SampleRow {
                sample: n.clone(),
                metrics: m.clone(),
            })
            .collect(),
    };
    write_file(&args.out, &json_bytes(&report))?;

    if let Some(dump_path) = &args.dump {
        let xyz = |row: &[f64]| [row[0], row[1], row[2]];
        let mut entries = Vec::with_capacity(samples.len());
        for ((name, s), pred) in names.iter().zip(&samples).zip(&res.predictions) {
            let split = split_history_future(&s.trajectory, model.config.input_ratio)?;
            let gt = |i: usize| {
                let p = s.trajectory.poses[i].position;
                [p.x, p.y, p.z]
            };
            entries.push(DumpEntry {
                sample: name.clone(),
                history: split.history.iter().map(|&i| gt(i)).collect(),
                ground_truth: split.history.iter().chain(&split.future).map(|&i| gt(i)).collect(),
                prediction: split
                    .future
                    .iter()
                    .map(|&i| xyz(pred.row(i).as_slice().expect("row-major")))
                    .collect(),
            });
        }
        let dump = Dump {
            schema: DUMP_SCHEMA,
            samples: entries,
        };
        write_file(dump_path, &json_bytes(&dump))?;
    }
    Ok(res.report)
}

#[derive(Debug, Clone)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub sample: PathBuf,
    pub out: PathBuf,
    pub goal: Option<String>,
    pub ablation: Option<Ablation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Prediction {
    pub schema: String,
    pub ablation: Ablation,
    pub goal: [f64; 9],
    pub mask: Vec<bool>,
    pub trajectory: Vec<[f64; 9]>,
}

/// Parse `x,y,z,r1,...,r6` into a pose with a valid 6D rotation.
pub fn parse_goal(text: &str) -> CliResult<Pose9> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::usage(format!("--goal: {e}")))?;
    if vals.len() != 9 || vals.iter().any(|v| !v.is_finite()) {
        return Err(CliError::usage(format!(
            "--goal needs 9 finite comma-separated numbers, got {}",
            vals.len()
        )));
    }
    let pose = Pose9::from_slice(&vals);
    pose.rotation
        .to_matrix()
        .map_err(|e| CliError::usage(format!("--goal rotation: {e}")))?;
    Ok(pose)
}

pub fn predict(args: &PredictArgs) -> CliResult<Prediction> {
    let goal = args.goal.as_deref().map(parse_goal).transpose()?;
    let ck = checkpoint::load(&args.checkpoint)?;
    let model = ck.to_model()?;
    let ablation = pick_ablation(args.ablation, &ck);
    let mut sample = read_sample(&args.sample)?;
    if let Some(g) = goal {
        sample.goal = g;
    }
    let pred = model.predict(&sample, ablation)?;
    let out = Prediction {
        schema: PREDICTION_SCHEMA.to_string(),
        ablation,
        goal: sample.goal.to_array(),
        mask: sample.trajectory.mask.clone(),
        trajectory: pred
            .outer_iter()
            .map(|r| std::array::from_fn(|j| r[j]))
            .collect(),
    };
    write_file(&args.out, &json_bytes(&out))?;
    Ok(out)
}
