use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmt_cli::{exit, CliError, CliResult, EvalArgs, GenDataArgs, PredictArgs, TrainArgs};
use gmt_core::Ablation;

/// Goal-conditioned 6-DOF object trajectory prediction.
///
/// Exit codes: 0 success, 2 usage or configuration error, 3 data or schema
/// error, 4 numerical failure. GMT_NUM_THREADS caps worker threads.
#[derive(Parser)]
#[command(name = "gmt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset split 90/5/5 into train/val/test.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num_samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model; writes last.ckpt, best.ckpt, train.log and the config echo.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ablation: Option<Ablation>,
        /// Continue from OUT/last.ckpt.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on one split and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report path.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-frame positions for plotting.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Predict one sample, optionally with a replacement goal pose.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// "x,y,z,r1,r2,r3,r4,r5,r6"
        #[arg(long, allow_hyphen_values = true)]
        goal: Option<String>,
        #[arg(long)]
        ablation: Option<Ablation>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    gmt_cli::init_threads()?;
    match cli.command {
        Command::GenData { out, num_samples, seed, config } => {
            let s = gmt_cli::gen_data(&GenDataArgs { config, out, num_samples, seed })?;
            println!("wrote {} train, {} val, {} test samples", s.train, s.val, s.test);
        }
        Command::Train { data, out, config, seed, ablation, resume } => {
            let s = gmt_cli::train(&TrainArgs { config, data, out, seed, ablation, resume })?;
            match s.best_epoch {
                Some(e) => println!("{} epochs, {} steps, best ADE {:.4} m at epoch {e}", s.epochs, s.steps, s.best_ade),
                None => println!("{} epochs, {} steps", s.epochs, s.steps),
            }
        }
        Command::Eval { checkpoint, data, split, out, dump, ablation } => {
            let r = gmt_cli::eval(&EvalArgs { checkpoint, data, split, out, dump, ablation })?;
            println!(
                "ADE {:.4}  FDE {:.4}  FD {:.4}  AC {:.3}  CR {:.3}  ({} samples)",
                r.ade, r.fde, r.frechet, r.angular_consistency, r.collision_rate, r.n_samples
            );
        }
        Command::Predict { checkpoint, sample, out, goal, ablation } => {
            let p = gmt_cli::predict(&PredictArgs { checkpoint, sample, out, goal, ablation })?;
            println!("predicted {} frames", p.trajectory.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(inner) = &e {
                let mut src = std::error::Error::source(inner);
                while let Some(s) = src {
                    eprintln!("  caused by: {s}");
                    src = s.source();
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
