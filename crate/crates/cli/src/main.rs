mod commands;
mod error;
mod pipeline;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oodx_core::OodError;

use commands::{
    cmd_calibrate, cmd_eval, cmd_fit, cmd_fuse, cmd_score, cmd_synth, cmd_validate, CalibrateArgs,
    EvalArgs, FitArgs, FuseArgs, ScoreArgs, SynthArgs, ValidateArgs,
};
use error::{CmdError, CmdResult};
use pipeline::{cmd_pipeline, PipelineArgs};

/// Out-of-distribution scoring: fit detectors, score, calibrate, fuse, evaluate.
#[derive(Debug, Parser)]
#[command(name = "oodx", version)]
struct Cli {
    /// Worker threads for per-sample scoring (0 = all cores)
    #[arg(long, global = true, env = "OODX_THREADS", default_value_t = 0)]
    threads: usize,
    /// Print errors on stderr as one JSON object
    #[arg(long, global = true)]
    json_errors: bool,
    /// Log info messages (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a Mahalanobis model, KNN index or LOF model on training features
    Fit(FitArgs),
    /// Score features, logits or token log-probs with one detector
    Score(ScoreArgs),
    /// Compute normalization stats from ID validation scores
    Calibrate(CalibrateArgs),
    /// Normalize and aggregate component scores (GNOME)
    Fuse(FuseArgs),
    /// AUROC and FAR95 of ID vs OOD scores
    Eval(EvalArgs),
    /// Run selected detectors end to end on a pair config
    Pipeline(PipelineArgs),
    /// Generate a synthetic benchmark pair
    Synth(SynthArgs),
    /// Check a pair config for unreadable or inconsistent files
    Validate(ValidateArgs),
}

fn run(cli: &Cli) -> CmdResult<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Score(a) => cmd_score(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => {
            println!("{}", cmd_eval(a)?);
            Ok(())
        }
        Command::Pipeline(a) => {
            for row in cmd_pipeline(a)? {
                println!("{row}");
            }
            Ok(())
        }
        Command::Synth(a) => {
            println!("{}", cmd_synth(a)?.display());
            Ok(())
        }
        Command::Validate(a) => {
            let issues = cmd_validate(a)?;
            for issue in &issues {
                println!(
                    "{}",
                    serde_json::to_string(issue).expect("issue serializes")
                );
            }
            if issues.is_empty() {
                Ok(())
            } else {
                Err(CmdError {
                    error: OodError::InvalidInput(format!("{} issues found", issues.len())),
                    path: Some(a.pair.clone()),
                })
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CmdError::usage(format!("thread pool: {e}")))
        .and_then(|pool| pool.install(|| run(&cli)));

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json_errors {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::FAILURE
        }
    }
}
