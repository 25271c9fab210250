//! Command-line front end: `run` one experiment or `sweep` a grid.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
//! Log verbosity comes from the HIERFEDLORA_LOG environment variable
//! (error, warn, info, debug, trace).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hierfedlora::cli;
use hierfedlora::error::Error;

#[derive(Parser)]
#[command(name = "hierfedlora", version, about = "Hierarchical federated adapter fine-tuning simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        /// Experiment config (key = value file).
        #[arg(long)]
        config: PathBuf,
        /// Override config values, e.g. --override mode=flat_baseline.
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
        /// Output directory for logs and the summary.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every combination of a sweep spec.
    Sweep {
        /// Sweep spec file (axes, seeds, base config).
        #[arg(long)]
        spec: PathBuf,
        /// Parallel worker count (1 = sequential).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("HIERFEDLORA_LOG")).init();
    let args = Args::parse();
    match args.command {
        Command::Run {
            config,
            overrides,
            out,
        } => match cli::run(&config, &overrides, &out) {
            Ok(outcome) => {
                let s = &outcome.summary;
                println!(
                    "ok: mode={} rounds={} final_accuracy={:.4} sim_time={:.2}s traffic={} out={}",
                    s.mode,
                    s.rounds,
                    s.final_accuracy,
                    s.simulated_time,
                    s.traffic_payload_units,
                    outcome.out_dir.display()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
        Command::Sweep { spec, jobs } => match cli::sweep(&spec, jobs) {
            Ok(0) => {
                println!("sweep complete, no failures");
                ExitCode::SUCCESS
            }
            Ok(failures) => {
                eprintln!("sweep finished with {failures} failed combination(s)");
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
    }
}
