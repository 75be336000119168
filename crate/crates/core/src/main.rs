use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use airfl::harness::selftest::run_selftest;
use airfl::harness::{bound_report, compare_schemes, emit_metrics, run_and_summarize, ExperimentConfig, Scheme};

#[derive(Parser)]
#[command(name = "airfl", version, about = "Federated learning over multi-antenna analog links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scheme and write metrics.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several schemes on common random numbers.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list, e.g. jdu,sdu,rbf,ideal.
        #[arg(long, default_value = "jdu,sdu,rbf,ideal")]
        schemes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the convergence bound report as JSON.
    Bound {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the desk-scale preset config.
    Preset,
    /// Gradient, projection, packing and oracle checks.
    Selftest,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> airfl::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let res = run_and_summarize(&cfg)?;
            emit_metrics(&res.rows, &res.summary, &out)?;
            for s in &res.summary.schemes {
                println!(
                    "{}: final accuracy {:.4} [{:.4}, {:.4}]",
                    s.scheme.name(),
                    s.final_accuracy.mean,
                    s.final_accuracy.lo,
                    s.final_accuracy.hi
                );
            }
        }
        Command::Compare { config, schemes, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let list: Vec<Scheme> = schemes.split(',').map(Scheme::parse).collect::<airfl::Result<_>>()?;
            let res = compare_schemes(&cfg, &list)?;
            emit_metrics(&res.rows, &res.summary, &out)?;
            for s in &res.summary.schemes {
                println!(
                    "{}: final accuracy {:.4} [{:.4}, {:.4}], aborted rounds {}",
                    s.scheme.name(),
                    s.final_accuracy.mean,
                    s.final_accuracy.lo,
                    s.final_accuracy.hi,
                    s.aborted_rounds
                );
            }
        }
        Command::Bound { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = bound_report(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Command::Preset => {
            println!(
                "{}",
                serde_json::to_string_pretty(&ExperimentConfig::desk_preset()).expect("serializable")
            );
        }
        Command::Selftest => {
            let mut ok = true;
            for c in run_selftest() {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    }
    Ok(ExitCode::SUCCESS)
}
