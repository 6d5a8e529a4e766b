use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ep_core::experiment::oracle::{run_oracle, SUITES};
use ep_core::experiment::{run_experiment, summarize, ExperimentConfig};

#[derive(Parser)]
#[command(name = "surrogate-ep", version, about = "Surrogate-based posterior approximation experiments")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replicate of an experiment, resuming from its manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restore full budgets: five times the replicates, four times the chain lengths.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Summarize a finished run into report tables.
    Summarize {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a named oracle suite and print each check.
    Oracle {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        name: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            if cli.json {
                println!("{}", serde_json::json!({ "ok": false, "error": e.to_string() }));
            }
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether the command succeeded.
fn execute(cli: &Cli) -> ep_core::Result<bool> {
    match &cli.command {
        Command::Run { config, paper_scale } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if *paper_scale {
                cfg = cfg.paper_scale();
            }
            let report = run_experiment(&cfg)?;
            if cli.json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!(
                    "{} replicates completed ({} reused), {} failed; manifest at {}",
                    report.completed,
                    report.reused,
                    report.failed.len(),
                    report.manifest.display()
                );
            }
            Ok(true)
        }
        Command::Summarize { manifest } => {
            let report = summarize(manifest)?;
            if cli.json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!(
                    "{} groups from {} replicates, {} gaps",
                    report.groups.len(),
                    report.replicates.len(),
                    report.gaps.len()
                );
                for t in &report.tables {
                    println!("  {}", t.display());
                }
            }
            Ok(true)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(config)?;
            if cli.json {
                println!("{}", serde_json::json!({ "ok": true, "experiment": cfg.experiment }));
            } else {
                println!("{}: valid {:?} config", config.display(), cfg.experiment);
            }
            Ok(true)
        }
        Command::Oracle { name } => {
            let report = run_oracle(name)?;
            if cli.json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                for c in &report.checks {
                    let tag = if c.passed { "PASS" } else { "FAIL" };
                    println!("{tag} {:<40} residual {:.3e}  tolerance {:.3e}", c.name, c.residual, c.tolerance);
                }
                println!("{}: {:.1} s", report.suite, report.seconds);
            }
            Ok(report.passed())
        }
    }
}
