use clap::{Parser, Subcommand};
use hdwalk::cli::config::{validate_config, ConfigIssue};
use hdwalk::cli::presets::PRESETS;
use hdwalk::cli::run::{render_report, results_document, run_experiment, write_outputs, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

/// Random walks on the space of lattices and fractal Diophantine experiments.
#[derive(Parser)]
#[command(name = "hdwalk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print its normalized form.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an experiment and write results.json plus CSV series.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// List built-in presets.
    Presets,
    /// Summarize an output directory as a plain-text table.
    Report {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn print_issues(issues: &[ConfigIssue]) {
    for i in issues {
        eprintln!("{}: {}", i.field, i.message);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match validate_config(&config) {
            Ok(cfg) => {
                println!("{}", serde_json::to_string_pretty(&cfg.to_json()).expect("json"));
                ExitCode::SUCCESS
            }
            Err(issues) => {
                print_issues(&issues);
                ExitCode::from(1)
            }
        },
        Command::Run { config, seed, out_dir, replicas } => {
            let cfg = match validate_config(&config) {
                Ok(c) => c,
                Err(issues) => {
                    print_issues(&issues);
                    return ExitCode::from(1);
                }
            };
            let ov = Overrides { seed, replicas };
            match run_experiment(&cfg, ov) {
                Ok(outcome) => {
                    let doc = results_document(&cfg, ov, &outcome);
                    if let Err(e) = write_outputs(&out_dir, &doc, &outcome.series) {
                        eprintln!("io: {e}");
                        return ExitCode::from(2);
                    }
                    for c in &outcome.checks {
                        println!("[{}] {}", if c.passed { "pass" } else { "FAIL" }, c.name);
                    }
                    if outcome.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("{e}");
                    let _ = write_outputs(&out_dir, &e.record(), &[]);
                    ExitCode::from(2)
                }
            }
        }
        Command::Presets => {
            for p in PRESETS {
                println!("{:<24} {}", p.name, p.description);
            }
            ExitCode::SUCCESS
        }
        Command::Report { out_dir } => match render_report(&out_dir) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("io: {e}");
                ExitCode::from(2)
            }
        },
    }
}
