//! `cinempc`: run, validate and template scenario files.
//!
//! Exit status: 0 on success, 1 on usage, schema or I/O errors, 2 when a run
//! aborts on a numeric failure (the partial trace is still written).

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cinempc::scenario::{self, default_doc, parse_doc, render_plots, write_trace, Scenario, Trace};

#[derive(Parser)]
#[command(
    name = "cinempc",
    version,
    about = "Closed-loop simulator for an MPC-driven cinematographic drone camera"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trace (and optionally plots).
    Run {
        scenario: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Override the noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the control period, seconds.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the horizon length.
        #[arg(long)]
        horizon: Option<usize>,
        /// Also write cost.svg, dof.svg and intrinsics.svg.
        #[arg(long)]
        plots: bool,
        /// Only report errors.
        #[arg(long)]
        quiet: bool,
    },
    /// Check a scenario file and print a summary.
    Validate { scenario: PathBuf },
    /// Print a complete scenario with every default filled in.
    DumpDefaults,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn load(path: &Path, overrides: impl FnOnce(&mut scenario::ScenarioDoc)) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut doc = parse_doc(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    overrides(&mut doc);
    Scenario::from_doc(doc).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn save(trace: &Trace, scenario: &Scenario, out: &Path, plots: bool) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| usage(format!("{}: {e}", out.display())))?;
    let csv = out.join("trace.csv");
    let file = File::create(&csv).map_err(|e| usage(format!("{}: {e}", csv.display())))?;
    write_trace(trace, BufWriter::new(file)).map_err(|e| usage(format!("{}: {e}", csv.display())))?;
    std::fs::write(out.join("scenario.json"), scenario.dump() + "\n").map_err(usage)?;
    if plots && !trace.records.is_empty() {
        render_plots(trace, out).map_err(|e| usage(format!("plots: {e}")))?;
    }
    Ok(())
}

fn summarize(scenario: &Scenario, trace: &Trace) {
    println!(
        "{}: {} records over {:.1} s, {} sequences",
        scenario.name,
        trace.records.len(),
        trace.records.last().map_or(0.0, |r| r.time),
        scenario.sequences.len()
    );
    for (i, seq) in scenario.sequences.iter().enumerate() {
        let records: Vec<_> = trace.records.iter().filter(|r| r.sequence == i).collect();
        let (Some(first), Some(last)) = (records.first(), records.last()) else {
            continue;
        };
        let peak = records.iter().map(|r| r.cost.total).fold(0.0, f64::max);
        println!(
            "  [{i}] t = {:6.1} s  {:<40} cost peak {:.3e}, final {:.3e}, aperture {:.2}",
            first.time, seq.label, peak, last.cost.total, last.camera.aperture
        );
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            scenario,
            out,
            seed,
            dt,
            horizon,
            plots,
            quiet,
        } => {
            let scenario = load(&scenario, |doc| {
                if let Some(s) = seed {
                    doc.seed = s;
                }
                if let Some(d) = dt {
                    doc.dt = d;
                }
                if let Some(n) = horizon {
                    doc.solver.horizon = n;
                }
            })?;
            match scenario::run(&scenario) {
                Ok(trace) => {
                    save(&trace, &scenario, &out, plots)?;
                    if !quiet {
                        summarize(&scenario, &trace);
                        println!("trace written to {}", out.join("trace.csv").display());
                    }
                    Ok(())
                }
                Err(e) => {
                    save(&e.partial, &scenario, &out, plots)?;
                    Err(Failure::Numeric(format!(
                        "{e}; {} records written to {}",
                        e.partial.records.len(),
                        out.join("trace.csv").display()
                    )))
                }
            }
        }
        Command::Validate { scenario } => {
            let s = load(&scenario, |_| {})?;
            println!(
                "{}: ok ({} targets, {} sequences, {} steps of {} s)",
                scenario.display(),
                s.targets.len(),
                s.sequences.len(),
                s.steps(),
                s.dt
            );
            Ok(())
        }
        Command::DumpDefaults => {
            let s = Scenario::from_doc(default_doc()).map_err(usage)?;
            println!("{}", s.dump());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let quiet = matches!(cli.command, Command::Run { quiet: true, .. });
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "error" } else { "warn" }))
        .format_timestamp(None)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(2)
        }
    }
}
