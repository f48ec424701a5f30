//! Experiment runner for the private Gaussian estimators: CSV ingestion,
//! configuration, JSON reports and grid benchmarks.

pub mod audits;
pub mod bench;
pub mod config;
pub mod error;
pub mod ingest;
pub mod run;
pub mod synth;

pub use config::{Cli, Command, Settings};
pub use error::{CliError, CliResult};
pub use run::{execute, Outcome, Report};

use std::io::Write;
use std::path::Path;

/// Serializes a report; with `stable` the wall time is zeroed so identical
/// runs produce identical bytes.
pub fn report_json(report: &Report, stable: bool) -> String {
    let mut r = report.clone();
    if stable {
        r.wall_time_seconds = 0.0;
    }
    serde_json::to_string_pretty(&r).expect("reports serialize") + "\n"
}

pub fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

/// Runs the parsed command line and returns the process exit code.
pub fn main_with(cli: &Cli) -> i32 {
    let settings = match Settings::resolve(cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            return 1;
        }
    };
    if settings.command == Command::Bench {
        return match run_bench_command(&settings) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error [{}]: {e}", e.code());
                1
            }
        };
    }
    let report = execute(&settings);
    if let Some(e) = &report.error {
        eprintln!("error [{}]: {}", e.code, e.message);
    }
    if let Err(e) = write_output(settings.output.as_deref(), &report_json(&report, false)) {
        eprintln!("error [{}]: {e}", e.code());
        return 1;
    }
    report.outcome.exit_code()
}

fn run_bench_command(settings: &Settings) -> CliResult<()> {
    let grid = settings
        .grid
        .as_deref()
        .ok_or_else(|| CliError::Usage("bench needs --grid".into()))?;
    let cells = bench::read_grid(grid)?;
    let mut buf = Vec::new();
    bench::run_bench(settings, &cells, &mut buf)?;
    write_output(settings.output.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))
}
