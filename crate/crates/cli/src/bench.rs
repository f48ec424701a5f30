//! Grid benchmarks: one CSV row per cell with median-of-seeds metrics.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use rand::RngCore;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::config::{Adversary, Command, Corruption, ModelSpec, Settings};
use crate::error::{CliError, CliResult};
use crate::run::{execute, Outcome};

/// Worker count for the cell pool; unset or 0 means one per CPU.
pub const WORKERS_ENV: &str = "PPME_WORKERS";

#[derive(Clone, Debug, Deserialize, PartialEq)]
pub struct GridCell {
    /// Defaults to `precondition`.
    #[serde(default)]
    pub command: Option<String>,
    pub d: usize,
    pub m: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    /// Condition number: eigenvalues are geometric from 1 to `kappa`.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Number of nonzero eigenvalues.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub adversary: Option<String>,
    #[serde(default)]
    pub fraction: Option<f64>,
}

pub const METRICS: [&str; 6] = [
    "spectral_distance",
    "frobenius_error",
    "whitened_frobenius_error",
    "tv_upper_bound",
    "mean_error",
    "projector_error",
];

pub fn read_grid(path: &Path) -> CliResult<Vec<GridCell>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| CliError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })
        })
        .collect()
}

fn eigenvalues(d: usize, kappa: f64, rank: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            if i >= rank {
                0.0
            } else if rank == 1 {
                1.0
            } else {
                kappa.powf(i as f64 / (rank - 1) as f64)
            }
        })
        .collect()
}

fn cell_settings(base: &Settings, cell: &GridCell, seed: u64) -> CliResult<Settings> {
    let command = match &cell.command {
        Some(c) => Command::from_str(c, false).map_err(|_| CliError::Usage(format!("unknown command '{c}'")))?,
        None => Command::Precondition,
    };
    if command == Command::Bench {
        return Err(CliError::Usage("bench cells cannot run bench".into()));
    }
    let corruption = match (&cell.adversary, cell.fraction) {
        (None, None) => None,
        (a, f) => Some(Corruption {
            fraction: f.unwrap_or(0.05),
            adversary: match a {
                Some(a) => Adversary::from_str(a, false).map_err(|_| CliError::Usage(format!("unknown adversary '{a}'")))?,
                None => Adversary::MeanShift,
            },
            shift: base.corruption.map_or(10.0, |c| c.shift),
        }),
    };
    let s = Settings {
        command,
        seed,
        epsilon: cell.epsilon,
        delta: cell.delta,
        alpha: cell.alpha,
        allow_large_epsilon: true,
        input: None,
        model: ModelSpec {
            dim: cell.d,
            mean: vec![0.0; cell.d],
            covariance: None,
            eigenvalues: Some(eigenvalues(cell.d, cell.kappa.unwrap_or(1.0), cell.rank.unwrap_or(cell.d).min(cell.d))),
            rotate: base.model.rotate,
        },
        samples: Some(cell.m),
        corruption,
        output: None,
        grid: None,
        ..base.clone()
    };
    s.validate()?;
    Ok(s)
}

fn metric(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

/// Runs every cell `reps` times; cell `i` is seeded from substream `i` of the
/// master seed, independently of scheduling.
pub fn run_bench<W: Write>(base: &Settings, cells: &[GridCell], out: W) -> CliResult<()> {
    let workers = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let rows: Vec<CliResult<Vec<String>>> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| bench_cell(base, cell, i))
            .collect()
    });

    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "cell", "command", "d", "m", "epsilon", "delta", "alpha", "kappa", "rank", "adversary", "fraction", "reps",
        "fail_rate", "error_rate", "error_code",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(METRICS.iter().map(|m| format!("median_{m}")));
    w.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
    for row in rows {
        w.write_record(&row?).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn bench_cell(base: &Settings, cell: &GridCell, index: usize) -> CliResult<Vec<String>> {
    let mut seeds = ppme_core::rng::substream(base.seed, index as u64);
    let reps = base.reps;
    let (mut fails, mut errors, mut code) = (0u64, 0u64, String::new());
    let mut values: Vec<Vec<f64>> = vec![vec![]; METRICS.len()];
    let mut command = String::new();
    for _ in 0..reps {
        let s = cell_settings(base, cell, seeds.next_u64())?;
        command = s.command.name().to_string();
        let r = execute(&s);
        match r.outcome {
            Outcome::Fail => fails += 1,
            Outcome::Error => {
                errors += 1;
                if code.is_empty() {
                    code = r.error.map(|e| e.code).unwrap_or_default();
                }
            }
            Outcome::Success => {
                for (j, m) in METRICS.iter().enumerate() {
                    if let Some(x) = r.metrics.get(*m).and_then(metric) {
                        values[j].push(x);
                    }
                }
            }
        }
    }
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    let mut row = vec![
        index.to_string(),
        command,
        cell.d.to_string(),
        cell.m.to_string(),
        format!("{:?}", cell.epsilon),
        format!("{:?}", cell.delta),
        format!("{:?}", cell.alpha),
        opt(cell.kappa),
        cell.rank.map(|r| r.to_string()).unwrap_or_default(),
        cell.adversary.clone().unwrap_or_default(),
        opt(cell.fraction),
        reps.to_string(),
        format!("{:?}", fails as f64 / reps as f64),
        format!("{:?}", errors as f64 / reps as f64),
        code,
    ];
    row.extend(values.into_iter().map(|v| opt(median(v))));
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_spectrum() {
        assert_eq!(eigenvalues(3, 100.0, 3), vec![1.0, 10.0, 100.0]);
        assert_eq!(eigenvalues(3, 100.0, 1), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}
