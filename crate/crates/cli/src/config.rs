//! Command-line flags, the `key = value` config file, and the resolved
//! effective configuration recorded in every report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use ppme_core::constants::Constants;
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    LearnGaussian,
    LearnGaussianRobust,
    Precondition,
    Refine,
    Subspace,
    Mean,
    Audit,
    Calibrate,
    Bench,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::LearnGaussian => "learn-gaussian",
            Command::LearnGaussianRobust => "learn-gaussian-robust",
            Command::Precondition => "precondition",
            Command::Refine => "refine",
            Command::Subspace => "subspace",
            Command::Mean => "mean",
            Command::Audit => "audit",
            Command::Calibrate => "calibrate",
            Command::Bench => "bench",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adversary {
    /// Corrupted records are drawn from the model shifted along its top axis.
    MeanShift,
    /// Corrupted records all sit at one far point.
    PointMass,
    /// Corrupted records are pairwise far apart, so chunk estimates disagree.
    Scattered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditMechanism {
    GaussianMask,
    CovarianceMask,
    CovarianceConcentration,
    Tlap,
    PpmeFail,
}

#[derive(Parser, Debug, Clone, Default)]
#[command(name = "ppme", version, about = "Private Gaussian estimation experiments")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Permit ε > 1 and α > 1 for desk-scale runs.
    #[arg(long)]
    pub allow_large_epsilon: bool,
    /// CSV dataset; without it a synthetic sample is drawn.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Comma-separated mean of the synthetic model.
    #[arg(long)]
    pub mean: Option<String>,
    /// Row-major covariance entries of the synthetic model.
    #[arg(long)]
    pub covariance: Option<String>,
    /// Covariance eigenvalues of the synthetic model (zeros allowed).
    #[arg(long)]
    pub eigenvalues: Option<String>,
    /// Rotate the eigenvalue model by a seeded random orthogonal matrix.
    #[arg(long)]
    pub rotate: bool,
    /// Synthetic sample size; defaults to the command's requirement.
    #[arg(long)]
    pub samples: Option<u64>,
    /// Refuse to draw more synthetic records than this.
    #[arg(long)]
    pub max_records: Option<u64>,
    #[arg(long)]
    pub corruption_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub adversary: Option<Adversary>,
    /// Adversary displacement in units of the largest standard deviation.
    #[arg(long)]
    pub shift: Option<f64>,
    /// Report (or bench CSV) destination; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Constants file; defaults to the built-in calibrated values.
    #[arg(long)]
    pub constants: Option<PathBuf>,
    /// Constant override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_enum)]
    pub mechanism: Option<AuditMechanism>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Where `calibrate` writes the constants file.
    #[arg(long)]
    pub constants_out: Option<PathBuf>,
    /// Bench grid CSV with header `d,m,epsilon,delta,alpha` and optional
    /// `command,kappa,rank,adversary,fraction` columns.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Seeds per bench cell.
    #[arg(long)]
    pub reps: Option<u64>,
}

/// The full effective configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub command: Command,
    pub seed: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub allow_large_epsilon: bool,
    pub input: Option<PathBuf>,
    pub model: ModelSpec,
    pub samples: Option<u64>,
    pub max_records: u64,
    pub corruption: Option<Corruption>,
    pub mechanism: Option<AuditMechanism>,
    pub trials: u64,
    pub output: Option<PathBuf>,
    pub constants_out: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub reps: u64,
    pub constants: Constants,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub covariance: Option<Vec<f64>>,
    pub eigenvalues: Option<Vec<f64>>,
    pub rotate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Corruption {
    pub fraction: f64,
    pub adversary: Adversary,
    pub shift: f64,
}

pub const DEFAULT_MAX_RECORDS: u64 = 20_000_000;

const FILE_KEYS: [&str; 25] = [
    "command",
    "seed",
    "epsilon",
    "delta",
    "alpha",
    "beta",
    "allow-large-epsilon",
    "input",
    "dim",
    "mean",
    "covariance",
    "eigenvalues",
    "rotate",
    "samples",
    "max-records",
    "corruption-fraction",
    "adversary",
    "shift",
    "output",
    "constants",
    "mechanism",
    "trials",
    "constants-out",
    "grid",
    "reps",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> CliResult<Vec<(u64, String, String)>> {
    let mut out = vec![];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Parse {
            line: i as u64 + 1,
            message: "expected key = value".into(),
        })?;
        out.push((i as u64 + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

struct FileValues {
    values: BTreeMap<String, (u64, String)>,
}

impl FileValues {
    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| CliError::Parse {
                line: *line,
                message: format!("bad value '{v}' for {key}"),
            }),
        }
    }

    fn get_enum<T: ValueEnum>(&self, key: &str) -> CliResult<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => T::from_str(v, false).map(Some).map_err(|_| CliError::Parse {
                line: *line,
                message: format!("bad value '{v}' for {key}"),
            }),
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn parse_list(name: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("--{name}: '{}' is not a finite number", x.trim())))
        })
        .collect()
}

impl Settings {
    /// Flags override the config file, which overrides defaults. Constant
    /// precedence: built-in, `constants` file, config-file constant keys,
    /// `--set` flags.
    pub fn resolve(cli: &Cli) -> CliResult<Settings> {
        let mut file = FileValues { values: BTreeMap::new() };
        let mut const_lines = vec![];
        if let Some(path) = &cli.config {
            for (line, k, v) in parse_key_values(&read_text(path)?)? {
                if Constants::keys().contains(&k.as_str()) {
                    const_lines.push((line, k, v));
                } else if FILE_KEYS.contains(&k.as_str()) {
                    file.values.insert(k, (line, v));
                } else {
                    return Err(CliError::Parse {
                        line,
                        message: format!("unknown key '{k}'"),
                    });
                }
            }
        }

        let command = match cli.command {
            Some(c) => c,
            None => file
                .get_enum("command")?
                .ok_or_else(|| CliError::Usage("a command is required".into()))?,
        };
        let seed = cli
            .seed
            .or(file.get("seed")?)
            .ok_or_else(|| CliError::Usage("--seed is mandatory".into()))?;

        let mut constants = match cli.constants.clone().or(file.get("constants")?) {
            Some(p) => Constants::parse(&read_text(&p)?)?,
            None => Constants::default(),
        };
        for (line, k, v) in const_lines {
            let value: f64 = v.parse().map_err(|_| CliError::Parse {
                line,
                message: format!("bad value '{v}' for {k}"),
            })?;
            constants.set(&k, value)?;
        }
        for kv in &cli.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--set {k}: '{v}' is not a number")))?;
            constants.set(k.trim(), value)?;
        }

        let mean = match cli.mean.clone().or(file.get("mean")?) {
            Some(s) => Some(parse_list("mean", &s)?),
            None => None,
        };
        let covariance = match cli.covariance.clone().or(file.get("covariance")?) {
            Some(s) => Some(parse_list("covariance", &s)?),
            None => None,
        };
        let eigenvalues = match cli.eigenvalues.clone().or(file.get("eigenvalues")?) {
            Some(s) => Some(parse_list("eigenvalues", &s)?),
            None => None,
        };
        let dim = cli
            .dim
            .or(file.get("dim")?)
            .or(mean.as_ref().map(Vec::len))
            .or(eigenvalues.as_ref().map(Vec::len))
            .or(covariance.as_ref().map(|c| (c.len() as f64).sqrt().round() as usize))
            .unwrap_or(3);
        let model = ModelSpec {
            dim,
            mean: mean.unwrap_or_else(|| vec![0.0; dim]),
            covariance,
            eigenvalues,
            rotate: cli.rotate || file.get("rotate")?.unwrap_or(false),
        };

        let fraction = cli.corruption_fraction.or(file.get("corruption-fraction")?);
        let adversary = match cli.adversary {
            Some(a) => Some(a),
            None => file.get_enum("adversary")?,
        };
        let shift = cli.shift.or(file.get("shift")?).unwrap_or(10.0);
        let corruption = match (fraction, adversary) {
            (None, None) => None,
            (f, a) => Some(Corruption {
                fraction: f.unwrap_or(0.05),
                adversary: a.unwrap_or(Adversary::MeanShift),
                shift,
            }),
        };
        let mechanism = match cli.mechanism {
            Some(m) => Some(m),
            None => file.get_enum("mechanism")?,
        };

        let settings = Settings {
            command,
            seed,
            epsilon: cli.epsilon.or(file.get("epsilon")?).unwrap_or(1.0),
            delta: cli.delta.or(file.get("delta")?).unwrap_or(1e-3),
            alpha: cli.alpha.or(file.get("alpha")?).unwrap_or(0.25),
            beta: cli.beta.or(file.get("beta")?).unwrap_or(0.1),
            allow_large_epsilon: cli.allow_large_epsilon || file.get("allow-large-epsilon")?.unwrap_or(false),
            input: cli.input.clone().or(file.get("input")?),
            model,
            samples: cli.samples.or(file.get("samples")?),
            max_records: cli.max_records.or(file.get("max-records")?).unwrap_or(DEFAULT_MAX_RECORDS),
            corruption,
            mechanism,
            trials: cli.trials.or(file.get("trials")?).unwrap_or(10_000),
            output: cli.output.clone().or(file.get("output")?),
            constants_out: cli.constants_out.clone().or(file.get("constants-out")?),
            grid: cli.grid.clone().or(file.get("grid")?),
            reps: cli.reps.or(file.get("reps")?).unwrap_or(5),
            constants,
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> CliResult<()> {
        let limit = if self.allow_large_epsilon { f64::INFINITY } else { 1.0 };
        if !(self.epsilon > 0.0 && self.epsilon <= limit) {
            return Err(CliError::Usage(format!(
                "epsilon must lie in (0, 1] (pass --allow-large-epsilon for desk-scale runs), got {}",
                self.epsilon
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= limit) {
            return Err(CliError::Usage(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        for (name, v) in [("delta", self.delta), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CliError::Usage(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        let d = self.model.dim;
        if d == 0 {
            return Err(CliError::Usage("dim must be positive".into()));
        }
        if self.model.mean.len() != d {
            return Err(CliError::Usage(format!("mean has {} entries, dim is {d}", self.model.mean.len())));
        }
        if let Some(c) = &self.model.covariance {
            if c.len() != d * d {
                return Err(CliError::Usage(format!("covariance needs {} entries, got {}", d * d, c.len())));
            }
            if self.model.eigenvalues.is_some() {
                return Err(CliError::Usage("give either covariance or eigenvalues, not both".into()));
            }
        }
        if let Some(e) = &self.model.eigenvalues {
            if e.len() != d || e.iter().any(|&v| v < 0.0) {
                return Err(CliError::Usage(format!("eigenvalues must be {d} non-negative numbers")));
            }
        }
        if let Some(c) = &self.corruption {
            if !(0.0..=1.0).contains(&c.fraction) {
                return Err(CliError::Usage(format!("corruption fraction must lie in [0, 1], got {}", c.fraction)));
            }
        }
        if self.trials == 0 || self.reps == 0 {
            return Err(CliError::Usage("trials and reps must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("ppme").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn seed_is_mandatory() {
        let err = Settings::resolve(&cli(&["subspace"])).unwrap_err();
        assert_eq!(err.code(), "UsageError");
    }

    #[test]
    fn large_epsilon_needs_flag() {
        assert!(Settings::resolve(&cli(&["mean", "--seed", "1", "--epsilon", "2"])).is_err());
        let s = Settings::resolve(&cli(&["mean", "--seed", "1", "--epsilon", "2", "--allow-large-epsilon"])).unwrap();
        assert_eq!(s.epsilon, 2.0);
    }

    #[test]
    fn flags_override_config_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# experiment\nseed = 7\nepsilon = 0.5\ndelta = 0.01\nc1 = 123\nmean = 1,2").unwrap();
        let path = f.path().to_str().unwrap();
        let s = Settings::resolve(&cli(&["mean", "--config", path, "--epsilon", "0.25", "--set", "c2=9"])).unwrap();
        assert_eq!((s.seed, s.epsilon, s.delta), (7, 0.25, 0.01));
        assert_eq!((s.constants.c1, s.constants.c2), (123.0, 9.0));
        assert_eq!(s.model.dim, 2);
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "seed = 1\n\nbogus = 3").unwrap();
        match Settings::resolve(&cli(&["mean", "--config", f.path().to_str().unwrap()])) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_model_is_rejected() {
        assert!(Settings::resolve(&cli(&["mean", "--seed", "1", "--dim", "3", "--mean", "1,2"])).is_err());
        assert!(Settings::resolve(&cli(&["mean", "--seed", "1", "--covariance", "1,0,0"])).is_err());
    }
}
