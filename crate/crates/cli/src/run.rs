//! Runs one experiment and assembles its report.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use ppme_core::audit::{calibrate_all, CalibrationSettings};
use ppme_core::estimators::pipeline::{
    learn_gaussian_robust_with_plan, learn_gaussian_with_plan, plan_learn_gaussian, plan_learn_gaussian_robust,
    EstimationReport, ModelRecord,
};
use ppme_core::estimators::private::{
    plan_mean, plan_precondition, plan_refine, plan_subspace, precondition_with_plan, refine_with_plan, run_stage,
    StagePlan, StageReport,
};
use ppme_core::estimators::nonprivate::{empirical_mean, span_projection};
use ppme_core::gauss::{psd_factor, tv_upper_bound, GaussianModel, PsdMatrix, SampleSet};
use ppme_core::ppme::PrivacyBudget;
use ppme_core::rng::substream;
use ppme_core::semimetric::{spectral_cov_dist, CandidatePoint};
use ppme_core::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::audits::{run_audit, AuditParams};
use crate::config::{Command, Settings};
use crate::error::{CliError, CliResult};
use crate::ingest::ingest_csv;
use crate::synth::{build_model, corrupt, draw};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Fail,
    Error,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Fail => 2,
            Outcome::Error => 1,
        }
    }
}

/// One PPME invocation: its `(ε, δ)` setting and the `(2ε, 4e^ε δ)` it costs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Invocation {
    pub stage: String,
    pub setting: PrivacyBudget,
    pub total: PrivacyBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetRecord {
    /// How `--epsilon/--delta` were read: the total for pipelines, the
    /// per-invocation setting for single stages.
    pub flags_are: &'static str,
    pub flags: PrivacyBudget,
    pub invocations: Vec<Invocation>,
    /// Basic composition of the invocations that ran.
    pub spent: PrivacyBudget,
}

impl BudgetRecord {
    fn new(flags_are: &'static str, flags: PrivacyBudget) -> Self {
        BudgetRecord {
            flags_are,
            flags,
            invocations: vec![],
            spent: PrivacyBudget::zero(),
        }
    }

    fn charge(&mut self, plan: &StagePlan) {
        let total = plan.spent();
        self.spent = self.spent.add(&total);
        self.invocations.push(Invocation {
            stage: plan.stage.clone(),
            setting: plan.setting,
            total,
        });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub parameters: Settings,
    pub budget: Option<BudgetRecord>,
    pub outcome: Outcome,
    pub error: Option<ErrorRecord>,
    pub metrics: BTreeMap<String, Value>,
    pub stages: Vec<StageReport>,
    pub model: Option<ModelRecord>,
    pub details: Option<Value>,
    pub wall_time_seconds: f64,
}

/// What a command produced, before wall time and error handling.
#[derive(Default)]
pub struct RunOutput {
    pub failed: bool,
    pub budget: Option<BudgetRecord>,
    pub metrics: BTreeMap<String, Value>,
    pub stages: Vec<StageReport>,
    pub model: Option<ModelRecord>,
    pub details: Option<Value>,
}

/// Finite numbers as JSON numbers; infinities and NaN as strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

pub fn execute(settings: &Settings) -> Report {
    let start = Instant::now();
    let result = match settings.command {
        Command::Bench => Err(CliError::Usage("bench writes a CSV table; use run_bench".into())),
        _ => run_command(settings),
    };
    let (outcome, error, out) = match result {
        Ok(out) => (if out.failed { Outcome::Fail } else { Outcome::Success }, None, out),
        Err(e) => (
            Outcome::Error,
            Some(ErrorRecord {
                code: e.code().into(),
                message: e.to_string(),
            }),
            RunOutput::default(),
        ),
    };
    Report {
        schema: SCHEMA,
        command: settings.command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: settings.seed,
        parameters: settings.clone(),
        budget: out.budget,
        outcome,
        error,
        metrics: out.metrics,
        stages: out.stages,
        model: out.model,
        details: out.details,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
}

/// The dataset and, for synthetic runs, the true model. `required` is the
/// command's record count, used when no sample size was given.
fn dataset(settings: &Settings, required: u64) -> CliResult<(SampleSet, Option<GaussianModel>)> {
    if let Some(path) = &settings.input {
        return Ok((ingest_csv(path)?, None));
    }
    let model = build_model(&settings.model, settings.seed)?;
    let n = match settings.samples {
        Some(n) if n > settings.max_records => {
            return Err(CliError::Usage(format!(
                "--samples {n} exceeds --max-records {}",
                settings.max_records
            )))
        }
        Some(n) => n,
        None if required > settings.max_records => {
            return Err(Error::InsufficientData {
                have: settings.max_records as usize,
                required,
            }
            .into())
        }
        None => required,
    };
    let mut data = draw(&model, n as usize, settings.seed);
    if let Some(c) = &settings.corruption {
        corrupt(&mut data, &model, c, settings.seed);
    }
    Ok((data, Some(model)))
}

fn data_dim(settings: &Settings) -> CliResult<usize> {
    match &settings.input {
        // Reading twice keeps planning independent of the data.
        Some(path) => Ok(ingest_csv(path)?.dim()),
        None => Ok(settings.model.dim),
    }
}

fn covariance_metrics(m: &mut BTreeMap<String, Value>, truth: &PsdMatrix, est: &PsdMatrix) -> CliResult<()> {
    m.insert("spectral_distance".into(), num(spectral_cov_dist(truth, est)?));
    m.insert("frobenius_error".into(), num((est.matrix() - truth.matrix()).norm()));
    let f = psd_factor(truth);
    if let Some(w) = &f.inv_sqrt {
        let w = w.matrix();
        let white = w * est.matrix() * w - DMatrix::identity(truth.dim(), truth.dim());
        m.insert("whitened_frobenius_error".into(), num(white.norm()));
    }
    Ok(())
}

fn run_command(settings: &Settings) -> CliResult<RunOutput> {
    let s = settings;
    let flags = PrivacyBudget::new(s.epsilon, s.delta)?;
    let consts = &s.constants;
    let mut out = RunOutput::default();
    let rng = &mut substream(s.seed, 0);
    match s.command {
        Command::Subspace => {
            let plan = plan_subspace(data_dim(s)?, flags)?;
            let (data, truth) = dataset(s, plan.records())?;
            let stage = run_stage(&data, &plan, &|x: &SampleSet| CandidatePoint::projector(span_projection(x)), rng)?;
            single_stage(&mut out, &plan, stage.report.clone(), stage.value.is_none());
            if let Some(p) = stage.value.as_ref().and_then(|p| p.as_projector()) {
                let rank = p.trace().round() as usize;
                out.metrics.insert("rank".into(), json!(rank));
                if let Some(g) = truth {
                    let f = psd_factor(g.covariance());
                    let err = (p - f.range_projector()).norm();
                    out.metrics.insert("projector_error".into(), num(err));
                    out.metrics.insert("exact_recovery".into(), json!(err <= 1e-8));
                    out.metrics.insert("true_rank".into(), json!(f.rank));
                }
                out.details = Some(json!({ "projector": rows(p) }));
            }
        }
        Command::Precondition => {
            let plan = plan_precondition(data_dim(s)?, flags, s.beta, consts)?;
            let (data, truth) = dataset(s, plan.records())?;
            let stage = precondition_with_plan(&data, &plan, rng)?;
            single_stage(&mut out, &plan, stage.report.clone(), stage.value.is_none());
            if let Some(est) = &stage.value {
                if let Some(g) = truth {
                    covariance_metrics(&mut out.metrics, g.covariance(), est)?;
                }
                out.details = Some(json!({ "covariance": rows(est.matrix()) }));
            }
        }
        Command::Refine => {
            let plan = plan_refine(data_dim(s)?, flags, s.alpha, s.beta, consts)?;
            let (data, truth) = dataset(s, plan.records())?;
            let identity = PsdMatrix::identity(data.dim());
            let stage = refine_with_plan(&data, &identity, &plan, s.alpha, rng)?;
            single_stage(&mut out, &plan, stage.report.clone(), stage.value.is_none());
            if let Some(est) = &stage.value {
                if let Some(g) = truth {
                    covariance_metrics(&mut out.metrics, g.covariance(), est)?;
                }
                out.details = Some(json!({ "covariance": rows(est.matrix()), "preconditioner": "identity" }));
            }
        }
        Command::Mean => {
            let plan = plan_mean(data_dim(s)?, flags, s.alpha, s.beta)?;
            let (data, truth) = dataset(s, plan.records())?;
            let stage = run_stage(&data, &plan, &|x: &SampleSet| Ok(CandidatePoint::Vector(empirical_mean(x))), rng)?;
            single_stage(&mut out, &plan, stage.report.clone(), stage.value.is_none());
            if let Some(mu) = stage.value.as_ref().and_then(|p| p.as_vector()) {
                if let Some(g) = truth {
                    out.metrics.insert("mean_error".into(), num((mu - g.mean()).norm()));
                }
                out.details = Some(json!({ "mean": mu.iter().collect::<Vec<_>>() }));
            }
        }
        Command::LearnGaussian | Command::LearnGaussianRobust => {
            let d = data_dim(s)?;
            let robust = s.command == Command::LearnGaussianRobust;
            let plan = if robust {
                plan_learn_gaussian_robust(d, flags, s.alpha, s.beta, consts)?
            } else {
                plan_learn_gaussian(d, flags, s.alpha, s.beta, consts)?
            };
            let (data, truth) = dataset(s, plan.required_records())?;
            let report = if robust {
                learn_gaussian_robust_with_plan(&data, &plan, s.seed)?
            } else {
                learn_gaussian_with_plan(&data, &plan, s.seed)?
            };
            pipeline_output(&mut out, &report, truth.as_ref())?;
            out.details = Some(json!({
                "slices": report.slices,
                "rank": report.rank,
                "failed_stage": report.failed_stage,
                "analytic_budget": plan.analytic_budget(),
                "required_records": plan.required_records(),
            }));
        }
        Command::Audit => {
            let mechanism = s
                .mechanism
                .ok_or_else(|| CliError::Usage("audit needs --mechanism".into()))?;
            let params = AuditParams {
                mechanism,
                dim: s.model.dim,
                epsilon: s.epsilon,
                delta: s.delta,
                beta: s.beta,
                trials: s.trials,
                seed: s.seed,
            };
            let r = run_audit(&params, consts)?;
            out.failed = !r.pass;
            out.metrics.insert("pass".into(), json!(r.pass));
            if let Some(t) = r.tail_estimate {
                out.metrics.insert("tail_upper".into(), num(t.upper));
            }
            if let Some(t) = r.tail_reverse {
                out.metrics.insert("tail_reverse_upper".into(), num(t.upper));
            }
            if let Some(e) = &r.eps_lower_bound {
                out.metrics.insert("eps_lower_bound".into(), num(e.lower_confidence));
            }
            out.details = Some(serde_json::to_value(&r).map_err(|e| CliError::Io(e.to_string()))?);
        }
        Command::Calibrate => {
            let cs = CalibrationSettings {
                beta: s.beta,
                trials: s.trials,
                seed: s.seed,
                ..CalibrationSettings::default()
            };
            let (calibrated, records) = calibrate_all(&cs, *consts)?;
            if let Some(path) = &s.constants_out {
                let stamp = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|t| t.as_secs())
                    .unwrap_or(0);
                let header = vec![
                    format!("written by ppme calibrate {}", env!("CARGO_PKG_VERSION")),
                    format!("unix time {stamp}"),
                    format!(
                        "beta = {}, dims = {:?}, trials = {}, seed = {}, safety = {}",
                        cs.beta, cs.dims, cs.trials, cs.seed, cs.safety
                    ),
                ];
                std::fs::write(path, calibrated.to_config(&header)).map_err(|e| CliError::io(path, e))?;
            }
            for r in &records {
                out.metrics.insert(r.key.clone(), num(r.value));
            }
            out.details = Some(json!({ "records": records, "constants": calibrated }));
        }
        Command::Bench => unreachable!("handled by the caller"),
    }
    Ok(out)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn single_stage(out: &mut RunOutput, plan: &StagePlan, report: StageReport, failed: bool) {
    let mut budget = BudgetRecord::new("per-invocation setting", plan.setting);
    budget.charge(plan);
    out.budget = Some(budget);
    out.failed = failed;
    out.metrics.insert("k".into(), json!(plan.k));
    out.metrics.insert("chunk_size".into(), json!(plan.chunk_size));
    out.stages.push(report);
}

fn pipeline_output(out: &mut RunOutput, report: &EstimationReport, truth: Option<&GaussianModel>) -> CliResult<()> {
    let mut budget = BudgetRecord::new("total", report.budget_requested);
    for st in &report.stages {
        budget.charge(&st.plan);
    }
    out.budget = Some(budget);
    out.failed = report.failed;
    out.stages = report.stages.clone();
    if let Some(g) = &report.model {
        out.model = Some(ModelRecord::from(g));
        if let Some(t) = truth {
            out.metrics.insert("tv_upper_bound".into(), num(tv_upper_bound(g, t)?));
            out.metrics.insert("mean_error".into(), num((g.mean() - t.mean()).norm()));
            covariance_metrics(&mut out.metrics, t.covariance(), g.covariance())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Cli;
    use clap::Parser;

    fn settings(args: &[&str]) -> Settings {
        Settings::resolve(&Cli::try_parse_from(std::iter::once("ppme").chain(args.iter().copied())).unwrap()).unwrap()
    }

    #[test]
    fn subspace_recovers_rank_two() {
        let s = settings(&["subspace", "--seed", "5", "--eigenvalues", "4,1,0,0,0", "--rotate"]);
        let r = execute(&s);
        assert_eq!(r.outcome, Outcome::Success, "{:?}", r.error);
        assert_eq!(r.metrics["exact_recovery"], json!(true));
        assert_eq!(r.metrics["rank"], json!(2));
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let s = settings(&["learn-gaussian", "--seed", "1", "--samples", "1000"]);
        let r = execute(&s);
        assert_eq!(r.outcome, Outcome::Error);
        let e = r.error.unwrap();
        assert_eq!(e.code, "InsufficientData");
        assert!(e.message.contains("need at least"));
    }

    #[test]
    fn scattered_data_fails() {
        let s = settings(&[
            "mean",
            "--seed",
            "2",
            "--corruption-fraction",
            "1",
            "--adversary",
            "scattered",
            "--alpha",
            "1",
            "--epsilon",
            "20",
            "--allow-large-epsilon",
        ]);
        let r = execute(&s);
        assert_eq!(r.outcome, Outcome::Fail, "{:?}", r.error);
        assert_eq!(r.outcome.exit_code(), 2);
        let b = r.budget.unwrap();
        assert_eq!(b.spent, PrivacyBudget::new(20.0, 1e-3).unwrap().ppme_total());
    }
}
