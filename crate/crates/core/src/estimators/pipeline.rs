//! Learning an unbounded Gaussian end to end.
//!
//! Steps, each on its own contiguous slice of the data:
//! 1. pair differences `(Xᵢ − X_{m₁+i})/√2` → range projector `P = U Uᵀ`;
//! 2. fresh pair differences projected by `Uᵀ` → preconditioned covariance,
//!    then Frobenius refinement → `Σ̂_r`;
//! 3. fresh records whitened by `Σ̂_r^{-1/2} Uᵀ` → mean `μ̂_r`;
//! 4. fresh records → complement mean `(I − P)μ`.
//!
//! The result is `N(U Σ̂_r^{1/2} μ̂_r + μ̂⊥, U Σ̂_r Uᵀ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constants::Constants;
use crate::error::{Error, Result};
use crate::estimators::private::{
    check_robust_alpha, plan_complement, plan_mean, plan_precondition, plan_refine, plan_robust_covariance,
    plan_robust_mean, plan_subspace, private_complement_mean, private_mean_wellconditioned,
    private_robust_covariance, private_robust_mean, private_subspace, refine_with_plan, precondition_with_plan,
    StagePlan, StageReport,
};
use crate::gauss::{psd_factor, GaussianModel, PsdMatrix, SampleSet};
use crate::ppme::PrivacyBudget;
use crate::rng::substream;

/// A contiguous range `[start, end)` of records assigned to one step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSlice {
    pub step: String,
    pub start: u64,
    pub end: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub dim: usize,
    pub requested: PrivacyBudget,
    /// Planned stages at full rank, in execution order.
    pub stages: Vec<StagePlan>,
    pub slices: Vec<DataSlice>,
    pub alpha: f64,
    /// Failure probability given to each stage.
    pub stage_beta: f64,
    pub constants: Constants,
}

impl PipelinePlan {
    pub fn required_records(&self) -> u64 {
        self.slices.last().map_or(0, |s| s.end)
    }

    /// Budget spent if every stage runs.
    pub fn analytic_budget(&self) -> PrivacyBudget {
        self.stages
            .iter()
            .fold(PrivacyBudget::zero(), |acc, s| acc.add(&s.spent()))
    }

    fn stage(&self, name: &str) -> &StagePlan {
        self.stages.iter().find(|s| s.stage == name).expect("planned stage")
    }

    fn slice(&self, step: &str) -> &DataSlice {
        self.slices.iter().find(|s| s.step == step).expect("planned slice")
    }

    fn check(&self, dataset: &SampleSet) -> Result<()> {
        if dataset.dim() != self.dim {
            return Err(Error::InvalidInput(format!(
                "plan is for dimension {} but data has dimension {}",
                self.dim,
                dataset.dim()
            )));
        }
        let need = self.required_records();
        if (dataset.len() as u64) < need {
            return Err(Error::InsufficientData {
                have: dataset.len(),
                required: need,
            });
        }
        Ok(())
    }
}

/// Lays out `(step, records)` pairs back to back.
fn lay_out(parts: &[(&str, u64)]) -> Vec<DataSlice> {
    let mut start = 0;
    parts
        .iter()
        .map(|&(step, n)| {
            let s = DataSlice {
                step: step.into(),
                start,
                end: start + n,
            };
            start += n;
            s
        })
        .collect()
}

const GAUSSIAN_STAGES: usize = 5;

/// Each of the five stages gets an equal share of the total budget.
pub fn plan_learn_gaussian(
    d: usize,
    budget: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
) -> Result<PipelinePlan> {
    let budget = PrivacyBudget::new(budget.epsilon, budget.delta)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::ConfigError(format!("alpha must lie in (0,1], got {alpha}")));
    }
    let setting = budget.split(GAUSSIAN_STAGES).ppme_setting_for_total();
    let stage_beta = beta / GAUSSIAN_STAGES as f64;
    let stages = vec![
        plan_subspace(d, setting)?,
        plan_precondition(d, setting, stage_beta, consts)?,
        plan_refine(d, setting, alpha, stage_beta, consts)?,
        plan_mean(d, setting, alpha / 2.0, stage_beta)?,
        plan_complement(d, setting)?,
    ];
    let pairs_cov = stages[1].records() + stages[2].records();
    let slices = lay_out(&[
        ("subspace", 2 * stages[0].records()),
        ("covariance", 2 * pairs_cov),
        ("mean", stages[3].records()),
        ("complement", stages[4].records()),
    ]);
    Ok(PipelinePlan {
        dim: d,
        requested: budget,
        stages,
        slices,
        alpha,
        stage_beta,
        constants: *consts,
    })
}

/// Serializable Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl From<&GaussianModel> for ModelRecord {
    fn from(g: &GaussianModel) -> Self {
        let c = g.covariance().matrix();
        ModelRecord {
            mean: g.mean().iter().cloned().collect(),
            covariance: (0..g.dim()).map(|i| c.row(i).iter().cloned().collect()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationReport {
    /// Present exactly when no stage failed.
    pub model: Option<GaussianModel>,
    pub failed: bool,
    pub failed_stage: Option<String>,
    pub stages: Vec<StageReport>,
    pub budget_requested: PrivacyBudget,
    /// Sum of `(2εᵢ, 4e^{εᵢ}δᵢ)` over the stages that ran.
    pub budget_spent: PrivacyBudget,
    pub seed: u64,
    pub slices: Vec<DataSlice>,
    pub rank: Option<usize>,
}

impl EstimationReport {
    fn new(plan: &PipelinePlan, seed: u64) -> Self {
        EstimationReport {
            model: None,
            failed: false,
            failed_stage: None,
            stages: vec![],
            budget_requested: plan.requested,
            budget_spent: PrivacyBudget::zero(),
            seed,
            slices: plan.slices.clone(),
            rank: None,
        }
    }

    fn record(&mut self, report: StageReport, failed: bool) -> bool {
        self.budget_spent = self.budget_spent.add(&report.plan.spent());
        if failed {
            self.failed = true;
            self.failed_stage = Some(report.plan.stage.clone());
        }
        self.stages.push(report);
        failed
    }
}

fn records(dataset: &SampleSet, slice: &DataSlice) -> SampleSet {
    dataset.slice(slice.start as usize, slice.end as usize)
}

/// `(Xᵢ − X_{n/2+i})/√2` for the first half against the second half.
pub fn pair_differences(x: &SampleSet) -> SampleSet {
    let half = x.len() / 2;
    let d = x.dim();
    let mut data = Vec::with_capacity(half * d);
    for i in 0..half {
        let (a, b) = (x.row(i), x.row(half + i));
        data.extend(a.iter().zip(b).map(|(u, v)| (u - v) / std::f64::consts::SQRT_2));
    }
    SampleSet::from_flat(d, data).expect("same width")
}

/// Stage streams are `substream(seed, i)` for stage index `i`.
pub fn learn_gaussian(
    dataset: &SampleSet,
    budget: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
    seed: u64,
) -> Result<EstimationReport> {
    let plan = plan_learn_gaussian(dataset.dim(), budget, alpha, beta, consts)?;
    learn_gaussian_with_plan(dataset, &plan, seed)
}

pub fn learn_gaussian_with_plan(
    dataset: &SampleSet,
    plan: &PipelinePlan,
    seed: u64,
) -> Result<EstimationReport> {
    plan.check(dataset)?;
    let d = plan.dim;
    let mut report = EstimationReport::new(plan, seed);

    let sub = plan.stage("subspace");
    let z = pair_differences(&records(dataset, plan.slice("subspace")));
    let out = private_subspace(&z, sub.setting, &mut substream(seed, 0))?;
    let Some(p) = out.value.clone() else {
        report.record(out.report, true);
        return Ok(report);
    };
    report.record(out.report, false);
    let basis = psd_factor(&PsdMatrix::from_gram(p.clone())).range_basis();
    let r = basis.ncols();
    report.rank = Some(r);

    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    if r > 0 {
        // Stage plans were made at full dimension; on a rank-r subspace they
        // are re-planned in dimension r, which never needs more records.
        let setting = plan.stage("precondition").setting;
        let (beta, consts) = (plan.stage_beta, &plan.constants);
        let ut = basis.transpose();
        let pairs = pair_differences(&records(dataset, plan.slice("covariance"))).transform(&ut);
        let pre_plan = plan_precondition(r, setting, beta, consts)?;
        let out = precondition_with_plan(&pairs, &pre_plan, &mut substream(seed, 1))?;
        let Some(pre) = out.value.clone() else {
            report.record(out.report, true);
            return Ok(report);
        };
        report.record(out.report, false);

        let ref_plan = plan_refine(r, setting, plan.alpha, beta, consts)?;
        let offset = plan.stage("precondition").records() as usize;
        let ref_data = pairs.slice(offset, pairs.len());
        let out = refine_with_plan(&ref_data, &pre, &ref_plan, plan.alpha, &mut substream(seed, 2))?;
        let Some(sigma_r) = out.value.clone() else {
            report.record(out.report, true);
            return Ok(report);
        };
        report.record(out.report, false);

        let f = psd_factor(&sigma_r);
        let inv_sqrt = f.inv_sqrt.clone().ok_or_else(|| {
            Error::SingularCovariance("refined covariance is singular on the learned subspace".into())
        })?;
        let whiten = inv_sqrt.matrix() * &ut;
        let xs = records(dataset, plan.slice("mean")).transform(&whiten);
        let out = private_mean_wellconditioned(&xs, setting, plan.alpha / 2.0, beta, &mut substream(seed, 3))?;
        let Some(mu_r) = out.value.clone() else {
            report.record(out.report, true);
            return Ok(report);
        };
        report.record(out.report, false);
        mean += &basis * (f.sqrt.matrix() * mu_r);
        cov = &basis * sigma_r.matrix() * &ut;
    }

    let comp_plan = plan.stage("complement");
    let xc = records(dataset, plan.slice("complement"));
    let out = private_complement_mean(&xc, &p, comp_plan.setting, &mut substream(seed, 4))?;
    let Some(mu_perp) = out.value.clone() else {
        report.record(out.report, true);
        return Ok(report);
    };
    report.record(out.report, false);
    mean += mu_perp;
    report.model = Some(GaussianModel::new(mean, PsdMatrix::from_gram(cov))?);
    Ok(report)
}

const ROBUST_STAGES: usize = 2;

/// Robust pipeline: filtered covariance on pair differences, then the
/// filtered mean of records whitened by the learned covariance. Assumes a
/// full-rank covariance. Both stages share the budget equally.
pub fn plan_learn_gaussian_robust(
    d: usize,
    budget: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
) -> Result<PipelinePlan> {
    let budget = PrivacyBudget::new(budget.epsilon, budget.delta)?;
    check_robust_alpha(alpha, consts)?;
    let setting = budget.split(ROBUST_STAGES).ppme_setting_for_total();
    let stage_beta = beta / ROBUST_STAGES as f64;
    let stages = vec![
        plan_robust_covariance(d, setting, alpha, stage_beta, consts)?,
        plan_robust_mean(d, setting, alpha, stage_beta, consts)?,
    ];
    let slices = lay_out(&[
        ("robust-covariance", 2 * stages[0].records()),
        ("robust-mean", stages[1].records()),
    ]);
    Ok(PipelinePlan {
        dim: d,
        requested: budget,
        stages,
        slices,
        alpha,
        stage_beta,
        constants: *consts,
    })
}

pub fn learn_gaussian_robust(
    dataset: &SampleSet,
    budget: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
    seed: u64,
) -> Result<EstimationReport> {
    let plan = plan_learn_gaussian_robust(dataset.dim(), budget, alpha, beta, consts)?;
    learn_gaussian_robust_with_plan(dataset, &plan, seed)
}

pub fn learn_gaussian_robust_with_plan(dataset: &SampleSet, plan: &PipelinePlan, seed: u64) -> Result<EstimationReport> {
    plan.check(dataset)?;
    let mut report = EstimationReport::new(plan, seed);
    let (alpha, beta, consts) = (plan.alpha, plan.stage_beta, &plan.constants);
    let setting = plan.stage("robust-covariance").setting;

    let z = pair_differences(&records(dataset, plan.slice("robust-covariance")));
    let out = private_robust_covariance(&z, setting, alpha, beta, consts, &mut substream(seed, 0))?;
    let Some(sigma) = out.value.clone() else {
        report.record(out.report, true);
        return Ok(report);
    };
    report.record(out.report, false);
    let f = psd_factor(&sigma);
    let inv_sqrt = f
        .inv_sqrt
        .clone()
        .ok_or_else(|| Error::SingularCovariance("robust covariance estimate is singular".into()))?;

    let xs = records(dataset, plan.slice("robust-mean")).transform(inv_sqrt.matrix());
    let out = private_robust_mean(&xs, setting, alpha, beta, consts, &mut substream(seed, 1))?;
    let Some(mu_w) = out.value.clone() else {
        report.record(out.report, true);
        return Ok(report);
    };
    report.record(out.report, false);
    report.rank = Some(plan.dim);
    report.model = Some(GaussianModel::new(f.sqrt.matrix() * mu_w, sigma)?);
    Ok(report)
}
