//! Private single-stage estimators built on the reduction.
//!
//! Every stage is described by a [`StagePlan`] (chunk count, chunk size,
//! space and mask) computed from the dimension and the privacy setting alone,
//! so the required dataset size is known before any data is touched.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::constants::Constants;
use crate::error::{Error, Result};
use crate::estimators::nonprivate::{
    empirical_covariance, empirical_mean, filtered_robust_covariance, filtered_robust_mean, span_projection,
};
use crate::gauss::{psd_factor, sym_eigenvalues, PsdMatrix, SampleSet};
use crate::mechanisms::{
    calibrate_concentration_eta, CovarianceMask, FrobeniusGaussianMask, GaussianMask, IdentityMask,
    MaskingCalibration, MaskingMechanism,
};
use crate::ppme::{default_chunks, ppme_run, Estimator, PpmeConfig, PpmeDiagnostics, PpmeOutcome, PrivacyBudget};
use crate::semimetric::{CandidatePoint, SemimetricSpec};

/// The masking mechanism of a stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskSpec {
    Identity,
    Gaussian { calibration: MaskingCalibration },
    Covariance { calibration: MaskingCalibration },
    Frobenius { calibration: MaskingCalibration, max_projection_shift: f64 },
}

impl MaskSpec {
    pub fn mechanism(&self) -> Box<dyn MaskingMechanism> {
        match *self {
            MaskSpec::Identity => Box::new(IdentityMask),
            MaskSpec::Gaussian { calibration } => Box::new(GaussianMask { calibration }),
            MaskSpec::Covariance { calibration } => Box::new(CovarianceMask { calibration }),
            MaskSpec::Frobenius {
                calibration,
                max_projection_shift,
            } => Box::new(FrobeniusGaussianMask {
                calibration,
                max_projection_shift: Some(max_projection_shift),
            }),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.mechanism().gamma()
    }
}

/// Everything needed to run one stage, fixed before seeing data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: String,
    pub dim: usize,
    pub k: usize,
    pub chunk_size: usize,
    /// The reduction's `(ε, δ)` parameters; the stage spends `(2ε, 4e^ε δ)`.
    pub setting: PrivacyBudget,
    pub space: SemimetricSpec,
    pub mask: MaskSpec,
}

impl StagePlan {
    pub fn records(&self) -> u64 {
        (self.k as u64).saturating_mul(self.chunk_size as u64)
    }

    pub fn spent(&self) -> PrivacyBudget {
        self.setting.ppme_total()
    }

    fn config(&self) -> Result<PpmeConfig> {
        PpmeConfig::new(self.k, self.setting.epsilon, self.setting.delta, self.space)
    }

    fn take(&self, dataset: &SampleSet) -> Result<SampleSet> {
        if dataset.dim() != self.dim {
            return Err(Error::InvalidInput(format!(
                "{} stage planned for dimension {} but data has dimension {}",
                self.stage,
                self.dim,
                dataset.dim()
            )));
        }
        let need = self.records();
        if (dataset.len() as u64) < need {
            return Err(Error::InsufficientData {
                have: dataset.len(),
                required: need,
            });
        }
        Ok(dataset.slice(0, need as usize))
    }
}

/// Condensed reduction diagnostics for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpmeSummary {
    #[serde(rename = "Q")]
    pub q_mean: f64,
    #[serde(rename = "Qhat")]
    pub q_hat: f64,
    pub threshold: f64,
    pub q_min: f64,
    pub q_median: f64,
    pub weight_total: f64,
    pub failed_at_threshold: bool,
}

impl From<&PpmeDiagnostics> for PpmeSummary {
    fn from(d: &PpmeDiagnostics) -> Self {
        let mut q = d.q.clone();
        q.sort_by(f64::total_cmp);
        PpmeSummary {
            q_mean: d.q_mean,
            q_hat: d.q_hat,
            threshold: d.threshold,
            q_min: q.first().copied().unwrap_or(0.0),
            q_median: q.get(q.len() / 2).copied().unwrap_or(0.0),
            weight_total: d.weight_total,
            failed_at_threshold: d.failed_at_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub plan: StagePlan,
    pub summary: PpmeSummary,
    /// Warnings derived from the released output only.
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome<T> {
    pub value: Option<T>,
    pub report: StageReport,
}

impl<T> StageOutcome<T> {
    pub fn failed(&self) -> bool {
        self.value.is_none()
    }

    fn map<U>(self, f: impl FnOnce(T) -> U) -> StageOutcome<U> {
        StageOutcome {
            value: self.value.map(f),
            report: self.report,
        }
    }
}

/// Runs the reduction for `plan` on the first `k·s` records of `dataset`.
pub fn run_stage(
    dataset: &SampleSet,
    plan: &StagePlan,
    estimator: &Estimator<'_>,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<CandidatePoint>> {
    let data = plan.take(dataset)?;
    let cfg = plan.config()?;
    let mask = plan.mask.mechanism();
    let PpmeOutcome { result, diagnostics } = ppme_run(&data, estimator, mask.as_ref(), &cfg, rng)?;
    let value = match result {
        crate::ppme::PpmeResult::Output(p) => Some(p),
        crate::ppme::PpmeResult::Fail => None,
    };
    Ok(StageOutcome {
        value,
        report: StageReport {
            plan: plan.clone(),
            summary: PpmeSummary::from(&diagnostics),
            flags: vec![],
        },
    })
}

fn chunks_for(gamma: f64, radius_sum: f64, setting: &PrivacyBudget) -> Result<usize> {
    let needed = (400.0 * radius_sum / gamma).ceil();
    if !needed.is_finite() || needed > 1e15 {
        return Err(Error::ConfigError(format!(
            "mask sensitivity {gamma:e} requires an unrepresentable number of chunks"
        )));
    }
    Ok((needed as usize).max(default_chunks(setting.epsilon, setting.delta)))
}

fn size(x: f64) -> Result<usize> {
    if !x.is_finite() || x > 1e15 {
        return Err(Error::ConfigError(format!("chunk size {x:e} is unrepresentable")));
    }
    Ok((x.ceil() as usize).max(1))
}

/// Upper `1 − e^{−x}` quantile bound `d + 2√(dx) + 2x` of a χ²_d variable.
fn chi_square_tail(d: usize, x: f64) -> f64 {
    let d = d as f64;
    d + 2.0 * (d * x).sqrt() + 2.0 * x
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::ConfigError(format!("{name} must lie in (0,1), got {v}")));
    }
    Ok(())
}

pub fn plan_subspace(d: usize, setting: PrivacyBudget) -> Result<StagePlan> {
    let setting = PrivacyBudget::new(setting.epsilon, setting.delta)?;
    Ok(StagePlan {
        stage: "subspace".into(),
        dim: d,
        k: default_chunks(setting.epsilon, setting.delta),
        chunk_size: d,
        setting,
        space: SemimetricSpec::projector_exact(),
        mask: MaskSpec::Identity,
    })
}

/// Projector onto the range of the covariance; exact on clean data.
pub fn private_subspace(
    dataset: &SampleSet,
    setting: PrivacyBudget,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<DMatrix<f64>>> {
    let plan = plan_subspace(dataset.dim(), setting)?;
    let out = run_stage(dataset, &plan, &|s: &SampleSet| CandidatePoint::projector(span_projection(s)), rng)?;
    Ok(out.map(|p| p.as_projector().cloned().expect("projector space")))
}

pub fn plan_precondition(d: usize, setting: PrivacyBudget, beta: f64, consts: &Constants) -> Result<StagePlan> {
    let setting = PrivacyBudget::new(setting.epsilon, setting.delta)?;
    check_unit("beta", beta)?;
    let eta = calibrate_concentration_eta(d, beta, consts.c1, None);
    let mask = CovarianceMask::new(eta, setting.epsilon, setting.delta, d, 0.01, beta / 2.0)?;
    let space = SemimetricSpec::spectral_covariance();
    let k = chunks_for(mask.calibration.gamma, space.r + space.phi, &setting)?;
    let chunk_size = size(consts.c2 * (d as f64 + (4.0 * k as f64 / beta).ln()))?;
    Ok(StagePlan {
        stage: "precondition".into(),
        dim: d,
        k,
        chunk_size,
        setting,
        space,
        mask: MaskSpec::Covariance {
            calibration: mask.calibration,
        },
    })
}

/// Covariance estimate within spectral distance 1/10 of a zero-mean
/// Gaussian's covariance (utility contract).
pub fn private_precondition_covariance(
    dataset: &SampleSet,
    setting: PrivacyBudget,
    beta: f64,
    consts: &Constants,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<PsdMatrix>> {
    let plan = plan_precondition(dataset.dim(), setting, beta, consts)?;
    precondition_with_plan(dataset, &plan, rng)
}

/// Runs a covariance stage with an explicit plan (for example one whose chunk
/// count was overridden).
pub fn precondition_with_plan(
    dataset: &SampleSet,
    plan: &StagePlan,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<PsdMatrix>> {
    let out = run_stage(dataset, plan, &|s: &SampleSet| Ok(CandidatePoint::Matrix(empirical_covariance(s))), rng)?;
    Ok(out.map(into_matrix))
}

fn into_matrix(p: CandidatePoint) -> PsdMatrix {
    match p {
        CandidatePoint::Matrix(m) => m,
        _ => unreachable!("matrix space"),
    }
}

fn into_vector(p: CandidatePoint) -> DVector<f64> {
    match p {
        CandidatePoint::Vector(v) => v,
        _ => unreachable!("vector space"),
    }
}

pub fn plan_refine(
    d: usize,
    setting: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
) -> Result<StagePlan> {
    let setting = PrivacyBudget::new(setting.epsilon, setting.delta)?;
    check_unit("beta", beta)?;
    if !(alpha > 0.0) {
        return Err(Error::ConfigError(format!("alpha must be positive, got {alpha}")));
    }
    let radius = consts.refine_radius;
    let dd = d * d;
    // Half the error budget for chunk estimates, half for the mask.
    let chunk_accuracy = alpha.min(radius) / 2.0;
    let eta = (alpha / 2.0) / (2.0 * dd as f64 * (2.0 / beta).ln()).sqrt();
    let calibration = MaskingCalibration::gaussian_from_eta(eta, setting.epsilon, setting.delta, dd, beta)?;
    let k = chunks_for(calibration.gamma, radius, &setting)?;
    let chunk_size = size(consts.c_frob * (dd as f64 + (4.0 * k as f64 / beta).ln()) / chunk_accuracy.powi(2))?;
    Ok(StagePlan {
        stage: "refine".into(),
        dim: d,
        k,
        chunk_size,
        setting,
        space: SemimetricSpec::norm(radius),
        mask: MaskSpec::Frobenius {
            calibration,
            max_projection_shift: alpha / 2.0,
        },
    })
}

/// Refines a preconditioned covariance estimate in Frobenius norm after
/// whitening by `precond^{-1/2}`.
pub fn private_refine_covariance(
    dataset: &SampleSet,
    precond: &PsdMatrix,
    setting: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<PsdMatrix>> {
    let plan = plan_refine(dataset.dim(), setting, alpha, beta, consts)?;
    refine_with_plan(dataset, precond, &plan, alpha, rng)
}

pub fn refine_with_plan(
    dataset: &SampleSet,
    precond: &PsdMatrix,
    plan: &StagePlan,
    alpha: f64,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<PsdMatrix>> {
    let f = psd_factor(precond);
    let inv_sqrt = f
        .inv_sqrt
        .ok_or_else(|| Error::SingularCovariance("preconditioner must be positive definite".into()))?;
    let data = plan.take(dataset)?.transform(inv_sqrt.matrix());
    let mut out = run_stage(&data, plan, &|s: &SampleSet| Ok(CandidatePoint::Matrix(empirical_covariance(s))), rng)?;
    if let Some(CandidatePoint::Matrix(w)) = &out.value {
        let eig = sym_eigenvalues(w.matrix());
        let (lo, hi) = (eig[0], eig[eig.len() - 1]);
        if lo < 0.9 - alpha || hi > 1.1 + alpha {
            out.report.flags.push(format!(
                "whitened estimate has eigenvalues in [{lo:.4}, {hi:.4}], outside the preconditioning band"
            ));
        }
    }
    Ok(out.map(|p| into_matrix(p).congruence(f.sqrt.matrix())))
}

pub fn plan_mean(d: usize, setting: PrivacyBudget, alpha: f64, beta: f64) -> Result<StagePlan> {
    let setting = PrivacyBudget::new(setting.epsilon, setting.delta)?;
    check_unit("beta", beta)?;
    if !(alpha > 0.0) {
        return Err(Error::ConfigError(format!("alpha must be positive, got {alpha}")));
    }
    let radius = alpha;
    let eta = alpha / (2.0 * d as f64 * (2.0 / beta).ln()).sqrt();
    let calibration = MaskingCalibration::gaussian_from_eta(eta, setting.epsilon, setting.delta, d, beta)?;
    let k = chunks_for(calibration.gamma, radius, &setting)?;
    // ‖mean − μ‖² ≤ (1.5/s)·χ²_d with probability 1 − β/(4k); target r/2.
    let tail = chi_square_tail(d, (4.0 * k as f64 / beta).ln());
    let chunk_size = size(1.5 * tail / (radius / 2.0).powi(2))?;
    Ok(StagePlan {
        stage: "mean".into(),
        dim: d,
        k,
        chunk_size,
        setting,
        space: SemimetricSpec::norm(radius),
        mask: MaskSpec::Gaussian { calibration },
    })
}

/// Mean of a Gaussian with covariance between `0.5I` and `1.5I`; target
/// error `2α`.
pub fn private_mean_wellconditioned(
    dataset: &SampleSet,
    setting: PrivacyBudget,
    alpha: f64,
    beta: f64,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<DVector<f64>>> {
    let plan = plan_mean(dataset.dim(), setting, alpha, beta)?;
    let out = run_stage(dataset, &plan, &|s: &SampleSet| Ok(CandidatePoint::Vector(empirical_mean(s))), rng)?;
    Ok(out.map(into_vector))
}

pub fn plan_complement(d: usize, setting: PrivacyBudget) -> Result<StagePlan> {
    let setting = PrivacyBudget::new(setting.epsilon, setting.delta)?;
    Ok(StagePlan {
        stage: "complement".into(),
        dim: d,
        k: default_chunks(setting.epsilon, setting.delta),
        chunk_size: 1,
        setting,
        space: SemimetricSpec::vector_exact(),
        mask: MaskSpec::Identity,
    })
}

/// `(I − P)μ`, which every clean record reveals exactly.
pub fn private_complement_mean(
    dataset: &SampleSet,
    projector: &DMatrix<f64>,
    setting: PrivacyBudget,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<DVector<f64>>> {
    let d = dataset.dim();
    if projector.shape() != (d, d) {
        return Err(Error::InvalidInput("projector dimension does not match data".into()));
    }
    let plan = plan_complement(d, setting)?;
    let complement = DMatrix::identity(d, d) - projector;
    let data = plan.take(dataset)?.transform(&complement);
    let out = run_stage(&data, &plan, &|s: &SampleSet| Ok(CandidatePoint::Vector(s.row_vector(0))), rng)?;
    Ok(out.map(into_vector))
}

pub fn plan_robust_covariance(
    d: usize,
    setting: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
) -> Result<StagePlan> {
    let setting = PrivacyBudget::new(setting.epsilon, setting.delta)?;
    check_unit("beta", beta)?;
    check_robust_alpha(alpha, consts)?;
    let eta = calibrate_concentration_eta(d, beta, consts.c1_robust, Some(alpha));
    let mask = CovarianceMask::new(eta, setting.epsilon, setting.delta, d, alpha / (d as f64).sqrt(), beta / 2.0)?;
    let space = SemimetricSpec::spectral_covariance();
    let k = chunks_for(mask.calibration.gamma, space.r + space.phi, &setting)?;
    let chunk_size = size(consts.c2 * (d as f64 + (4.0 * k as f64 / beta).ln()))?;
    Ok(StagePlan {
        stage: "robust-covariance".into(),
        dim: d,
        k,
        chunk_size,
        setting,
        space,
        mask: MaskSpec::Covariance {
            calibration: mask.calibration,
        },
    })
}

pub(crate) fn check_robust_alpha(alpha: f64, consts: &Constants) -> Result<()> {
    if !(alpha > 0.0 && alpha < consts.filter_alpha0) {
        return Err(Error::InvalidInput(format!(
            "corruption fraction must lie in (0, {}), got {alpha}",
            consts.filter_alpha0
        )));
    }
    Ok(())
}

/// Second moment of an α-corrupted zero-mean Gaussian sample.
pub fn private_robust_covariance(
    dataset: &SampleSet,
    setting: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<PsdMatrix>> {
    let plan = plan_robust_covariance(dataset.dim(), setting, alpha, beta, consts)?;
    let (alpha0, trigger) = (consts.filter_alpha0, consts.filter_trigger);
    let est = move |s: &SampleSet| {
        Ok(CandidatePoint::Matrix(filtered_robust_covariance(s, alpha, alpha0, trigger)?))
    };
    Ok(run_stage(dataset, &plan, &est, rng)?.map(into_matrix))
}

pub fn robust_mean_radius(alpha: f64, consts: &Constants) -> f64 {
    consts.c3 * alpha * (1.0 / alpha).ln().sqrt()
}

pub fn plan_robust_mean(
    d: usize,
    setting: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
) -> Result<StagePlan> {
    let setting = PrivacyBudget::new(setting.epsilon, setting.delta)?;
    check_unit("beta", beta)?;
    check_robust_alpha(alpha, consts)?;
    let radius = robust_mean_radius(alpha, consts);
    let eta = alpha / (2.0 * d as f64 * (2.0 / beta).ln()).sqrt();
    let calibration = MaskingCalibration::gaussian_from_eta(eta, setting.epsilon, setting.delta, d, beta)?;
    let k = chunks_for(calibration.gamma, radius, &setting)?;
    let tail = chi_square_tail(d, (4.0 * k as f64 / beta).ln());
    let chunk_size = size(1.5 * tail / (radius / 4.0).powi(2))?;
    Ok(StagePlan {
        stage: "robust-mean".into(),
        dim: d,
        k,
        chunk_size,
        setting,
        space: SemimetricSpec::norm(radius),
        mask: MaskSpec::Gaussian { calibration },
    })
}

/// Mean of an α-corrupted Gaussian sample with covariance near the identity.
pub fn private_robust_mean(
    dataset: &SampleSet,
    setting: PrivacyBudget,
    alpha: f64,
    beta: f64,
    consts: &Constants,
    rng: &mut dyn RngCore,
) -> Result<StageOutcome<DVector<f64>>> {
    let plan = plan_robust_mean(dataset.dim(), setting, alpha, beta, consts)?;
    let trigger = consts.filter_trigger;
    let est = move |s: &SampleSet| Ok(CandidatePoint::Vector(filtered_robust_mean(s, alpha, trigger)?));
    Ok(run_stage(dataset, &plan, &est, rng)?.map(into_vector))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{sample_gaussian, GaussianModel};
    use crate::rng::stream;

    fn budget(eps: f64, delta: f64) -> PrivacyBudget {
        PrivacyBudget::new(eps, delta).unwrap()
    }

    #[test]
    fn subspace_recovers_rank_two_range() {
        let cov = PsdMatrix::from_diagonal(&[1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let model = GaussianModel::new(DVector::zeros(5), cov).unwrap();
        let plan = plan_subspace(5, budget(1.0, 1e-3)).unwrap();
        let x = sample_gaussian(&model, plan.records() as usize, &mut stream(2));
        let out = private_subspace(&x, budget(1.0, 1e-3), &mut stream(3)).unwrap();
        let p = out.value.unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 0.0]));
        assert!((p - expected).norm() <= 1e-8);
    }

    #[test]
    fn subspace_insufficient_data() {
        let x = SampleSet::from_flat(2, vec![1.0; 20]).unwrap();
        let err = private_subspace(&x, budget(1.0, 1e-3), &mut stream(0)).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { have: 10, .. }));
    }

    #[test]
    fn precondition_all_zero_fails() {
        let mut consts = Constants::default();
        consts.c1 = 0.5;
        consts.c2 = 1.0;
        let s = budget(1000.0, 1e-3);
        let plan = plan_precondition(2, s, 0.2, &consts).unwrap();
        let x = SampleSet::from_flat(2, vec![0.0; 2 * plan.records() as usize]).unwrap();
        let out = private_precondition_covariance(&x, s, 0.2, &consts, &mut stream(0)).unwrap();
        assert!(out.failed());
        assert!(out.report.summary.failed_at_threshold);
    }

    #[test]
    fn undersized_chunk_count_breaks_mask_contract() {
        let consts = Constants::default();
        let mut plan = plan_precondition(2, budget(1.0, 1e-3), 0.2, &consts).unwrap();
        plan.k = 140;
        plan.chunk_size = 2;
        let x = SampleSet::from_flat(2, vec![1.0; 2 * 280]).unwrap();
        let err = precondition_with_plan(&x, &plan, &mut stream(0)).unwrap_err();
        assert!(matches!(err, Error::ConfigError(_)));
    }

    #[test]
    fn complement_mean_is_exact() {
        let mu = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let cov = PsdMatrix::from_diagonal(&[2.0, 0.0, 0.0]).unwrap();
        let model = GaussianModel::new(mu.clone(), cov).unwrap();
        let mut x = sample_gaussian(&model, 200, &mut stream(4));
        x.set_row(17, &[0.0, 50.0, 50.0]);
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]));
        let out = private_complement_mean(&x, &p, budget(1.0, 1e-3), &mut stream(5)).unwrap();
        let v = out.value.unwrap();
        assert!((v - DVector::from_vec(vec![0.0, -2.0, 3.0])).norm() < 1e-12);

        let full = DMatrix::identity(3, 3);
        let out = private_complement_mean(&x, &full, budget(1.0, 1e-3), &mut stream(5)).unwrap();
        assert_eq!(out.value.unwrap(), DVector::zeros(3));
    }

    #[test]
    fn mean_plan_respects_mask_contract() {
        let plan = plan_mean(3, budget(1.0, 1e-3), 0.25, 0.1).unwrap();
        assert!(plan.k as f64 >= 400.0 * plan.space.r / plan.mask.gamma() - 1e-9);
        assert!(plan.k >= 140);
    }
}
