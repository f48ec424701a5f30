//! Concrete audit experiments exposed by `ppme audit`.

use nalgebra::DVector;
use ppme_core::audit::{
    blackbox_eps_lower_bound, concentration_certify, covariance_mask_audit, gaussian_mask_laws, privacy_loss_tail,
    AuditReport, Mechanism,
};
use ppme_core::constants::Constants;
use ppme_core::mechanisms::{
    calibrate_concentration_eta, sample_truncated_laplace, CovarianceMask, IdentityMask, TruncatedLaplaceParams,
};
use ppme_core::ppme::{ppme_run, PpmeConfig};
use ppme_core::semimetric::{CandidatePoint, SemimetricSpec};
use ppme_core::{PsdMatrix, Result, SampleSet};

use crate::config::AuditMechanism;

/// Chunk count of the failure-event audit.
pub const FAIL_AUDIT_CHUNKS: usize = 140;

/// One-dimensional dataset of `FAIL_AUDIT_CHUNKS` records: `agree` zeros
/// followed by pairwise-distant values. With one record per chunk and exact
/// vector equality as the distance, `Q = (agree² + (k − agree))/k²`.
pub fn agreement_dataset(agree: usize) -> SampleSet {
    let k = FAIL_AUDIT_CHUNKS;
    let rows: Vec<f64> = (0..k).map(|i| if i < agree { 0.0 } else { 10.0 * (i + 1) as f64 }).collect();
    SampleSet::from_flat(1, rows).expect("non-empty")
}

/// Neighbouring datasets whose score statistics straddle the threshold
/// `0.8 + (2/(kε))·ln(1 + (e^ε − 1)/(2δ))`, so the failure probability is
/// far from both 0 and 1.
pub fn straddling_pair(epsilon: f64, delta: f64) -> (SampleSet, SampleSet) {
    let k = FAIL_AUDIT_CHUNKS as f64;
    let threshold = ppme_core::ppme::threshold_value(FAIL_AUDIT_CHUNKS, epsilon, delta);
    let q = |a: f64| (a * a + (k - a)) / (k * k);
    let agree = (1..FAIL_AUDIT_CHUNKS)
        .find(|&a| q(a as f64) >= threshold)
        .unwrap_or(FAIL_AUDIT_CHUNKS);
    (agreement_dataset(agree), agreement_dataset(agree.saturating_sub(1)))
}

/// PPME on one-record chunks with the record itself as estimate.
pub fn first_record_ppme(epsilon: f64, delta: f64) -> Result<impl Fn(&SampleSet, &mut dyn rand::RngCore) -> Result<Option<Vec<f64>>> + Sync> {
    let cfg = PpmeConfig::new(FAIL_AUDIT_CHUNKS, epsilon, delta, SemimetricSpec::vector_exact())?;
    Ok(move |data: &SampleSet, rng: &mut dyn rand::RngCore| {
        let out = ppme_run(data, &|s: &SampleSet| Ok(CandidatePoint::Vector(s.row_vector(0))), &IdentityMask, &cfg, rng)?;
        Ok(out.point().and_then(|p| p.as_vector()).map(|v| v.iter().copied().collect()))
    })
}

/// Counting query plus truncated Laplace noise.
fn tlap_count(epsilon: f64, delta: f64) -> Result<impl Fn(&SampleSet, &mut dyn rand::RngCore) -> Result<Option<Vec<f64>>> + Sync> {
    let p = TruncatedLaplaceParams::new(1.0, epsilon, delta)?;
    Ok(move |data: &SampleSet, rng: &mut dyn rand::RngCore| {
        let count: f64 = data.rows().map(|r| r[0]).sum();
        Ok(Some(vec![count + sample_truncated_laplace(&p, rng)]))
    })
}

fn ones(n: usize, of: usize) -> SampleSet {
    SampleSet::from_flat(1, (0..of).map(|i| if i < n { 1.0 } else { 0.0 }).collect()).expect("non-empty")
}

pub struct AuditParams {
    pub mechanism: AuditMechanism,
    pub dim: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    pub trials: u64,
    pub seed: u64,
}

pub fn run_audit(p: &AuditParams, consts: &Constants) -> Result<AuditReport> {
    let d = p.dim;
    match p.mechanism {
        AuditMechanism::GaussianMask => {
            let (a, b) = gaussian_mask_laws(1.0, p.epsilon, p.delta, d);
            let mut r = privacy_loss_tail(&a, &b, p.epsilon, p.delta, 0.0, p.trials, p.seed)?;
            r.mechanism = format!("gaussian-mask d={d} gamma=1");
            Ok(r)
        }
        AuditMechanism::CovarianceMask => {
            let eta = calibrate_concentration_eta(d, p.beta, consts.c1, None);
            covariance_mask_audit(d, eta, p.epsilon, p.delta, p.trials, p.seed)
        }
        AuditMechanism::CovarianceConcentration => {
            let eta = calibrate_concentration_eta(d, p.beta, consts.c1, None);
            let mask = CovarianceMask::new(eta, p.epsilon, p.delta, d, 0.01, p.beta / 2.0)?;
            let y = CandidatePoint::Matrix(PsdMatrix::identity(d));
            let mut r = concentration_certify(
                &mask,
                &SemimetricSpec::spectral_covariance(),
                &y,
                0.01,
                p.beta / 2.0,
                0.03,
                p.trials,
                p.seed,
            )?;
            r.notes.push(format!("eta = {eta:e}"));
            Ok(r)
        }
        AuditMechanism::Tlap => {
            let mech = tlap_count(p.epsilon, p.delta)?;
            let mech: &Mechanism<'_> = &mech;
            let mut r = blackbox_eps_lower_bound(mech, &ones(50, 100), &ones(51, 100), p.epsilon, p.delta, p.trials, p.seed)?;
            r.mechanism = "tlap-count".into();
            Ok(r)
        }
        AuditMechanism::PpmeFail => {
            let mech = first_record_ppme(p.epsilon, p.delta)?;
            let mech: &Mechanism<'_> = &mech;
            let (a, b) = straddling_pair(p.epsilon, p.delta);
            let mut r = blackbox_eps_lower_bound(mech, &a, &b, p.epsilon, p.delta, p.trials, p.seed)?;
            r.mechanism = "ppme-failure-event".into();
            r.notes.push(format!(
                "agreeing records {} vs {} of {FAIL_AUDIT_CHUNKS}",
                a.rows().filter(|r| r[0] == 0.0).count(),
                b.rows().filter(|r| r[0] == 0.0).count()
            ));
            Ok(r)
        }
    }
}

/// Mean vector helper for reports.
pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}
