//! Monte Carlo auditing: privacy-loss tails from exact densities, black-box
//! ε lower bounds, concentration checks and calibration of the utility
//! constants.
//!
//! Audits run at δ around 1e-3, where tail frequencies are measurable with
//! 10⁶ trials; production δ values are far below what sampling can check.
//! Trials are split into fixed blocks with one substream each, so results do
//! not depend on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::constants::Constants;
use crate::error::{Error, Result};
use crate::gauss::{GaussianModel, LogDensityRatio, PsdMatrix, SampleSet};
use crate::mechanisms::{calibrate_concentration_eta, covariance_mask_gamma, gaussian_mask_eta, MaskingMechanism};
use crate::rng::{substream, Stream};
use crate::semimetric::{CandidatePoint, SemimetricSpec};

const BLOCK: u64 = 4096;

/// Counts successes of `trial` over `trials` independent runs.
pub fn monte_carlo_count<F>(trials: u64, seed: u64, trial: F) -> u64
where
    F: Fn(&mut Stream) -> bool + Sync,
{
    let blocks = trials.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b);
            let n = BLOCK.min(trials - b * BLOCK);
            (0..n).filter(|_| trial(&mut rng)).count() as u64
        })
        .sum()
}

/// A binomial proportion with a two-sided confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Exact (Clopper–Pearson) interval at the given two-sided confidence.
pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> Interval {
    assert!(trials > 0 && successes <= trials);
    let tail = (1.0 - confidence) / 2.0;
    let (x, n) = (successes as f64, trials as f64);
    let lower = if successes == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0).expect("valid shape").inverse_cdf(tail)
    };
    let upper = if successes == trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x).expect("valid shape").inverse_cdf(1.0 - tail)
    };
    Interval {
        estimate: x / n,
        lower,
        upper,
    }
}

/// Largest event-based lower bound on ε found by a black-box audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsBound {
    /// From point estimates.
    pub point: f64,
    /// From the confidence bounds (lower bound on the numerator, upper on the
    /// denominator).
    pub lower_confidence: f64,
    pub event: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mechanism: String,
    pub trials: u64,
    pub epsilon_target: f64,
    pub delta_target: f64,
    pub tail_estimate: Option<Interval>,
    /// The same tail with the roles of the two distributions swapped.
    pub tail_reverse: Option<Interval>,
    pub eps_lower_bound: Option<EpsBound>,
    pub pass: bool,
    pub attempts: u32,
    pub notes: Vec<String>,
}

impl AuditReport {
    fn new(mechanism: &str, trials: u64, epsilon: f64, delta: f64) -> Self {
        AuditReport {
            mechanism: mechanism.into(),
            trials,
            epsilon_target: epsilon,
            delta_target: delta,
            tail_estimate: None,
            tail_reverse: None,
            eps_lower_bound: None,
            pass: false,
            attempts: 1,
            notes: vec![],
        }
    }
}

/// Reruns a statistically flaky audit up to `max_attempts` times; `run`
/// receives the attempt index and should derive its seed from it.
pub fn with_retries<F>(max_attempts: u32, run: F) -> Result<AuditReport>
where
    F: Fn(u32) -> Result<AuditReport>,
{
    let mut notes = vec![];
    let mut last = None;
    for attempt in 0..max_attempts.max(1) {
        let mut report = run(attempt)?;
        report.attempts = attempt + 1;
        if report.pass {
            notes.append(&mut report.notes);
            report.notes = notes;
            return Ok(report);
        }
        notes.push(format!(
            "attempt {} failed (tail {:?}, reverse {:?}, eps bound {:?})",
            attempt + 1,
            report.tail_estimate.map(|i| i.upper),
            report.tail_reverse.map(|i| i.upper),
            report.eps_lower_bound.as_ref().map(|b| b.lower_confidence)
        ));
        last = Some(report);
    }
    let mut report = last.expect("at least one attempt");
    report.notes = notes;
    Ok(report)
}

struct GaussianSampler {
    mean: DVector<f64>,
    root: DMatrix<f64>,
}

impl GaussianSampler {
    fn new(g: &GaussianModel) -> Self {
        GaussianSampler {
            mean: g.mean().clone(),
            root: g.covariance().factor().sqrt.into_matrix(),
        }
    }

    fn draw(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let g = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.root * g
    }
}

/// Estimates `P(L ≥ ε)` for `Y ~ d1`, `L = ln f₁(Y)/f₂(Y)`, and the same with
/// the roles swapped. Passes when both upper 95% bounds are at most
/// `δ + slack`.
pub fn privacy_loss_tail(
    d1: &GaussianModel,
    d2: &GaussianModel,
    epsilon: f64,
    delta: f64,
    slack: f64,
    trials: u64,
    seed: u64,
) -> Result<AuditReport> {
    let forward = LogDensityRatio::new(d1, d2)?;
    let backward = LogDensityRatio::new(d2, d1)?;
    let (s1, s2) = (GaussianSampler::new(d1), GaussianSampler::new(d2));
    let hits = monte_carlo_count(trials, seed, |rng| forward.eval(&s1.draw(rng)) >= epsilon);
    let hits_rev = monte_carlo_count(trials, seed ^ 0x5eed_5eed, |rng| backward.eval(&s2.draw(rng)) >= epsilon);
    let mut report = AuditReport::new("gaussian-pair", trials, epsilon, delta);
    let (a, b) = (clopper_pearson(hits, trials, 0.95), clopper_pearson(hits_rev, trials, 0.95));
    report.tail_estimate = Some(a);
    report.tail_reverse = Some(b);
    report.pass = a.upper <= delta + slack && b.upper <= delta + slack;
    Ok(report)
}

/// Output laws of the Gaussian mask for inputs `0` and `γ·e₁`.
pub fn gaussian_mask_laws(gamma: f64, epsilon: f64, delta: f64, dim: usize) -> (GaussianModel, GaussianModel) {
    let eta = gaussian_mask_eta(gamma, epsilon, delta);
    let cov = PsdMatrix::identity(dim).scale(eta * eta);
    let mut shifted = DVector::zeros(dim);
    shifted[0] = gamma;
    (
        GaussianModel::new(DVector::zeros(dim), cov.clone()).expect("dims"),
        GaussianModel::new(shifted, cov).expect("dims"),
    )
}

/// Law of `vec(Σ^{1/2}(I + ηG))`: mean `vec(Σ^{1/2})`, covariance
/// `η²·(I ⊗ Σ)`, i.e. `d` diagonal blocks equal to `η²Σ`. The mask's output
/// is a function of this matrix, so indistinguishability of these laws
/// implies that of the outputs.
pub fn covariance_mask_vectorized_law(sigma: &PsdMatrix, eta: f64) -> Result<GaussianModel> {
    let d = sigma.dim();
    let root = sigma.factor().sqrt.into_matrix();
    let mean = DVector::from_column_slice(root.as_slice());
    let mut cov = DMatrix::zeros(d * d, d * d);
    for b in 0..d {
        cov.view_mut((b * d, b * d), (d, d))
            .copy_from(&(sigma.matrix() * (eta * eta)));
    }
    GaussianModel::new(mean, PsdMatrix::new(cov)?)
}

/// Audits the covariance mask with scale `η` on `Σ₁ = I` and
/// `Σ₂ = I + γ·e₁e₁ᵀ`, which are exactly `γ = covariance_mask_gamma(η, ε, δ, d)`
/// apart.
pub fn covariance_mask_audit(
    d: usize,
    eta: f64,
    epsilon: f64,
    delta: f64,
    trials: u64,
    seed: u64,
) -> Result<AuditReport> {
    let gamma = covariance_mask_gamma(eta, epsilon, delta, d);
    let s1 = PsdMatrix::identity(d);
    let mut diag = vec![1.0; d];
    diag[0] += gamma;
    let s2 = PsdMatrix::from_diagonal(&diag)?;
    let l1 = covariance_mask_vectorized_law(&s1, eta)?;
    let l2 = covariance_mask_vectorized_law(&s2, eta)?;
    let mut report = privacy_loss_tail(&l1, &l2, epsilon, delta, 0.0, trials, seed)?;
    report.mechanism = format!("covariance-mask d={d} eta={eta:e} gamma={gamma:e}");
    Ok(report)
}

/// A randomized mechanism on datasets; `None` is the failure output ⊥.
pub type Mechanism<'a> = dyn Fn(&SampleSet, &mut dyn RngCore) -> Result<Option<Vec<f64>>> + Sync + 'a;

fn collect_outputs(mech: &Mechanism<'_>, data: &SampleSet, trials: u64, seed: u64) -> Result<Vec<Option<Vec<f64>>>> {
    let blocks = trials.div_ceil(BLOCK);
    let per_block: Vec<Result<Vec<Option<Vec<f64>>>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b);
            let n = BLOCK.min(trials - b * BLOCK);
            (0..n).map(|_| mech(data, &mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(trials as usize);
    for block in per_block {
        out.extend(block?);
    }
    Ok(out)
}

/// Event-based lower bound on the ε of `mech` from the neighbouring pair
/// `(D, D′)`. Events: the failure output, and `{x_c ≤ t}`, `{x_c > t}` for
/// every coordinate `c` and every decile `t` of the pooled outputs. Passes
/// when the confidence lower bound does not exceed `epsilon`.
pub fn blackbox_eps_lower_bound(
    mech: &Mechanism<'_>,
    d: &SampleSet,
    d_prime: &SampleSet,
    epsilon: f64,
    delta: f64,
    trials: u64,
    seed: u64,
) -> Result<AuditReport> {
    let out1 = collect_outputs(mech, d, trials, seed)?;
    let out2 = collect_outputs(mech, d_prime, trials, seed ^ 0xd1ff)?;

    let mut events: Vec<(String, Box<dyn Fn(&Option<Vec<f64>>) -> bool>)> =
        vec![("fail".into(), Box::new(|o: &Option<Vec<f64>>| o.is_none()))];
    let width = out1.iter().chain(&out2).flatten().map(Vec::len).max().unwrap_or(0);
    for c in 0..width {
        let mut pooled: Vec<f64> = out1.iter().chain(&out2).flatten().map(|v| v[c]).collect();
        pooled.sort_by(f64::total_cmp);
        for q in 1..10 {
            let t = pooled[(pooled.len() * q / 10).min(pooled.len() - 1)];
            events.push((format!("x{c} <= {t}"), Box::new(move |o: &Option<Vec<f64>>| matches!(o, Some(v) if v[c] <= t))));
            events.push((format!("x{c} > {t}"), Box::new(move |o: &Option<Vec<f64>>| matches!(o, Some(v) if v[c] > t))));
        }
    }

    let mut best = EpsBound {
        point: f64::NEG_INFINITY,
        lower_confidence: f64::NEG_INFINITY,
        event: String::new(),
    };
    let bound = |num: Interval, den: Interval, use_ci: bool| {
        let (p, q) = if use_ci { (num.lower, den.upper) } else { (num.estimate, den.estimate) };
        if p > delta && q > 0.0 {
            ((p - delta) / q).ln()
        } else if p > delta {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    };
    for (name, ev) in &events {
        let c1 = out1.iter().filter(|o| ev(o)).count() as u64;
        let c2 = out2.iter().filter(|o| ev(o)).count() as u64;
        let (i1, i2) = (clopper_pearson(c1, trials, 0.95), clopper_pearson(c2, trials, 0.95));
        for (num, den, dir) in [(i1, i2, "D vs D'"), (i2, i1, "D' vs D")] {
            let lc = bound(num, den, true);
            let pt = bound(num, den, false);
            best.point = best.point.max(pt);
            if lc > best.lower_confidence {
                best.lower_confidence = lc;
                best.event = format!("{name} ({dir})");
            }
        }
    }
    let mut report = AuditReport::new("blackbox", trials, epsilon, delta);
    report.pass = best.lower_confidence <= epsilon;
    report.eps_lower_bound = Some(best);
    Ok(report)
}

/// Frequency of `dist(mask(Y), Y) > α`; passes when its upper 95% bound is at
/// most `β + slack`.
#[allow(clippy::too_many_arguments)]
pub fn concentration_certify(
    mask: &dyn MaskingMechanism,
    space: &SemimetricSpec,
    y: &CandidatePoint,
    alpha: f64,
    beta: f64,
    slack: f64,
    trials: u64,
    seed: u64,
) -> Result<AuditReport> {
    let blocks = trials.div_ceil(BLOCK);
    let counts: Vec<Result<u64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b);
            let n = BLOCK.min(trials - b * BLOCK);
            let mut far = 0;
            for _ in 0..n {
                let out = mask.mask(y, &mut rng)?;
                if space.distance(&out, y)? > alpha {
                    far += 1;
                }
            }
            Ok(far)
        })
        .collect();
    let mut far = 0;
    for c in counts {
        far += c?;
    }
    let mut report = AuditReport::new(&format!("{}-concentration", mask.name()), trials, f64::NAN, beta);
    let tail = clopper_pearson(far, trials, 0.95);
    report.tail_estimate = Some(tail);
    report.pass = tail.upper <= beta + slack;
    report.notes.push(format!("alpha = {alpha}"));
    Ok(report)
}

/// Smallest constant in `[lo, hi]` passing a check that is monotone in the
/// constant, by bisection on a log scale to relative precision `rel_tol`.
pub fn calibrate_constant<F>(check: F, lo: f64, hi: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<bool>,
{
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::ConfigError(format!("bad search range [{lo}, {hi}]")));
    }
    if !check(hi)? {
        return Err(Error::CalibrationFailed(format!("no passing constant in [{lo}, {hi}]")));
    }
    if check(lo)? {
        return Ok(lo);
    }
    let (mut a, mut b) = (lo, hi);
    while b / a > 1.0 + rel_tol {
        let mid = (a * b).sqrt();
        if check(mid)? {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(b)
}

/// `max(|λ − 1|, |1/λ − 1|)` over the eigenvalues of `m`, i.e. the spectral
/// covariance distance between `m` and the identity.
fn dist_to_identity(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, &l| {
            if l <= 0.0 {
                f64::INFINITY
            } else {
                acc.max((l - 1.0).abs()).max((1.0 / l - 1.0).abs())
            }
        })
}

/// `W/s` for `W ~ Wishart(s, I_d)`, drawn with the Bartlett decomposition.
pub fn bartlett_normalized_wishart(d: usize, s: usize, rng: &mut dyn RngCore) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        let dof = (s - i) as f64;
        l[(i, i)] = rng.sample(ChiSquared::new(dof).expect("positive dof")).sqrt();
        for j in 0..i {
            l[(i, j)] = rng.sample(StandardNormal);
        }
    }
    (&l * l.transpose()) / s as f64
}

fn mask_factor(d: usize, eta: f64, rng: &mut dyn RngCore) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = DMatrix::identity(d, d) + g * eta;
    &a * a.transpose()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub dims: Vec<usize>,
    pub beta: f64,
    pub trials: u64,
    pub seed: u64,
    pub safety: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            dims: vec![2, 4, 8],
            beta: 0.1,
            trials: 10_000,
            seed: 20_240_601,
            safety: 1.5,
        }
    }
}

/// Passes when the event holds in at least a `1 − β/2` fraction of trials
/// for every configured dimension. Trials reuse the same substreams for every
/// candidate constant.
fn frequency_check<F>(settings: &CalibrationSettings, event: F) -> bool
where
    F: Fn(usize, &mut Stream) -> bool + Sync,
{
    settings.dims.iter().all(|&d| {
        let hits = monte_carlo_count(settings.trials, settings.seed ^ (d as u64) << 32, |rng| event(d, rng));
        hits as f64 >= (1.0 - settings.beta / 2.0) * settings.trials as f64
    })
}

/// Smallest `c₁` such that the covariance mask with
/// `η = 1/(c₁(√d + sqrt(ln(4/β))))` stays within spectral distance 1/100.
/// The distance is congruence invariant, so `Σ = I` suffices.
pub fn calibrate_c1(settings: &CalibrationSettings) -> Result<f64> {
    calibrate_constant(
        |c| {
            Ok(frequency_check(settings, |d, rng| {
                let eta = calibrate_concentration_eta(d, settings.beta, c, None);
                dist_to_identity(&mask_factor(d, eta, rng)) <= 0.01
            }))
        },
        1.0,
        1e6,
        1e-3,
    )
}

/// Robust variant: distance at most `α/√d` with
/// `η = α/(c(d + sqrt(d ln(4/β))))`.
pub fn calibrate_c1_robust(settings: &CalibrationSettings, alpha: f64) -> Result<f64> {
    calibrate_constant(
        |c| {
            Ok(frequency_check(settings, |d, rng| {
                let eta = calibrate_concentration_eta(d, settings.beta, c, Some(alpha));
                dist_to_identity(&mask_factor(d, eta, rng)) <= alpha / (d as f64).sqrt()
            }))
        },
        1e-3,
        1e6,
        1e-3,
    )
}

/// Smallest `c₂` such that the empirical second moment of
/// `c₂(d + ln(4/β))` Gaussian samples is within spectral distance 1/100.
pub fn calibrate_c2(settings: &CalibrationSettings) -> Result<f64> {
    calibrate_constant(
        |c| {
            Ok(frequency_check(settings, |d, rng| {
                let s = (c * (d as f64 + (4.0 / settings.beta).ln())).ceil() as usize;
                s >= d && dist_to_identity(&bartlett_normalized_wishart(d, s, rng)) <= 0.01
            }))
        },
        1.0,
        1e8,
        1e-3,
    )
}

/// Smallest `c` such that `c(d² + ln(4/β))/a²` samples give a second
/// moment within Frobenius distance `a` of the identity.
pub fn calibrate_c_frob(settings: &CalibrationSettings, accuracy: f64) -> Result<f64> {
    calibrate_constant(
        |c| {
            Ok(frequency_check(settings, |d, rng| {
                let s = (c * ((d * d) as f64 + (4.0 / settings.beta).ln()) / (accuracy * accuracy)).ceil() as usize;
                let w = bartlett_normalized_wishart(d, s.max(d), rng);
                (w - DMatrix::identity(d, d)).norm() <= accuracy
            }))
        },
        1e-3,
        1e4,
        1e-3,
    )
}

/// One calibrated constant with the settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub key: String,
    pub raw: f64,
    pub value: f64,
    pub settings: CalibrationSettings,
}

/// Calibrates `c1`, `c1_robust` (at α = 0.1), `c2` and `c_frob` (at
/// accuracy 0.1) and applies the safety factor.
pub fn calibrate_all(settings: &CalibrationSettings, base: Constants) -> Result<(Constants, Vec<CalibrationRecord>)> {
    let raws = [
        ("c1", calibrate_c1(settings)?),
        ("c1_robust", calibrate_c1_robust(settings, 0.1)?),
        ("c2", calibrate_c2(settings)?),
        ("c_frob", calibrate_c_frob(settings, 0.1)?),
    ];
    let mut consts = base;
    let mut records = vec![];
    for (key, raw) in raws {
        let value = raw * settings.safety;
        consts.set(key, value)?;
        records.push(CalibrationRecord {
            key: key.into(),
            raw,
            value,
            settings: settings.clone(),
        });
    }
    Ok((consts, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::IdentityMask;
    use crate::rng::stream;

    #[test]
    fn clopper_pearson_edges() {
        let i = clopper_pearson(0, 100, 0.95);
        assert_eq!(i.lower, 0.0);
        // (0.025)^(1/100) rule for zero successes.
        assert!((i.upper - (1.0 - 0.025_f64.powf(1.0 / 100.0))).abs() < 1e-9);
        let j = clopper_pearson(100, 100, 0.95);
        assert_eq!(j.upper, 1.0);
        assert!((j.lower - 0.025_f64.powf(1.0 / 100.0)).abs() < 1e-9);
        let k = clopper_pearson(30, 100, 0.95);
        assert!(k.lower < 0.3 && 0.3 < k.upper);
    }

    #[test]
    fn equal_models_have_no_tail() {
        let g = GaussianModel::standard(2);
        let r = privacy_loss_tail(&g, &g, 0.1, 1e-3, 0.0, 10_000, 1).unwrap();
        assert_eq!(r.tail_estimate.unwrap().estimate, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn singular_models_are_rejected() {
        let g = GaussianModel::new(DVector::zeros(2), PsdMatrix::from_diagonal(&[1.0, 0.0]).unwrap()).unwrap();
        let r = privacy_loss_tail(&g, &GaussianModel::standard(2), 1.0, 1e-3, 0.0, 10, 1);
        assert!(matches!(r, Err(Error::SingularCovariance(_))));
    }

    #[test]
    fn calibrate_trivial_checks() {
        assert_eq!(calibrate_constant(|_| Ok(true), 2.0, 10.0, 1e-3).unwrap(), 2.0);
        assert!(matches!(
            calibrate_constant(|_| Ok(false), 2.0, 10.0, 1e-3),
            Err(Error::CalibrationFailed(_))
        ));
        let c = calibrate_constant(|c| Ok(c >= 5.0), 1.0, 100.0, 1e-4).unwrap();
        assert!((5.0..5.001).contains(&c));
    }

    #[test]
    fn identity_mask_is_perfectly_concentrated() {
        let y = CandidatePoint::Vector(DVector::from_vec(vec![1.0, 2.0]));
        let r = concentration_certify(&IdentityMask, &SemimetricSpec::norm(1.0), &y, 1e-12, 0.0, 0.001, 1000, 3).unwrap();
        assert_eq!(r.tail_estimate.unwrap().estimate, 0.0);
    }

    #[test]
    fn constant_mechanism_has_no_privacy_loss() {
        let d = SampleSet::from_flat(1, vec![0.0]).unwrap();
        let d2 = SampleSet::from_flat(1, vec![1.0]).unwrap();
        let mech = |_: &SampleSet, _: &mut dyn RngCore| Ok(Some(vec![3.0]));
        let r = blackbox_eps_lower_bound(&mech, &d, &d2, 0.0, 0.0, 2000, 1).unwrap();
        assert!(r.eps_lower_bound.unwrap().lower_confidence <= 0.0);
        assert!(r.pass);
    }

    #[test]
    fn vectorized_law_matches_sampled_mask_factor() {
        let sigma = PsdMatrix::from_diagonal(&[2.0, 0.5]).unwrap();
        let eta = 0.3;
        let law = covariance_mask_vectorized_law(&sigma, eta).unwrap();
        let root = sigma.factor().sqrt.into_matrix();
        let mut rng = stream(8);
        let n = 200_000;
        let mut mean = DVector::zeros(4);
        let mut second = DMatrix::zeros(4, 4);
        for _ in 0..n {
            let g = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = &root * (DMatrix::identity(2, 2) + g * eta);
            let v = DVector::from_column_slice(b.as_slice());
            mean += &v;
            second += &v * v.transpose();
        }
        mean /= n as f64;
        let cov = second / n as f64 - &mean * mean.transpose();
        assert!((&mean - law.mean()).norm() < 0.01);
        assert!((cov - law.covariance().matrix()).norm() < 0.01);
    }

    #[test]
    fn bartlett_has_identity_mean() {
        let mut rng = stream(2);
        let n = 20_000;
        let mut acc = DMatrix::zeros(3, 3);
        for _ in 0..n {
            acc += bartlett_normalized_wishart(3, 10, &mut rng);
        }
        assert!((acc / n as f64 - DMatrix::identity(3, 3)).norm() < 0.03);
    }
}
