//! The private populous mean estimator.
//!
//! The dataset is split into `k` chunks and a non-private estimator runs on
//! each. Every chunk estimate `Yᵢ` is scored by the fraction `qᵢ` of
//! estimates within `r/t` of it; the mean score `Q` is released through a
//! truncated Laplace threshold test. When the test passes, the estimates are
//! averaged with weights `min(1, 10·max(0, qᵢ − 0.6))` and the average is
//! masked.
//!
//! For `k ≥ 140` and a `(400(r+φ)/k, ε, δ)`-masking mechanism the whole run
//! is `(2ε, 4e^ε δ)`-differentially private.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::SampleSet;
use crate::mechanisms::{sample_truncated_laplace, tlap_log_factor, MaskingMechanism, TruncatedLaplaceParams};
use crate::rng::{fork_seed, stream};
use crate::semimetric::{CandidatePoint, SemimetricKind, SemimetricSpec, SpdPoint};

/// Smallest number of chunks for which the privacy guarantee holds.
pub const MIN_CHUNKS: usize = 140;

/// A non-private estimator applied to one chunk.
pub type Estimator<'a> = dyn Fn(&SampleSet) -> Result<CandidatePoint> + Sync + 'a;

/// An `(ε, δ)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::ConfigError(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::ConfigError(format!("delta must lie in (0,1), got {delta}")));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }

    pub fn zero() -> Self {
        PrivacyBudget {
            epsilon: 0.0,
            delta: 0.0,
        }
    }

    /// Total guarantee `(2ε, 4e^ε δ)` of one reduction run at this setting.
    pub fn ppme_total(&self) -> PrivacyBudget {
        PrivacyBudget {
            epsilon: 2.0 * self.epsilon,
            delta: 4.0 * self.epsilon.exp() * self.delta,
        }
    }

    /// Inverse of [`PrivacyBudget::ppme_total`]: the per-run setting whose
    /// total guarantee is exactly `self`.
    pub fn ppme_setting_for_total(&self) -> PrivacyBudget {
        let epsilon = self.epsilon / 2.0;
        PrivacyBudget {
            epsilon,
            delta: self.delta / (4.0 * epsilon.exp()),
        }
    }

    /// Basic composition.
    pub fn add(&self, other: &PrivacyBudget) -> PrivacyBudget {
        PrivacyBudget {
            epsilon: self.epsilon + other.epsilon,
            delta: self.delta + other.delta,
        }
    }

    pub fn split(&self, parts: usize) -> PrivacyBudget {
        PrivacyBudget {
            epsilon: self.epsilon / parts as f64,
            delta: self.delta / parts as f64,
        }
    }
}

/// `(20/ε)·ln(1 + (e^ε − 1)/(2δ))`, the chunk count above which a run on
/// perfectly stable estimates never fails.
pub fn utility_min_chunks(epsilon: f64, delta: f64) -> f64 {
    20.0 / epsilon * tlap_log_factor(epsilon, delta)
}

/// `max(140, ⌈(20/ε)·ln(1 + (e^ε − 1)/(2δ))⌉)`.
pub fn default_chunks(epsilon: f64, delta: f64) -> usize {
    MIN_CHUNKS.max(utility_min_chunks(epsilon, delta).ceil() as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpmeConfig {
    pub k: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub space: SemimetricSpec,
    /// Randomly permute records before chunking.
    pub shuffle: bool,
}

impl PpmeConfig {
    pub fn new(k: usize, epsilon: f64, delta: f64, space: SemimetricSpec) -> Result<Self> {
        let cfg = PpmeConfig {
            k,
            epsilon,
            delta,
            space,
            shuffle: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn without_shuffle(mut self) -> Self {
        self.shuffle = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < MIN_CHUNKS {
            return Err(Error::ConfigError(format!(
                "k = {} is below the minimum of {MIN_CHUNKS} chunks required for privacy",
                self.k
            )));
        }
        PrivacyBudget::new(self.epsilon, self.delta)?;
        self.space.validate()
    }

    /// `0.8 + (2/(kε))·ln(1 + (e^ε − 1)/(2δ))`.
    pub fn threshold(&self) -> f64 {
        threshold_value(self.k, self.epsilon, self.delta)
    }

    pub fn noise(&self) -> TruncatedLaplaceParams {
        TruncatedLaplaceParams::new(2.0 / self.k as f64, self.epsilon, self.delta)
            .expect("validated config")
    }

    /// Whether the utility guarantee's chunk-count condition holds.
    pub fn meets_utility_condition(&self) -> bool {
        self.k as f64 >= utility_min_chunks(self.epsilon, self.delta)
    }

    pub fn privacy_total(&self) -> PrivacyBudget {
        PrivacyBudget {
            epsilon: self.epsilon,
            delta: self.delta,
        }
        .ppme_total()
    }

    /// Sensitivity `400(r+φ)/k` the masking mechanism must be calibrated for.
    pub fn required_mask_gamma(&self) -> f64 {
        400.0 * (self.space.r + self.space.phi) / self.k as f64
    }
}

pub fn threshold_value(k: usize, epsilon: f64, delta: f64) -> f64 {
    0.8 + 2.0 / (k as f64 * epsilon) * tlap_log_factor(epsilon, delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpmeDiagnostics {
    pub k: usize,
    pub chunk_size: usize,
    pub discarded: usize,
    pub q: Vec<f64>,
    #[serde(rename = "Q")]
    pub q_mean: f64,
    #[serde(rename = "Qhat")]
    pub q_hat: f64,
    pub threshold: f64,
    pub weights: Vec<f64>,
    pub weight_total: f64,
    pub failed_at_threshold: bool,
    /// `(2ε, 4e^ε δ)` for this run.
    pub privacy: PrivacyBudget,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PpmeResult {
    Fail,
    Output(CandidatePoint),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpmeOutcome {
    pub result: PpmeResult,
    pub diagnostics: PpmeDiagnostics,
}

impl PpmeOutcome {
    pub fn is_fail(&self) -> bool {
        matches!(self.result, PpmeResult::Fail)
    }

    pub fn point(&self) -> Option<&CandidatePoint> {
        match &self.result {
            PpmeResult::Output(p) => Some(p),
            PpmeResult::Fail => None,
        }
    }
}

/// `qᵢ = (1/k)·#{j : dist(Yᵢ, Yⱼ) ≤ r/t}`, with `j = i` always counted.
///
/// Metric instances are scored through a pivot index that decides most pairs
/// from triangle-inequality bounds and evaluates the distance only for pairs
/// the bounds cannot settle; the result equals [`compute_scores_exhaustive`].
pub fn compute_scores(candidates: &[CandidatePoint], space: &SemimetricSpec) -> Result<Vec<f64>> {
    match space.kind {
        SemimetricKind::SpectralCovariance => {
            let pts: Vec<Option<SpdPoint>> = candidates
                .iter()
                .map(|c| match c {
                    CandidatePoint::Matrix(m) => Ok(SpdPoint::new(m)),
                    _ => Err(Error::InvalidInput("spectral scoring expects matrices".into())),
                })
                .collect::<Result<_>>()?;
            // dist = e^ρ − 1 where ρ is the Thompson metric.
            let tau = space.ball_radius().ln_1p();
            Ok(pivot_scores(&pts, tau, |a, b| a.dist(b).ln_1p()))
        }
        SemimetricKind::Norm => {
            let flat: Vec<Option<Vec<f64>>> = candidates
                .iter()
                .map(|c| match c {
                    CandidatePoint::Vector(v) => Ok(Some(v.as_slice().to_vec())),
                    CandidatePoint::Matrix(m) => Ok(Some(m.matrix().as_slice().to_vec())),
                    CandidatePoint::Projector(_) => {
                        Err(Error::InvalidInput("norm scoring expects vectors or matrices".into()))
                    }
                })
                .collect::<Result<_>>()?;
            if let Some(Some(first)) = flat.first() {
                if flat.iter().any(|f| f.as_ref().map(Vec::len) != Some(first.len())) {
                    return Err(Error::InvalidInput("candidate shapes differ".into()));
                }
            }
            Ok(pivot_scores(&flat, space.ball_radius(), |a, b| {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            }))
        }
        SemimetricKind::ProjectorExact | SemimetricKind::VectorExact => {
            compute_scores_exhaustive(candidates, space)
        }
    }
}

/// Reference scoring by evaluating all `k²` distances.
pub fn compute_scores_exhaustive(candidates: &[CandidatePoint], space: &SemimetricSpec) -> Result<Vec<f64>> {
    let k = candidates.len();
    let radius = space.ball_radius();
    let mut counts = vec![1usize; k];
    for i in 0..k {
        for j in (i + 1)..k {
            if space.distance(&candidates[i], &candidates[j])? <= radius {
                counts[i] += 1;
                counts[j] += 1;
            }
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / k as f64).collect())
}

/// Pivots of each kind (far-apart and inner) used for distance bounds.
const SPREAD_PIVOTS: usize = 8;

/// Ball counting in a metric space, with points where the metric is
/// undefined (`None`) at infinite distance from everything.
///
/// Distances to a few pivots bound every pair through the triangle
/// inequality: `|d(i,p) − d(j,p)| > τ` rules a pair out and
/// `d(i,p) + d(j,p) ≤ τ` rules it in. Only pairs no pivot settles are
/// measured.
fn pivot_scores<P, F>(points: &[Option<P>], tau: f64, metric: F) -> Vec<f64>
where
    F: Fn(&P, &P) -> f64,
{
    let k = points.len();
    let valid: Vec<usize> = (0..k).filter(|&i| points[i].is_some()).collect();
    if valid.is_empty() {
        return vec![1.0 / k as f64; k];
    }
    let column = |p: usize| -> Vec<f64> {
        let pivot = points[p].as_ref().unwrap();
        points
            .iter()
            .map(|q| q.as_ref().map_or(f64::INFINITY, |q| metric(q, pivot)))
            .collect()
    };

    // Farthest-first pivots, then the point nearest to all of them.
    let mut pivots = vec![valid[0]];
    let mut table = vec![column(valid[0])];
    let mut nearest: Vec<f64> = table[0].clone();
    while pivots.len() < SPREAD_PIVOTS.min(valid.len()) {
        let &next = valid.iter().max_by(|&&a, &&b| nearest[a].total_cmp(&nearest[b])).unwrap();
        if nearest[next] <= 0.0 {
            break;
        }
        let col = column(next);
        for (n, c) in nearest.iter_mut().zip(&col) {
            *n = n.min(*c);
        }
        pivots.push(next);
        table.push(col);
    }
    let &centre = valid
        .iter()
        .min_by(|&&a, &&b| {
            let sa: f64 = table.iter().map(|c| c[a]).sum();
            let sb: f64 = table.iter().map(|c| c[b]).sum();
            sa.total_cmp(&sb)
        })
        .unwrap();
    let primary = column(centre);
    table.push(primary.clone());

    let mut order = valid.clone();
    order.sort_by(|&a, &b| primary[a].total_cmp(&primary[b]));
    // Pivots inside the bulk tighten the in-ball bound for nearby pairs.
    for q in 1..=SPREAD_PIVOTS {
        let p = order[(q * order.len() / (2 * SPREAD_PIVOTS + 1)).min(order.len() - 1)];
        if p != centre && !pivots.contains(&p) {
            pivots.push(p);
            table.push(column(p));
        }
    }
    let sorted: Vec<f64> = order.iter().map(|&i| primary[i]).collect();
    let spread = sorted.last().copied().unwrap_or(0.0);
    let margin = 1e-9 * (1.0 + tau + spread);
    // Row-major copy of the pivot distances for the inner loop.
    let np = table.len();
    let mut rows = vec![0.0; k * np];
    for (p, col) in table.iter().enumerate() {
        for i in 0..k {
            rows[i * np + p] = col[i];
        }
    }

    let mut scores = vec![1.0 / k as f64; k];
    for &i in &order {
        let a = primary[i];
        // Points outside [a − τ, a + τ] are farther than τ from i.
        let lo = sorted.partition_point(|&x| x < a - tau - margin);
        let hi = sorted.partition_point(|&x| x <= a + tau + margin);
        // Points with a + b ≤ τ are within τ of i.
        let certified = sorted.partition_point(|&x| x <= tau - margin - a).clamp(lo, hi);
        let mut count = certified - lo;
        let ri = &rows[i * np..(i + 1) * np];
        let pi = points[i].as_ref().unwrap();
        for &j in &order[certified..hi] {
            if j == i {
                count += 1;
                continue;
            }
            let rj = &rows[j * np..(j + 1) * np];
            let (mut lower, mut upper) = (0.0_f64, f64::INFINITY);
            for (x, y) in ri.iter().zip(rj) {
                lower = lower.max((x - y).abs());
                upper = upper.min(x + y);
            }
            if lower > tau + margin {
                continue;
            }
            if upper <= tau - margin || metric(pi, points[j].as_ref().unwrap()) <= tau {
                count += 1;
            }
        }
        scores[i] = count as f64 / k as f64;
    }
    scores
}

/// `wᵢ = min(1, 10·max(0, qᵢ − 0.6))`.
pub fn compute_weights(q: &[f64]) -> Vec<f64> {
    // 10q − 6 rounds exactly at q = 0.7 where 10(q − 0.6) does not.
    q.iter().map(|&qi| (10.0 * qi - 6.0).clamp(0.0, 1.0)).collect()
}

/// Adds `TLap(2/k, ε, δ)` noise to `Q` and compares with the threshold.
pub fn threshold_test(q_mean: f64, cfg: &PpmeConfig, rng: &mut dyn RngCore) -> (bool, f64) {
    let q_hat = q_mean + sample_truncated_laplace(&cfg.noise(), rng);
    (q_hat >= cfg.threshold(), q_hat)
}

fn chunk_estimates(dataset: &SampleSet, estimator: &Estimator<'_>, k: usize) -> Result<Vec<CandidatePoint>> {
    let s = dataset.len() / k;
    (0..k)
        .map(|i| estimator(&dataset.slice(i * s, (i + 1) * s)))
        .collect()
}

fn check_size(dataset: &SampleSet, k: usize) -> Result<()> {
    if dataset.len() < k {
        return Err(Error::InsufficientData {
            have: dataset.len(),
            required: k as u64,
        });
    }
    Ok(())
}

/// Runs the reduction.
pub fn ppme_run(
    dataset: &SampleSet,
    estimator: &Estimator<'_>,
    mask: &dyn MaskingMechanism,
    cfg: &PpmeConfig,
    rng: &mut dyn RngCore,
) -> Result<PpmeOutcome> {
    cfg.validate()?;
    check_size(dataset, cfg.k)?;
    let needed = cfg.required_mask_gamma();
    if mask.gamma() < needed * (1.0 - 1e-12) {
        return Err(Error::ConfigError(format!(
            "{} mask is calibrated for sensitivity {:e} but k = {} needs {:e}",
            mask.name(),
            mask.gamma(),
            cfg.k,
            needed
        )));
    }

    let shuffle_seed = fork_seed(rng);
    let shuffled;
    let data = if cfg.shuffle {
        let mut copy = dataset.clone();
        copy.shuffle(&mut stream(shuffle_seed));
        shuffled = copy;
        &shuffled
    } else {
        dataset
    };

    let k = cfg.k;
    let chunk_size = data.len() / k;
    let candidates = chunk_estimates(data, estimator, k)?;
    let q = compute_scores(&candidates, &cfg.space)?;
    let q_mean = q.iter().sum::<f64>() / k as f64;
    let (pass, q_hat) = threshold_test(q_mean, cfg, rng);
    let weights = if pass { compute_weights(&q) } else { vec![0.0; k] };
    let weight_total = weights.iter().sum();
    let diagnostics = PpmeDiagnostics {
        k,
        chunk_size,
        discarded: data.len() - chunk_size * k,
        q,
        q_mean,
        q_hat,
        threshold: cfg.threshold(),
        weights,
        weight_total,
        failed_at_threshold: !pass,
        privacy: cfg.privacy_total(),
    };
    if !pass {
        return Ok(PpmeOutcome {
            result: PpmeResult::Fail,
            diagnostics,
        });
    }

    // Positively weighted candidates are pairwise within 2r once the test
    // passes; an infinite distance here means the space is misconfigured.
    let best = (0..k)
        .max_by(|&a, &b| diagnostics.q[a].total_cmp(&diagnostics.q[b]))
        .expect("k > 0");
    for (i, &w) in diagnostics.weights.iter().enumerate() {
        if w > 0.0 && !cfg.space.distance(&candidates[i], &candidates[best])?.is_finite() {
            return Err(Error::InvalidInput(format!(
                "weighted core contains candidates {i} and {best} at infinite distance"
            )));
        }
    }
    let average = cfg.space.combine(&candidates, &diagnostics.weights)?;
    let masked = mask.mask(&average, rng)?;
    Ok(PpmeOutcome {
        result: PpmeResult::Output(masked),
        diagnostics,
    })
}

/// The score statistic `Q` of a run without shuffling.
pub fn score_statistic(dataset: &SampleSet, estimator: &Estimator<'_>, cfg: &PpmeConfig) -> Result<f64> {
    check_size(dataset, cfg.k)?;
    let candidates = chunk_estimates(dataset, estimator, cfg.k)?;
    let q = compute_scores(&candidates, &cfg.space)?;
    Ok(q.iter().sum::<f64>() / cfg.k as f64)
}

/// `|Q(D) − Q(D′)|` where `D′` replaces record `index` of `D`.
pub fn q_sensitivity_probe(
    dataset: &SampleSet,
    estimator: &Estimator<'_>,
    cfg: &PpmeConfig,
    index: usize,
    replacement: &[f64],
) -> Result<f64> {
    if index >= dataset.len() || replacement.len() != dataset.dim() {
        return Err(Error::InvalidInput(format!(
            "cannot replace record {index} of {} with a length-{} row",
            dataset.len(),
            replacement.len()
        )));
    }
    let mut neighbour = dataset.clone();
    neighbour.set_row(index, replacement);
    let a = score_statistic(dataset, estimator, cfg)?;
    let b = score_statistic(&neighbour, estimator, cfg)?;
    Ok((a - b).abs())
}
