//! Noise primitives: truncated Laplace thresholding and masking mechanisms.
//!
//! A masking mechanism `B` for a semimetric space is `(γ, ε, δ)`-masking when
//! `B(Y)` and `B(Y')` are `(ε, δ)`-indistinguishable whenever
//! `dist(Y, Y') ≤ γ`, and `(α, β)`-concentrated when
//! `P[dist(B(Y), Y) > α] ≤ β`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{psd_factor, symmetrize, PsdMatrix};
use crate::semimetric::CandidatePoint;

fn check_privacy_params(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::ConfigError(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::ConfigError(format!("delta must lie in (0,1), got {delta}")));
    }
    Ok(())
}

/// `ln(1 + (e^ε − 1)/(2δ))`, the log factor shared by the truncated Laplace
/// support and the reduction's threshold.
pub fn tlap_log_factor(epsilon: f64, delta: f64) -> f64 {
    if epsilon <= 1.0 {
        (epsilon.exp_m1() / (2.0 * delta)).ln_1p()
    } else {
        // ε + ln(e^{−ε} + (1 − e^{−ε})/(2δ)) avoids overflow for large ε.
        let u = (-epsilon).exp();
        epsilon + (u + (1.0 - u) / (2.0 * delta)).ln()
    }
}

/// Parameters of `TLap(Δ, ε, δ)`: density `B·e^{−|x|/λ}` on `[−A, A]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedLaplaceParams {
    pub sensitivity: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl TruncatedLaplaceParams {
    pub fn new(sensitivity: f64, epsilon: f64, delta: f64) -> Result<Self> {
        check_privacy_params(epsilon, delta)?;
        if !(sensitivity > 0.0) || !sensitivity.is_finite() {
            return Err(Error::ConfigError(format!(
                "sensitivity must be positive, got {sensitivity}"
            )));
        }
        Ok(TruncatedLaplaceParams {
            sensitivity,
            epsilon,
            delta,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.sensitivity / self.epsilon
    }

    /// Half-width of the support.
    pub fn bound(&self) -> f64 {
        self.lambda() * tlap_log_factor(self.epsilon, self.delta)
    }

    /// Normalizing constant `B = 1 / (2λ(1 − e^{−A/λ}))`.
    pub fn normalizer(&self) -> f64 {
        1.0 / (2.0 * self.lambda() * self.mass_fraction())
    }

    /// `1 − e^{−A/λ}`.
    fn mass_fraction(&self) -> f64 {
        -(-self.bound() / self.lambda()).exp_m1()
    }

    pub fn density(&self, x: f64) -> f64 {
        if x.abs() > self.bound() {
            0.0
        } else {
            self.normalizer() * (-x.abs() / self.lambda()).exp()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let a = self.bound();
        let lambda = self.lambda();
        if x <= -a {
            return 0.0;
        }
        if x >= a {
            return 1.0;
        }
        let tail = (-a / lambda).exp();
        let scale = 0.5 / self.mass_fraction();
        if x < 0.0 {
            scale * ((x / lambda).exp() - tail)
        } else {
            1.0 - scale * ((-x / lambda).exp() - tail)
        }
    }

    /// Inverse CDF, one branch per sign.
    pub fn quantile(&self, u: f64) -> f64 {
        let a = self.bound();
        let lambda = self.lambda();
        let tail = (-a / lambda).exp();
        let mass = self.mass_fraction();
        let x = if u < 0.5 {
            lambda * (2.0 * u * mass + tail).ln()
        } else {
            -lambda * (2.0 * (1.0 - u) * mass + tail).ln()
        };
        x.clamp(-a, a)
    }
}

pub fn sample_truncated_laplace(p: &TruncatedLaplaceParams, rng: &mut dyn RngCore) -> f64 {
    let u: f64 = rng.random();
    p.quantile(u)
}

/// Calibration record of a masking mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingCalibration {
    pub gamma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub conc_alpha: f64,
    pub conc_beta: f64,
}

/// Noise multiplier of the Gaussian mask, `max(2 ln(1.25/δ), sqrt(2 ln(1.25/δ)))`.
fn gaussian_noise_factor(delta: f64) -> f64 {
    let l = (1.25 / delta).ln();
    (2.0 * l).max((2.0 * l).sqrt())
}

/// Noise scale `η` making the Gaussian mask `(γ, ε, δ)`-masking.
pub fn gaussian_mask_eta(gamma: f64, epsilon: f64, delta: f64) -> f64 {
    gamma * gaussian_noise_factor(delta) / epsilon
}

/// Largest `γ` certified for a Gaussian mask of scale `η`.
pub fn gaussian_mask_gamma(eta: f64, epsilon: f64, delta: f64) -> f64 {
    eta * epsilon / gaussian_noise_factor(delta)
}

/// Radius `η·sqrt(2d·ln(2/β))` holding with probability `1 − β/2`.
pub fn gaussian_concentration_radius(eta: f64, dim: usize, beta: f64) -> f64 {
    eta * (2.0 * dim as f64 * (2.0 / beta).ln()).sqrt()
}

impl MaskingCalibration {
    /// Gaussian mask calibrated for sensitivity `γ`, with its concentration
    /// radius in dimension `dim` at failure probability `β`.
    pub fn gaussian(gamma: f64, epsilon: f64, delta: f64, dim: usize, beta: f64) -> Result<Self> {
        check_privacy_params(epsilon, delta)?;
        let eta = gaussian_mask_eta(gamma, epsilon, delta);
        Ok(MaskingCalibration {
            gamma,
            epsilon,
            delta,
            eta,
            conc_alpha: gaussian_concentration_radius(eta, dim, beta),
            conc_beta: beta / 2.0,
        })
    }

    /// Gaussian mask of scale `η`, certified for the largest admissible `γ`.
    pub fn gaussian_from_eta(eta: f64, epsilon: f64, delta: f64, dim: usize, beta: f64) -> Result<Self> {
        check_privacy_params(epsilon, delta)?;
        if !(eta > 0.0) {
            return Err(Error::ConfigError(format!("eta must be positive, got {eta}")));
        }
        Ok(MaskingCalibration {
            gamma: gaussian_mask_gamma(eta, epsilon, delta),
            epsilon,
            delta,
            eta,
            conc_alpha: gaussian_concentration_radius(eta, dim, beta),
            conc_beta: beta / 2.0,
        })
    }
}

/// `y + η·g` with `g` standard normal.
pub fn gaussian_mask(y: &DVector<f64>, cal: &MaskingCalibration, rng: &mut dyn RngCore) -> DVector<f64> {
    y.map(|v| v + cal.eta * rng.sample::<f64, _>(StandardNormal))
}

/// `Σ^{1/2}(I + ηG)(I + ηG)ᵀΣ^{1/2}` with the symmetric square root.
pub fn covariance_mask(s: &PsdMatrix, eta: f64, rng: &mut dyn RngCore) -> Result<PsdMatrix> {
    let f = psd_factor(s);
    if f.rank < s.dim() {
        return Err(Error::SingularCovariance(format!(
            "covariance mask needs a positive definite input, rank is {} < {}",
            f.rank,
            s.dim()
        )));
    }
    let d = s.dim();
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noisy = DMatrix::identity(d, d) + g * eta;
    let root = f.sqrt.matrix();
    let half = root * noisy;
    Ok(PsdMatrix::from_gram(&half * half.transpose()))
}

/// Largest `γ` for which the covariance mask with scale `η` is
/// `(γ, ε, δ)`-masking in dimension `d`.
pub fn covariance_mask_gamma(eta: f64, epsilon: f64, delta: f64, d: usize) -> f64 {
    let d = d as f64;
    let log_term = (2.0 / delta).ln();
    let t1 = (epsilon / (2.0 * d * (d + 1.0 / (eta * eta)))).sqrt();
    let t2 = epsilon / (8.0 * d * log_term.sqrt());
    let t3 = epsilon / (8.0 * log_term);
    let t4 = epsilon * eta / (12.0 * d.sqrt() * log_term.sqrt());
    t1.min(t2).min(t3).min(t4)
}

/// Covariance-mask scale for concentration.
///
/// Without `robust_alpha`: `1/(c₁(√d + sqrt(ln(4/β))))`, concentrated at
/// `(1/100, β/2)` for large enough `c₁`. With it: `α/(c₁(d + sqrt(d ln(4/β))))`,
/// concentrated at `(α/√d, β/2)`.
pub fn calibrate_concentration_eta(d: usize, beta: f64, c1: f64, robust_alpha: Option<f64>) -> f64 {
    let d = d as f64;
    let l = (4.0 / beta).ln();
    match robust_alpha {
        None => 1.0 / (c1 * (d.sqrt() + l.sqrt())),
        Some(alpha) => alpha / (c1 * (d + (d * l).sqrt())),
    }
}

pub fn identity_mask(y: &CandidatePoint) -> CandidatePoint {
    y.clone()
}

/// A randomized map applied to the reduction's weighted average.
pub trait MaskingMechanism: Send + Sync {
    fn name(&self) -> &'static str;

    fn mask(&self, y: &CandidatePoint, rng: &mut dyn RngCore) -> Result<CandidatePoint>;

    /// Sensitivity `γ` the mechanism is calibrated for.
    fn gamma(&self) -> f64;

    fn calibration(&self) -> Option<MaskingCalibration> {
        None
    }
}

/// The identity, a masking mechanism for every `γ` on spaces whose finite
/// distances force equality.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityMask;

impl MaskingMechanism for IdentityMask {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn mask(&self, y: &CandidatePoint, _rng: &mut dyn RngCore) -> Result<CandidatePoint> {
        Ok(identity_mask(y))
    }

    fn gamma(&self) -> f64 {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GaussianMask {
    pub calibration: MaskingCalibration,
}

impl MaskingMechanism for GaussianMask {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn mask(&self, y: &CandidatePoint, rng: &mut dyn RngCore) -> Result<CandidatePoint> {
        match y {
            CandidatePoint::Vector(v) => {
                Ok(CandidatePoint::Vector(gaussian_mask(v, &self.calibration, rng)))
            }
            _ => Err(Error::InvalidInput("gaussian mask expects a vector".into())),
        }
    }

    fn gamma(&self) -> f64 {
        self.calibration.gamma
    }

    fn calibration(&self) -> Option<MaskingCalibration> {
        Some(self.calibration)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CovarianceMask {
    pub calibration: MaskingCalibration,
}

impl CovarianceMask {
    /// Mask with scale `eta`, certified at `γ = covariance_mask_gamma(η, ε, δ, d)`.
    pub fn new(eta: f64, epsilon: f64, delta: f64, d: usize, conc_alpha: f64, conc_beta: f64) -> Result<Self> {
        check_privacy_params(epsilon, delta)?;
        if !(eta > 0.0) {
            return Err(Error::ConfigError(format!("eta must be positive, got {eta}")));
        }
        Ok(CovarianceMask {
            calibration: MaskingCalibration {
                gamma: covariance_mask_gamma(eta, epsilon, delta, d),
                epsilon,
                delta,
                eta,
                conc_alpha,
                conc_beta,
            },
        })
    }
}

impl MaskingMechanism for CovarianceMask {
    fn name(&self) -> &'static str {
        "covariance"
    }

    fn mask(&self, y: &CandidatePoint, rng: &mut dyn RngCore) -> Result<CandidatePoint> {
        match y {
            CandidatePoint::Matrix(m) => Ok(CandidatePoint::Matrix(covariance_mask(
                m,
                self.calibration.eta,
                rng,
            )?)),
            _ => Err(Error::InvalidInput("covariance mask expects a matrix".into())),
        }
    }

    fn gamma(&self) -> f64 {
        self.calibration.gamma
    }

    fn calibration(&self) -> Option<MaskingCalibration> {
        Some(self.calibration)
    }
}

/// Gaussian mask on the vectorized matrix followed by symmetrization and
/// projection onto the PSD cone.
#[derive(Clone, Copy, Debug)]
pub struct FrobeniusGaussianMask {
    pub calibration: MaskingCalibration,
    /// Reject outputs whose PSD projection moves an eigenvalue further than this.
    pub max_projection_shift: Option<f64>,
}

impl FrobeniusGaussianMask {
    /// Returns the masked matrix and the largest eigenvalue shift caused by
    /// the PSD projection.
    pub fn mask_matrix(&self, m: &PsdMatrix, rng: &mut dyn RngCore) -> (PsdMatrix, f64) {
        let d = m.dim();
        let eta = self.calibration.eta;
        let noise = DMatrix::from_fn(d, d, |_, _| eta * rng.sample::<f64, _>(StandardNormal));
        let noisy = symmetrize(&(m.matrix() + noise));
        let eig = nalgebra::SymmetricEigen::new(noisy);
        let shift = eig
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, &l| acc.max((-l).max(0.0)));
        let clamped = eig.eigenvalues.map(|l| l.max(0.0));
        let v = &eig.eigenvectors;
        let out = v * DMatrix::from_diagonal(&clamped) * v.transpose();
        (PsdMatrix::from_gram(out), shift)
    }
}

impl MaskingMechanism for FrobeniusGaussianMask {
    fn name(&self) -> &'static str {
        "frobenius-gaussian"
    }

    fn mask(&self, y: &CandidatePoint, rng: &mut dyn RngCore) -> Result<CandidatePoint> {
        match y {
            CandidatePoint::Matrix(m) => {
                let (out, shift) = self.mask_matrix(m, rng);
                if let Some(limit) = self.max_projection_shift {
                    if shift > limit {
                        return Err(Error::RefinementUnstable { shift });
                    }
                }
                Ok(CandidatePoint::Matrix(out))
            }
            _ => Err(Error::InvalidInput("frobenius mask expects a matrix".into())),
        }
    }

    fn gamma(&self) -> f64 {
        self.calibration.gamma
    }

    fn calibration(&self) -> Option<MaskingCalibration> {
        Some(self.calibration)
    }
}
