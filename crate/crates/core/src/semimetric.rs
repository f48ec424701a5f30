//! Convex semimetric spaces used by the reduction.
//!
//! A space is a distance on candidate points together with the constants
//! `(t, r, φ)`: distances up to `r/t` obey a `t`-approximate triangle
//! inequality, and weighted averages move by at most
//! `Σ|αᵢ − αᵢ'| · (φ + max pairwise distance)` when the weights change.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{psd_factor, symmetrize, sym_eigenvalues, PsdMatrix};

/// Tolerance for projector validity and exact equality of projectors.
pub const PROJECTOR_TOL: f64 = 1e-8;
/// Tolerance for exact equality of vectors in the 0/∞ vector space.
pub const VECTOR_EQ_TOL: f64 = 1e-8;

/// A point of a candidate space.
#[derive(Clone, Debug, PartialEq)]
pub enum CandidatePoint {
    Vector(DVector<f64>),
    Matrix(PsdMatrix),
    Projector(DMatrix<f64>),
}

impl CandidatePoint {
    /// Validates and wraps an orthogonal projector.
    pub fn projector(p: DMatrix<f64>) -> Result<Self> {
        check_projector(&p)?;
        Ok(CandidatePoint::Projector(symmetrize(&p)))
    }

    fn variant(&self) -> &'static str {
        match self {
            CandidatePoint::Vector(_) => "vector",
            CandidatePoint::Matrix(_) => "matrix",
            CandidatePoint::Projector(_) => "projector",
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            CandidatePoint::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&PsdMatrix> {
        match self {
            CandidatePoint::Matrix(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_projector(&self) -> Option<&DMatrix<f64>> {
        match self {
            CandidatePoint::Projector(p) => Some(p),
            _ => None,
        }
    }
}

pub fn check_projector(p: &DMatrix<f64>) -> Result<()> {
    if !p.is_square() {
        return Err(Error::InvalidInput("projector must be square".into()));
    }
    let scale = p.norm().max(1.0);
    let asym = (p - p.transpose()).norm();
    let idem = (p * p - p).norm();
    if asym > PROJECTOR_TOL * scale || idem > PROJECTOR_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "not an orthogonal projector (asymmetry {asym:e}, idempotency defect {idem:e})"
        )));
    }
    Ok(())
}

/// The distance functions provided by the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SemimetricKind {
    /// Relative spectral deviation between positive definite matrices.
    SpectralCovariance,
    /// Euclidean norm on vectors, Frobenius norm on matrices.
    Norm,
    /// 0 for equal orthogonal projectors, ∞ otherwise.
    ProjectorExact,
    /// 0 for (numerically) equal vectors, ∞ otherwise.
    VectorExact,
}

/// A convex semimetric space with its certified constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemimetricSpec {
    pub kind: SemimetricKind,
    pub t: f64,
    pub r: f64,
    pub phi: f64,
}

impl SemimetricSpec {
    /// Spectral covariance semimetric: `t = 3/2`, `r = 1`, `φ = 1`.
    pub fn spectral_covariance() -> Self {
        SemimetricSpec {
            kind: SemimetricKind::SpectralCovariance,
            t: 1.5,
            r: 1.0,
            phi: 1.0,
        }
    }

    /// Norm metric with a finite scoring radius (`t = 1`, `φ = 0`).
    pub fn norm(radius: f64) -> Self {
        SemimetricSpec {
            kind: SemimetricKind::Norm,
            t: 1.0,
            r: radius,
            phi: 0.0,
        }
    }

    /// Exact projector space; its constants never influence scoring.
    pub fn projector_exact() -> Self {
        SemimetricSpec {
            kind: SemimetricKind::ProjectorExact,
            t: 1.0,
            r: 1.0,
            phi: 1.0,
        }
    }

    pub fn vector_exact() -> Self {
        SemimetricSpec {
            kind: SemimetricKind::VectorExact,
            t: 1.0,
            r: 1.0,
            phi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t >= 1.0) || !(self.r > 0.0) || !(self.phi >= 0.0) {
            return Err(Error::ConfigError(format!(
                "semimetric constants need t >= 1, r > 0, phi >= 0; got t={}, r={}, phi={}",
                self.t, self.r, self.phi
            )));
        }
        Ok(())
    }

    /// Radius of the scoring ball, `r / t`.
    pub fn ball_radius(&self) -> f64 {
        self.r / self.t
    }

    pub fn distance(&self, a: &CandidatePoint, b: &CandidatePoint) -> Result<f64> {
        use CandidatePoint as C;
        match (self.kind, a, b) {
            (SemimetricKind::SpectralCovariance, C::Matrix(x), C::Matrix(y)) => {
                spectral_cov_dist(x, y)
            }
            (SemimetricKind::Norm, C::Vector(x), C::Vector(y)) => {
                norm_dist(x.as_slice(), y.as_slice())
            }
            (SemimetricKind::Norm, C::Matrix(x), C::Matrix(y)) => {
                frobenius_dist(x.matrix(), y.matrix())
            }
            (SemimetricKind::ProjectorExact, C::Projector(x), C::Projector(y)) => {
                projector_exact_dist(x, y)
            }
            (SemimetricKind::VectorExact, C::Vector(x), C::Vector(y)) => vector_exact_dist(x, y),
            (kind, a, b) => Err(Error::InvalidInput(format!(
                "{kind:?} is not defined between {} and {} points",
                a.variant(),
                b.variant()
            ))),
        }
    }

    pub fn combine(&self, points: &[CandidatePoint], weights: &[f64]) -> Result<CandidatePoint> {
        weighted_combine(points, weights)
    }
}

/// `max(‖B^{-1/2}AB^{-1/2} − I‖, ‖A^{-1/2}BA^{-1/2} − I‖)` for full-rank
/// inputs, `+∞` otherwise.
pub fn spectral_cov_dist(a: &PsdMatrix, b: &PsdMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimensions {} and {} differ",
            a.dim(),
            b.dim()
        )));
    }
    match (SpdPoint::new(a), SpdPoint::new(b)) {
        (Some(x), Some(y)) => Ok(x.dist(&y)),
        _ => Ok(f64::INFINITY),
    }
}

/// A positive definite matrix with its inverse square root cached, for
/// repeated spectral distance evaluations.
#[derive(Clone, Debug)]
pub(crate) struct SpdPoint {
    mat: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl SpdPoint {
    pub(crate) fn new(m: &PsdMatrix) -> Option<Self> {
        let f = psd_factor(m);
        f.inv_sqrt.map(|w| SpdPoint {
            mat: m.matrix().clone(),
            inv_sqrt: w.into_matrix(),
        })
    }

    /// `B^{-1/2}AB^{-1/2}` has eigenvalues `1/λ` for the eigenvalues `λ` of
    /// `A^{-1/2}BA^{-1/2}`, so one eigendecomposition gives both sides.
    pub(crate) fn dist(&self, other: &SpdPoint) -> f64 {
        let w = &other.inv_sqrt;
        let eig = sym_eigenvalues(&(w * &self.mat * w));
        let (lo, hi) = (eig[0], eig[eig.len() - 1]);
        if !(lo > 0.0) {
            return f64::INFINITY;
        }
        (hi - 1.0).max(1.0 / lo - 1.0).max(1.0 - lo).max(1.0 - 1.0 / hi)
    }
}

/// Euclidean distance between equal-length vectors.
pub fn norm_dist(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "lengths {} and {} differ",
            u.len(),
            v.len()
        )));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Frobenius distance, i.e. the Euclidean distance of the vectorizations.
pub fn frobenius_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidInput(format!(
            "shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    norm_dist(a.as_slice(), b.as_slice())
}

/// 0 if the projectors coincide within tolerance, `+∞` otherwise.
pub fn projector_exact_dist(p1: &DMatrix<f64>, p2: &DMatrix<f64>) -> Result<f64> {
    check_projector(p1)?;
    check_projector(p2)?;
    if p1.shape() != p2.shape() {
        return Err(Error::InvalidInput("projector shapes differ".into()));
    }
    Ok(if (p1 - p2).norm() <= PROJECTOR_TOL {
        0.0
    } else {
        f64::INFINITY
    })
}

pub fn vector_exact_dist(u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let d = norm_dist(u.as_slice(), v.as_slice())?;
    Ok(if d <= VECTOR_EQ_TOL { 0.0 } else { f64::INFINITY })
}

/// Convex combination with normalized weights.
///
/// Projectors can only be combined when every positively weighted point is
/// the same projector.
pub fn weighted_combine(points: &[CandidatePoint], weights: &[f64]) -> Result<CandidatePoint> {
    if points.len() != weights.len() || points.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyCore);
    }
    let first = &points[0];
    if points.iter().any(|p| p.variant() != first.variant()) {
        return Err(Error::InvalidInput("mixed candidate variants".into()));
    }
    let active = || {
        points
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(p, &w)| (p, w / total))
    };
    match first {
        CandidatePoint::Vector(v0) => {
            let mut acc = DVector::zeros(v0.len());
            for (p, w) in active() {
                let v = p.as_vector().expect("variant checked");
                if v.len() != v0.len() {
                    return Err(Error::InvalidInput("vector lengths differ".into()));
                }
                acc += v * w;
            }
            Ok(CandidatePoint::Vector(acc))
        }
        CandidatePoint::Matrix(m0) => {
            let d = m0.dim();
            let mut acc = DMatrix::zeros(d, d);
            for (p, w) in active() {
                let m = p.as_matrix().expect("variant checked");
                if m.dim() != d {
                    return Err(Error::InvalidInput("matrix dimensions differ".into()));
                }
                acc += m.matrix() * w;
            }
            Ok(CandidatePoint::Matrix(PsdMatrix::from_gram(acc)))
        }
        CandidatePoint::Projector(_) => {
            let mut chosen: Option<&DMatrix<f64>> = None;
            for (p, _) in active() {
                let q = p.as_projector().expect("variant checked");
                match chosen {
                    None => chosen = Some(q),
                    Some(c) => {
                        if c.shape() != q.shape() || (c - q).norm() > PROJECTOR_TOL {
                            return Err(Error::InvalidInput(
                                "cannot combine distinct projectors".into(),
                            ));
                        }
                    }
                }
            }
            Ok(CandidatePoint::Projector(chosen.expect("total > 0").clone()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> PsdMatrix {
        PsdMatrix::from_diagonal(v).unwrap()
    }

    #[test]
    fn spectral_examples() {
        let i3 = PsdMatrix::identity(3);
        assert!(spectral_cov_dist(&i3, &i3).unwrap().abs() < 1e-12);
        let two = i3.scale(2.0);
        assert!((spectral_cov_dist(&two, &i3).unwrap() - 1.0).abs() < 1e-12);
        let d = spectral_cov_dist(&diag(&[1.0, 4.0]), &diag(&[1.0, 1.0])).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
        let inf = spectral_cov_dist(&diag(&[1.0, 0.0]), &PsdMatrix::identity(2)).unwrap();
        assert_eq!(inf, f64::INFINITY);
        assert!(spectral_cov_dist(&i3, &PsdMatrix::identity(2)).is_err());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm_dist(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(norm_dist(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let f = frobenius_dist(&DMatrix::identity(2, 2), &DMatrix::zeros(2, 2)).unwrap();
        assert!((f - 2.0_f64.sqrt()).abs() < 1e-15);
        assert!(norm_dist(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn projector_examples() {
        let p = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 0.0]));
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.0, 1.0]));
        assert_eq!(projector_exact_dist(&p, &p).unwrap(), 0.0);
        assert_eq!(projector_exact_dist(&p, &q).unwrap(), f64::INFINITY);
        let mut nudged = p.clone();
        nudged[(0, 1)] += 1e-12;
        let nudged = symmetrize(&nudged);
        assert_eq!(projector_exact_dist(&p, &nudged).unwrap(), 0.0);
        let not_proj = DMatrix::identity(2, 2) * 2.0;
        assert!(projector_exact_dist(&p, &not_proj).is_err());
    }

    #[test]
    fn combine_examples() {
        let v = CandidatePoint::Vector(DVector::from_row_slice(&[1.0, 2.0]));
        assert_eq!(weighted_combine(std::slice::from_ref(&v), &[1.0]).unwrap(), v);
        let a = CandidatePoint::Vector(DVector::zeros(2));
        let b = CandidatePoint::Vector(DVector::from_row_slice(&[2.0, 0.0]));
        let mid = weighted_combine(&[a, b], &[0.5, 0.5]).unwrap();
        assert_eq!(mid.as_vector().unwrap().as_slice(), &[1.0, 0.0]);
        let i = CandidatePoint::Matrix(PsdMatrix::identity(2));
        let three = CandidatePoint::Matrix(PsdMatrix::identity(2).scale(3.0));
        let m = weighted_combine(&[i.clone(), three], &[0.5, 0.5]).unwrap();
        assert!((m.as_matrix().unwrap().matrix() - DMatrix::identity(2, 2) * 2.0).norm() < 1e-15);
        assert_eq!(weighted_combine(std::slice::from_ref(&i), &[0.0]), Err(Error::EmptyCore));
        let mixed = weighted_combine(&[i, v], &[0.5, 0.5]);
        assert!(matches!(mixed, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn combine_projectors() {
        let p = CandidatePoint::projector(DMatrix::from_diagonal(&DVector::from_row_slice(&[
            1.0, 0.0,
        ])))
        .unwrap();
        let q = CandidatePoint::projector(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(weighted_combine(&[p.clone(), p.clone()], &[0.3, 0.7]).unwrap(), p);
        // Zero-weight points are ignored.
        assert_eq!(weighted_combine(&[p.clone(), q.clone()], &[1.0, 0.0]).unwrap(), p);
        assert!(weighted_combine(&[p, q], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn spec_distance_rejects_wrong_variant() {
        let s = SemimetricSpec::spectral_covariance();
        let v = CandidatePoint::Vector(DVector::zeros(2));
        assert!(s.distance(&v, &v).is_err());
    }
}
