//! Dense PSD linear algebra, Gaussian models, sampling and divergences.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-entry absolute tolerance for symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative tolerance for negative eigenvalues that are repaired to zero.
pub const NEGATIVE_EIG_TOL: f64 = 1e-9;
/// Eigenvalues below this fraction of the largest one count as zero.
pub const RANK_TOL: f64 = 1e-8;

/// A symmetric positive semi-definite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdMatrix(DMatrix<f64>);

impl PsdMatrix {
    /// Validates symmetry and numerical positive semi-definiteness.
    ///
    /// The stored matrix is the symmetrized input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let sym = symmetrize_checked(&m)?;
        let eig = sym.clone().symmetric_eigenvalues();
        let top = eig.iter().cloned().fold(0.0_f64, f64::max).max(1.0);
        if let Some(bad) = eig.iter().find(|&&l| l < -NEGATIVE_EIG_TOL * top) {
            return Err(Error::InvalidMatrix(format!(
                "eigenvalue {bad:e} is negative beyond tolerance"
            )));
        }
        if eig.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entries".into()));
        }
        Ok(PsdMatrix(sym))
    }

    /// Wraps a matrix that is PSD by construction (e.g. a Gram matrix),
    /// symmetrizing away rounding noise.
    pub(crate) fn from_gram(m: DMatrix<f64>) -> Self {
        PsdMatrix(symmetrize(&m))
    }

    pub fn identity(d: usize) -> Self {
        PsdMatrix(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        PsdMatrix(DMatrix::zeros(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        PsdMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, c: f64) -> PsdMatrix {
        assert!(c >= 0.0, "PSD matrices only scale by nonnegative factors");
        PsdMatrix(&self.0 * c)
    }

    /// Congruence `A M Aᵀ`, which preserves positive semi-definiteness.
    pub fn congruence(&self, a: &DMatrix<f64>) -> PsdMatrix {
        PsdMatrix::from_gram(a * &self.0 * a.transpose())
    }

    pub fn factor(&self) -> PsdFactor {
        psd_factor_with_tol(self, RANK_TOL)
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetrize_checked(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidMatrix(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > SYMMETRY_TOL || !gap.is_finite() {
                return Err(Error::InvalidMatrix(format!(
                    "entries ({i},{j}) and ({j},{i}) differ by {gap:e}"
                )));
            }
        }
    }
    Ok(symmetrize(m))
}

/// Square root, inverse square root (when nonsingular) and numerical rank.
#[derive(Clone, Debug)]
pub struct PsdFactor {
    pub sqrt: PsdMatrix,
    pub inv_sqrt: Option<PsdMatrix>,
    pub rank: usize,
    /// Eigenvalues after repair, ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors (columns) matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl PsdFactor {
    /// Orthonormal basis (d × rank) of the range, largest eigenvalues first.
    pub fn range_basis(&self) -> DMatrix<f64> {
        let d = self.eigenvalues.len();
        let cols: Vec<DVector<f64>> = (d - self.rank..d)
            .rev()
            .map(|j| self.eigenvectors.column(j).into_owned())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(d, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }

    /// Orthogonal projector onto the range.
    pub fn range_projector(&self) -> DMatrix<f64> {
        let u = self.range_basis();
        symmetrize(&(&u * u.transpose()))
    }

    pub fn log_det(&self) -> f64 {
        if self.rank < self.eigenvalues.len() {
            f64::NEG_INFINITY
        } else {
            self.eigenvalues.iter().map(|l| l.ln()).sum()
        }
    }
}

/// Factors `m` through a symmetric eigendecomposition.
pub fn psd_factor(m: &PsdMatrix) -> PsdFactor {
    psd_factor_with_tol(m, RANK_TOL)
}

pub fn psd_factor_with_tol(m: &PsdMatrix, rank_tol: f64) -> PsdFactor {
    let d = m.dim();
    if d == 0 {
        return PsdFactor {
            sqrt: PsdMatrix::zeros(0),
            inv_sqrt: Some(PsdMatrix::zeros(0)),
            rank: 0,
            eigenvalues: vec![],
            eigenvectors: DMatrix::zeros(0, 0),
        };
    }
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = SymmetricEigen::new(m.matrix().clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));
    let vals: Vec<f64> = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();
    let vecs = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    let top = vals[d - 1];
    let cutoff = rank_tol * top;
    let rank = if top > 0.0 {
        vals.iter().filter(|&&l| l > cutoff).count()
    } else {
        0
    };

    let spectral = |f: &dyn Fn(f64) -> f64| {
        let scaled = DVector::from_iterator(d, vals.iter().map(|&l| f(l)));
        symmetrize(&(&vecs * DMatrix::from_diagonal(&scaled) * vecs.transpose()))
    };
    let sqrt = PsdMatrix(spectral(&|l| if l > cutoff { l.sqrt() } else { 0.0 }));
    let inv_sqrt = (rank == d).then(|| PsdMatrix(spectral(&|l| 1.0 / l.sqrt())));
    PsdFactor {
        sqrt,
        inv_sqrt,
        rank,
        eigenvalues: vals,
        eigenvectors: vecs,
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Spectral norm of a symmetric matrix.
pub fn sym_operator_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .fold(0.0_f64, |acc, l| acc.max(l.abs()))
}

/// A Gaussian `N(mean, covariance)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    mean: DVector<f64>,
    covariance: PsdMatrix,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, covariance: PsdMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::InvalidInput(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                covariance.dim(),
                covariance.dim()
            )));
        }
        Ok(GaussianModel { mean, covariance })
    }

    pub fn standard(d: usize) -> Self {
        GaussianModel {
            mean: DVector::zeros(d),
            covariance: PsdMatrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &PsdMatrix {
        &self.covariance
    }
}

/// An ordered tuple of equal-length real vectors, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(SampleSet { dim, data })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(SampleSet { dim, data })
    }

    pub fn from_vectors(dim: usize, rows: &[DVector<f64>]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().cloned().collect()).collect();
        SampleSet::new(dim, &rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_vector(&self, i: usize) -> DVector<f64> {
        DVector::from_row_slice(self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Copy of rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> SampleSet {
        SampleSet {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    pub fn set_row(&mut self, i: usize, values: &[f64]) {
        assert_eq!(values.len(), self.dim);
        self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(values);
    }

    /// Applies a linear map `x ↦ A x` to every row.
    pub fn transform(&self, a: &DMatrix<f64>) -> SampleSet {
        assert_eq!(a.ncols(), self.dim);
        let out_dim = a.nrows();
        let mut data = Vec::with_capacity(self.len() * out_dim);
        for r in self.rows() {
            for i in 0..out_dim {
                let mut acc = 0.0;
                for (j, x) in r.iter().enumerate() {
                    acc += a[(i, j)] * x;
                }
                data.push(acc);
            }
        }
        SampleSet {
            dim: out_dim.max(1),
            data: if out_dim == 0 { vec![] } else { data },
        }
    }

    /// Permutes rows in place with a Fisher-Yates shuffle.
    pub fn shuffle(&mut self, rng: &mut dyn RngCore) {
        let n = self.len();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            if i != j {
                for c in 0..self.dim {
                    self.data.swap(i * self.dim + c, j * self.dim + c);
                }
            }
        }
    }
}

/// Draws `n` i.i.d. rows `μ + Σ^{1/2} g`.
pub fn sample_gaussian(model: &GaussianModel, n: usize, rng: &mut dyn RngCore) -> SampleSet {
    let d = model.dim();
    let root = model.covariance.factor().sqrt.into_matrix();
    let mut data = Vec::with_capacity(n * d);
    let mut g = DVector::zeros(d);
    for _ in 0..n {
        for gi in g.iter_mut() {
            *gi = rng.sample(StandardNormal);
        }
        let x = &model.mean + &root * &g;
        data.extend(x.iter());
    }
    SampleSet { dim: d, data }
}

fn require_nonsingular(f: &PsdFactor, which: &str) -> Result<()> {
    if f.rank < f.eigenvalues.len() {
        return Err(Error::SingularCovariance(format!(
            "{which} covariance has rank {} < {}",
            f.rank,
            f.eigenvalues.len()
        )));
    }
    Ok(())
}

fn check_same_dim(g1: &GaussianModel, g2: &GaussianModel) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(Error::InvalidInput(format!(
            "dimensions {} and {} differ",
            g1.dim(),
            g2.dim()
        )));
    }
    Ok(())
}

/// KL(g1 ‖ g2); +∞ when g1 is singular and g2 is not.
pub fn kl_gaussians(g1: &GaussianModel, g2: &GaussianModel) -> Result<f64> {
    check_same_dim(g1, g2)?;
    let f2 = g2.covariance.factor();
    require_nonsingular(&f2, "second")?;
    let f1 = g1.covariance.factor();
    if f1.rank < g1.dim() {
        return Ok(f64::INFINITY);
    }
    let d = g1.dim() as f64;
    let w = f2.inv_sqrt.as_ref().expect("nonsingular").matrix();
    // W Σ₁ W is similar to Σ₂⁻¹Σ₁.
    let whitened = symmetrize(&(w * g1.covariance.matrix() * w));
    let trace = whitened.trace();
    let diff = w * (&g2.mean - &g1.mean);
    let quad = diff.norm_squared();
    let log_det_ratio = f1.log_det() - f2.log_det();
    Ok((0.5 * (trace - d + quad - log_det_ratio)).max(0.0))
}

/// Pinsker bound on total variation, `min(1, sqrt(min KL / 2))`.
///
/// Rank-deficient models are compared inside their common support; models
/// with different supports are reported at distance 1.
pub fn tv_upper_bound(g1: &GaussianModel, g2: &GaussianModel) -> Result<f64> {
    check_same_dim(g1, g2)?;
    let d = g1.dim();
    let f1 = g1.covariance.factor();
    let f2 = g2.covariance.factor();
    if f1.rank == d && f2.rank == d {
        return Ok(pinsker(g1, g2));
    }
    if f1.rank != f2.rank {
        return Ok(1.0);
    }
    let p1 = f1.range_projector();
    let p2 = f2.range_projector();
    if (&p1 - &p2).norm() > 1e-8 {
        return Ok(1.0);
    }
    let shift = &g1.mean - &g2.mean;
    let off_support = &shift - &p1 * &shift;
    let scale = 1.0 + g1.mean.norm().max(g2.mean.norm());
    if off_support.norm() > 1e-8 * scale {
        return Ok(1.0);
    }
    if f1.rank == 0 {
        return Ok(0.0);
    }
    let u = f1.range_basis();
    let reduce = |g: &GaussianModel| {
        GaussianModel::new(
            u.transpose() * &g.mean,
            g.covariance.congruence(&u.transpose()),
        )
        .expect("dimensions agree")
    };
    Ok(pinsker(&reduce(g1), &reduce(g2)))
}

fn pinsker(g1: &GaussianModel, g2: &GaussianModel) -> f64 {
    let a = kl_gaussians(g1, g2).unwrap_or(f64::INFINITY);
    let b = kl_gaussians(g2, g1).unwrap_or(f64::INFINITY);
    let kl = a.min(b);
    if kl.is_finite() {
        (kl / 2.0).sqrt().min(1.0)
    } else {
        1.0
    }
}

/// Exact privacy-loss function `x ↦ ln f₁(x)/f₂(x)` for two nonsingular
/// Gaussians, with the factorizations computed once.
#[derive(Clone, Debug)]
pub struct LogDensityRatio {
    mean1: DVector<f64>,
    mean2: DVector<f64>,
    whiten1: DMatrix<f64>,
    whiten2: DMatrix<f64>,
    half_log_det_gap: f64,
}

impl LogDensityRatio {
    pub fn new(g1: &GaussianModel, g2: &GaussianModel) -> Result<Self> {
        check_same_dim(g1, g2)?;
        let f1 = g1.covariance.factor();
        let f2 = g2.covariance.factor();
        require_nonsingular(&f1, "first")?;
        require_nonsingular(&f2, "second")?;
        let half_log_det_gap = 0.5 * (f2.log_det() - f1.log_det());
        Ok(LogDensityRatio {
            mean1: g1.mean.clone(),
            mean2: g2.mean.clone(),
            whiten1: f1.inv_sqrt.expect("nonsingular").into_matrix(),
            whiten2: f2.inv_sqrt.expect("nonsingular").into_matrix(),
            half_log_det_gap,
        })
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let q1 = (&self.whiten1 * (x - &self.mean1)).norm_squared();
        let q2 = (&self.whiten2 * (x - &self.mean2)).norm_squared();
        self.half_log_det_gap + 0.5 * (q2 - q1)
    }
}

pub fn gaussian_log_density_ratio(
    g1: &GaussianModel,
    g2: &GaussianModel,
    x: &DVector<f64>,
) -> Result<f64> {
    if x.len() != g1.dim() {
        return Err(Error::InvalidInput(format!(
            "point has length {}, models have dimension {}",
            x.len(),
            g1.dim()
        )));
    }
    Ok(LogDensityRatio::new(g1, g2)?.eval(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn diag(v: &[f64]) -> PsdMatrix {
        PsdMatrix::from_diagonal(v).unwrap()
    }

    fn model(mean: &[f64], cov: PsdMatrix) -> GaussianModel {
        GaussianModel::new(DVector::from_row_slice(mean), cov).unwrap()
    }

    #[test]
    fn factor_identity() {
        let f = psd_factor(&PsdMatrix::identity(3));
        assert_eq!(f.rank, 3);
        assert!((f.sqrt.matrix() - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert!((f.inv_sqrt.unwrap().matrix() - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn factor_diagonal() {
        let f = psd_factor(&diag(&[4.0, 9.0]));
        assert_eq!(f.rank, 2);
        assert!((f.sqrt.matrix() - diag(&[2.0, 3.0]).matrix()).norm() < 1e-12);
        let inv = f.inv_sqrt.unwrap();
        assert!((inv.matrix() - diag(&[0.5, 1.0 / 3.0]).matrix()).norm() < 1e-12);
    }

    #[test]
    fn factor_singular() {
        let f = psd_factor(&diag(&[1.0, 0.0]));
        assert_eq!(f.rank, 1);
        assert!(f.inv_sqrt.is_none());
        assert!((f.sqrt.matrix() - diag(&[1.0, 0.0]).matrix()).norm() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(PsdMatrix::new(m), Err(Error::InvalidMatrix(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]);
        assert!(matches!(PsdMatrix::new(m), Err(Error::InvalidMatrix(_))));
        // Tiny negativity is repaired rather than rejected.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        assert_eq!(PsdMatrix::new(m).unwrap().factor().rank, 1);
    }

    #[test]
    fn degenerate_sampling_gives_mean() {
        let g = model(&[0.0, 0.0], PsdMatrix::zeros(2));
        let s = sample_gaussian(&g, 3, &mut stream(1));
        assert_eq!(s.len(), 3);
        assert!(s.as_flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = model(&[1.0, -1.0], diag(&[2.0, 0.5]));
        let a = sample_gaussian(&g, 50, &mut stream(42));
        let b = sample_gaussian(&g, 50, &mut stream(42));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let n = 100_000;
        let s = sample_gaussian(&GaussianModel::standard(1), n, &mut stream(3));
        let mean: f64 = s.as_flat().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn kl_examples() {
        let std = GaussianModel::standard(3);
        assert!(kl_gaussians(&std, &std).unwrap().abs() < 1e-12);
        let shifted = model(&[1.0, 2.0, -2.0], PsdMatrix::identity(3));
        assert!((kl_gaussians(&shifted, &std).unwrap() - 4.5).abs() < 1e-12);
        let wide = model(&[0.0], diag(&[2.0]));
        let narrow = model(&[0.0], diag(&[1.0]));
        let expected = (1.0 - 2.0_f64.ln()) / 2.0;
        assert!((kl_gaussians(&wide, &narrow).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.153426).abs() < 1e-6);
    }

    #[test]
    fn kl_rejects_singular_reference() {
        let s = model(&[0.0, 0.0], diag(&[1.0, 0.0]));
        let std = GaussianModel::standard(2);
        assert!(matches!(kl_gaussians(&std, &s), Err(Error::SingularCovariance(_))));
        assert_eq!(kl_gaussians(&s, &std).unwrap(), f64::INFINITY);
    }

    #[test]
    fn tv_examples() {
        let a = model(&[0.0], diag(&[1.0]));
        let b = model(&[0.0], diag(&[2.0]));
        assert_eq!(tv_upper_bound(&a, &a).unwrap(), 0.0);
        // The smaller KL direction is KL(N(0,1) ‖ N(0,2)) = (ln 2 − 1/2)/2.
        let tv = tv_upper_bound(&a, &b).unwrap();
        let kl_min = (2f64.ln() - 0.5) / 2.0;
        assert!((tv - (kl_min / 2.0).sqrt()).abs() < 1e-12, "{tv}");
        assert!(tv >= 0.2100);
        let far = model(&[1e6], diag(&[1.0]));
        assert_eq!(tv_upper_bound(&a, &far).unwrap(), 1.0);
    }

    #[test]
    fn tv_degenerate_models() {
        let p = model(&[1.0, 2.0, 0.0], diag(&[1.0, 2.0, 0.0]));
        assert_eq!(tv_upper_bound(&p, &p).unwrap(), 0.0);
        let other_range = model(&[1.0, 2.0, 0.0], diag(&[1.0, 0.0, 2.0]));
        assert_eq!(tv_upper_bound(&p, &other_range).unwrap(), 1.0);
        let off_plane = model(&[1.0, 2.0, 0.5], diag(&[1.0, 2.0, 0.0]));
        assert_eq!(tv_upper_bound(&p, &off_plane).unwrap(), 1.0);
        let in_plane = model(&[1.5, 2.0, 0.0], diag(&[1.0, 2.0, 0.0]));
        let tv = tv_upper_bound(&p, &in_plane).unwrap();
        assert!((tv - (0.25f64 / 2.0 / 2.0).sqrt()).abs() < 1e-9, "{tv}");
        let point = model(&[3.0], PsdMatrix::zeros(1));
        assert_eq!(tv_upper_bound(&point, &point).unwrap(), 0.0);
    }

    #[test]
    fn log_density_ratio_examples() {
        let std = model(&[0.0], diag(&[1.0]));
        let x = DVector::from_row_slice(&[0.3]);
        assert_eq!(gaussian_log_density_ratio(&std, &std, &x).unwrap(), 0.0);
        let shifted = model(&[1.0], diag(&[1.0]));
        let mid = DVector::from_row_slice(&[0.5]);
        assert!(gaussian_log_density_ratio(&std, &shifted, &mid).unwrap().abs() < 1e-15);
        let wide = model(&[0.0], diag(&[4.0]));
        let zero = DVector::from_row_slice(&[0.0]);
        let l = gaussian_log_density_ratio(&std, &wide, &zero).unwrap();
        assert!((l - 0.5 * 4.0_f64.ln()).abs() < 1e-12);
        // Cross-check against direct densities.
        let pdf = |m: f64, v: f64, x: f64| {
            (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        let x = 1.7;
        let direct = (pdf(0.0, 1.0, x) / pdf(0.0, 4.0, x)).ln();
        let l = gaussian_log_density_ratio(&std, &wide, &DVector::from_row_slice(&[x])).unwrap();
        assert!((l - direct).abs() < 1e-12);
        let back = gaussian_log_density_ratio(&wide, &std, &DVector::from_row_slice(&[x])).unwrap();
        assert!((l + back).abs() < 1e-12);
    }

    #[test]
    fn sample_set_validation() {
        assert!(SampleSet::new(2, &[vec![1.0, 2.0], vec![3.0]]).is_err());
        let s = SampleSet::new(2, &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.slice(1, 3).row(0), &[3.0, 4.0]);
        let t = s.transform(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        assert_eq!(t.as_flat(), &[3.0, 7.0, 11.0]);
    }
}
