//! Non-private estimators applied to individual chunks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gauss::{psd_factor, PsdMatrix, SampleSet};

/// Second moment `(1/s)·Σ XₗXₗᵀ` (no mean subtraction).
pub fn empirical_covariance(samples: &SampleSet) -> PsdMatrix {
    let d = samples.dim();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for x in samples.rows() {
        for i in 0..d {
            let xi = x[i];
            for j in i..d {
                acc[(i, j)] += xi * x[j];
            }
        }
    }
    let s = samples.len().max(1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = acc[(i, j)] / s;
            acc[(i, j)] = v;
            acc[(j, i)] = v;
        }
    }
    PsdMatrix::from_gram(acc)
}

pub fn empirical_mean(samples: &SampleSet) -> DVector<f64> {
    let d = samples.dim();
    let mut acc = DVector::zeros(d);
    for x in samples.rows() {
        for (a, v) in acc.iter_mut().zip(x) {
            *a += v;
        }
    }
    acc / samples.len().max(1) as f64
}

/// Orthogonal projector onto the span of the rows, from an SVD with
/// singular values below `1e-8·σ_max` treated as zero.
pub fn span_projection(samples: &SampleSet) -> DMatrix<f64> {
    let d = samples.dim();
    let x = DMatrix::from_row_slice(samples.len(), d, samples.as_flat());
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut p = DMatrix::zeros(d, d);
    if top == 0.0 {
        return p;
    }
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > 1e-8 * top {
            let v = v_t.row(i).transpose();
            p += &v * v.transpose();
        }
    }
    (&p + p.transpose()) * 0.5
}

fn top_eigenpair(m: DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(m);
    let (idx, &val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    (val, eig.eigenvectors.column(idx).into_owned())
}

fn max_filter_rounds(s: usize) -> usize {
    2 * ((s.max(2) as f64).log2().ceil() as usize) + 1
}

/// Outcome of an iterative filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrace {
    pub rounds: usize,
    pub survivors: usize,
}

/// One filter loop over feature vectors: while the top eigenvalue of the
/// centered feature covariance exceeds `limit`, drop the `batch` survivors
/// with the largest squared projections on the top eigenvector. `features`
/// maps the current survivor set to per-point features.
fn filter_loop<F>(n: usize, limit: f64, batch: usize, mut features: F) -> Result<(Vec<usize>, FilterTrace)>
where
    F: FnMut(&[usize]) -> Result<Vec<DVector<f64>>>,
{
    let mut alive: Vec<usize> = (0..n).collect();
    let mut rounds = 0;
    for _ in 0..max_filter_rounds(n) {
        let feats = features(&alive)?;
        let dim = feats[0].len();
        let count = feats.len() as f64;
        let mean = feats.iter().fold(DVector::zeros(dim), |a, f| a + f) / count;
        let mut cov = DMatrix::zeros(dim, dim);
        for f in &feats {
            let c = f - &mean;
            cov += &c * c.transpose();
        }
        cov /= count;
        let (lambda, v) = top_eigenpair(cov);
        if lambda <= limit {
            break;
        }
        rounds += 1;
        let mut scored: Vec<(f64, usize)> = feats
            .iter()
            .zip(&alive)
            .map(|(f, &i)| ((f - &mean).dot(&v).powi(2), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let drop: std::collections::HashSet<usize> =
            scored.iter().take(batch).map(|&(_, i)| i).collect();
        alive.retain(|i| !drop.contains(i));
        if 2 * alive.len() < n {
            return Err(Error::FilterDiverged {
                survivors: alive.len(),
                total: n,
            });
        }
    }
    let survivors = alive.len();
    Ok((alive, FilterTrace { rounds, survivors }))
}

fn trigger(alpha: f64, c: f64) -> f64 {
    1.0 + c * alpha * (1.0 / alpha).ln()
}

/// Reference iterative filter for the mean of an α-corrupted sample from a
/// distribution with covariance near the identity.
pub fn filtered_robust_mean(samples: &SampleSet, alpha: f64, trigger_c: f64) -> Result<DVector<f64>> {
    filtered_robust_mean_traced(samples, alpha, trigger_c).map(|(m, _)| m)
}

pub fn filtered_robust_mean_traced(
    samples: &SampleSet,
    alpha: f64,
    trigger_c: f64,
) -> Result<(DVector<f64>, FilterTrace)> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidInput(format!("corruption fraction must lie in (0, 1/2), got {alpha}")));
    }
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    let batch = ((alpha * n as f64 / 4.0).ceil() as usize).max(1);
    let (alive, trace) = filter_loop(n, trigger(alpha, trigger_c), batch, |alive| {
        Ok(alive.iter().map(|&i| samples.row_vector(i)).collect())
    })?;
    let mean = alive
        .iter()
        .fold(DVector::zeros(samples.dim()), |a, &i| a + samples.row_vector(i))
        / alive.len() as f64;
    Ok((mean, trace))
}

/// `svec(yyᵀ − I)` with off-diagonal entries scaled by √2, so that a
/// standard Gaussian `y` gives features with covariance `2I`.
fn outer_features(y: &DVector<f64>) -> DVector<f64> {
    let d = y.len();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        out.push(y[i] * y[i] - 1.0);
        for j in (i + 1)..d {
            out.push(std::f64::consts::SQRT_2 * y[i] * y[j]);
        }
    }
    DVector::from_vec(out)
}

fn second_moment_of(samples: &SampleSet, idx: &[usize]) -> DMatrix<f64> {
    let d = samples.dim();
    let mut acc = DMatrix::zeros(d, d);
    for &i in idx {
        let x = samples.row_vector(i);
        acc += &x * x.transpose();
    }
    acc / idx.len() as f64
}

/// Reference iterative filter for the second moment of an α-corrupted
/// zero-mean Gaussian sample, run on whitened outer products.
pub fn filtered_robust_covariance(
    samples: &SampleSet,
    alpha: f64,
    alpha0: f64,
    trigger_c: f64,
) -> Result<PsdMatrix> {
    filtered_robust_covariance_traced(samples, alpha, alpha0, trigger_c).map(|(m, _)| m)
}

pub fn filtered_robust_covariance_traced(
    samples: &SampleSet,
    alpha: f64,
    alpha0: f64,
    trigger_c: f64,
) -> Result<(PsdMatrix, FilterTrace)> {
    if !(alpha > 0.0 && alpha < alpha0) {
        return Err(Error::InvalidInput(format!(
            "corruption fraction must lie in (0, {alpha0}), got {alpha}"
        )));
    }
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    let batch = ((alpha * n as f64 / 4.0).ceil() as usize).max(1);
    let (alive, trace) = filter_loop(n, 2.0 * trigger(alpha, trigger_c), batch, |alive| {
        let current = PsdMatrix::from_gram(second_moment_of(samples, alive));
        let w = psd_factor(&current).inv_sqrt.ok_or_else(|| {
            Error::SingularCovariance("filtered second moment became singular".into())
        })?;
        Ok(alive
            .iter()
            .map(|&i| outer_features(&(w.matrix() * samples.row_vector(i))))
            .collect())
    })?;
    Ok((PsdMatrix::from_gram(second_moment_of(samples, &alive)), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{sample_gaussian, GaussianModel};
    use crate::rng::stream;
    use crate::semimetric::spectral_cov_dist;

    #[test]
    fn covariance_examples() {
        let zeros = SampleSet::from_flat(2, vec![0.0; 6]).unwrap();
        assert_eq!(empirical_covariance(&zeros), PsdMatrix::zeros(2));
        let e1 = SampleSet::from_flat(2, vec![1.0, 0.0]).unwrap();
        assert_eq!(empirical_covariance(&e1), PsdMatrix::from_diagonal(&[1.0, 0.0]).unwrap());
    }

    #[test]
    fn mean_examples() {
        let s = SampleSet::from_flat(2, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(empirical_mean(&s), DVector::from_vec(vec![1.0, 1.0]));
        let same = SampleSet::from_flat(3, [1.5, -2.0, 4.0].repeat(7)).unwrap();
        assert!((empirical_mean(&same) - DVector::from_vec(vec![1.5, -2.0, 4.0])).norm() < 1e-14);
    }

    #[test]
    fn mean_concentrates() {
        let d = 3;
        let mu = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let model = GaussianModel::new(mu.clone(), PsdMatrix::identity(d)).unwrap();
        let s = 10_000;
        let x = sample_gaussian(&model, s, &mut stream(1));
        assert!((empirical_mean(&x) - mu).norm() <= 4.0 * (d as f64 / s as f64).sqrt());
    }

    #[test]
    fn span_examples() {
        let full = SampleSet::from_flat(2, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        assert!((span_projection(&full) - DMatrix::identity(2, 2)).norm() < 1e-12);

        let x = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let one = SampleSet::from_flat(3, x.as_slice().to_vec()).unwrap();
        let expected = &x * x.transpose() / x.norm_squared();
        assert!((span_projection(&one) - expected).norm() < 1e-12);

        let plane = SampleSet::from_flat(3, vec![1.0, 1.0, 0.0, 2.0, -1.0, 0.0, 0.3, 0.2, 0.0]).unwrap();
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!((span_projection(&plane) - diag).norm() < 1e-12);

        let zero = SampleSet::from_flat(2, vec![0.0; 4]).unwrap();
        assert_eq!(span_projection(&zero), DMatrix::zeros(2, 2));
    }

    fn corrupted_sample(d: usize, s: usize, frac: f64, seed: u64) -> SampleSet {
        let mut x = sample_gaussian(&GaussianModel::standard(d), s, &mut stream(seed));
        let bad = (frac * s as f64) as usize;
        let mut row = vec![0.0; d];
        row[0] = 100.0;
        for i in 0..bad {
            x.set_row(i, &row);
        }
        x
    }

    #[test]
    fn robust_mean_resists_point_mass() {
        let alpha = 0.05;
        let x = corrupted_sample(4, 10_000, alpha, 3);
        let (m, trace) = filtered_robust_mean_traced(&x, alpha, 2.0).unwrap();
        assert!(trace.rounds > 0);
        assert!(m.norm() <= 5.0 * alpha * (1.0 / alpha).ln().sqrt(), "{}", m.norm());
        // The naive mean is off by 5.
        assert!(empirical_mean(&x).norm() > 4.0);
    }

    #[test]
    fn robust_mean_rejects_large_alpha() {
        let x = corrupted_sample(2, 100, 0.0, 1);
        assert!(matches!(filtered_robust_mean(&x, 0.6, 2.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn robust_mean_clean_is_plain_mean() {
        let x = corrupted_sample(3, 5000, 0.0, 9);
        let (m, trace) = filtered_robust_mean_traced(&x, 0.05, 2.0).unwrap();
        assert_eq!(trace.rounds, 0);
        assert!((m - empirical_mean(&x)).norm() < 1e-12);
    }

    #[test]
    fn robust_covariance_resists_large_points() {
        let alpha = 0.05;
        let d = 3;
        let x = corrupted_sample(d, 10_000, alpha, 5);
        let est = filtered_robust_covariance(&x, alpha, 0.1, 2.0).unwrap();
        let dist = spectral_cov_dist(&est, &PsdMatrix::identity(d)).unwrap();
        assert!(dist < 1.0 / 9.0, "{dist}");
        let naive = spectral_cov_dist(&empirical_covariance(&x), &PsdMatrix::identity(d)).unwrap();
        assert!(naive > 100.0);
    }

    #[test]
    fn robust_covariance_rejects_alpha_above_alpha0() {
        let x = corrupted_sample(2, 100, 0.0, 1);
        assert!(matches!(
            filtered_robust_covariance(&x, 0.1, 0.1, 2.0),
            Err(Error::InvalidInput(_))
        ));
    }
}
