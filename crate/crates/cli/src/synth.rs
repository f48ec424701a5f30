//! Synthetic models and adversarial corruption.

use nalgebra::{DMatrix, DVector};
use ppme_core::gauss::{sample_gaussian, sym_eigenvalues, GaussianModel, PsdMatrix, SampleSet};
use ppme_core::rng::substream;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{Adversary, Corruption, ModelSpec};
use crate::error::CliResult;

const MODEL_STREAM: u64 = 1 << 40;
const DATA_STREAM: u64 = MODEL_STREAM + 1;
const CORRUPTION_STREAM: u64 = MODEL_STREAM + 2;

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign of `R`'s diagonal folded into `Q`).
fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn build_model(spec: &ModelSpec, seed: u64) -> CliResult<GaussianModel> {
    let d = spec.dim;
    let cov = if let Some(c) = &spec.covariance {
        PsdMatrix::new(DMatrix::from_row_slice(d, d, c))?
    } else {
        let eig = spec.eigenvalues.clone().unwrap_or_else(|| vec![1.0; d]);
        let diag = PsdMatrix::from_diagonal(&eig)?;
        if spec.rotate {
            let q = random_orthogonal(d, &mut substream(seed, MODEL_STREAM));
            diag.congruence(&q)
        } else {
            diag
        }
    };
    Ok(GaussianModel::new(DVector::from_column_slice(&spec.mean), cov)?)
}

pub fn draw(model: &GaussianModel, n: usize, seed: u64) -> SampleSet {
    sample_gaussian(model, n, &mut substream(seed, DATA_STREAM))
}

/// Replaces `⌊fraction·n⌋` records at seeded random positions.
pub fn corrupt(samples: &mut SampleSet, model: &GaussianModel, c: &Corruption, seed: u64) {
    let n = samples.len();
    let bad = ((c.fraction * n as f64).floor() as usize).min(n);
    if bad == 0 {
        return;
    }
    let mut rng = substream(seed, CORRUPTION_STREAM);
    let d = model.dim();
    let cov = model.covariance().matrix();
    let top = sym_eigenvalues(cov).into_iter().fold(0.0_f64, f64::max).sqrt().max(1.0);
    let mut axis = DVector::zeros(d);
    axis[0] = 1.0;
    let offset = axis * (c.shift * top);
    let positions = index::sample(&mut rng, n, bad).into_vec();
    let shifted = GaussianModel::new(model.mean() + &offset, model.covariance().clone()).expect("same dims");
    let fresh = sample_gaussian(&shifted, bad, &mut rng);
    for (j, &i) in positions.iter().enumerate() {
        let row: Vec<f64> = match c.adversary {
            Adversary::MeanShift => fresh.row(j).to_vec(),
            Adversary::PointMass => (model.mean() + &offset).iter().copied().collect(),
            Adversary::Scattered => {
                let mut v = model.mean().clone();
                v[0] += (i as f64 + 1.0) * 1e3 * top * c.shift.max(1.0);
                v.iter().copied().collect()
            }
        };
        samples.set_row(i, &row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(eig: Vec<f64>, rotate: bool) -> ModelSpec {
        ModelSpec {
            dim: eig.len(),
            mean: vec![0.0; eig.len()],
            covariance: None,
            eigenvalues: Some(eig),
            rotate,
        }
    }

    #[test]
    fn rotation_preserves_spectrum() {
        let m = build_model(&spec(vec![1.0, 4.0, 9.0], true), 3).unwrap();
        let mut e = sym_eigenvalues(m.covariance().matrix());
        e.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip([1.0, 4.0, 9.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(m.covariance().matrix()[(0, 1)].abs() > 1e-6);
    }

    #[test]
    fn corruption_replaces_exact_count() {
        let m = build_model(&spec(vec![1.0, 1.0], false), 1).unwrap();
        let mut s = draw(&m, 200, 1);
        let c = Corruption {
            fraction: 0.05,
            adversary: Adversary::PointMass,
            shift: 10.0,
        };
        corrupt(&mut s, &m, &c, 1);
        assert_eq!(s.rows().filter(|r| r[0] == 10.0).count(), 10);
    }
}
