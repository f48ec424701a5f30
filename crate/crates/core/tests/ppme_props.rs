use nalgebra::DVector;
use ppme_core::gauss::SampleSet;
use ppme_core::mechanisms::{GaussianMask, IdentityMask, MaskingCalibration};
use ppme_core::ppme::{compute_scores, ppme_run, q_sensitivity_probe, PpmeConfig, PpmeResult};
use ppme_core::rng::stream;
use ppme_core::semimetric::{CandidatePoint, SemimetricSpec};
use proptest::prelude::*;
use rand::Rng;

fn point(v: &[f64]) -> CandidatePoint {
    CandidatePoint::Vector(DVector::from_row_slice(v))
}

fn chunk_mean(s: &SampleSet) -> ppme_core::Result<CandidatePoint> {
    let n = s.len() as f64;
    Ok(point(&[s.rows().map(|r| r[0]).sum::<f64>() / n]))
}

/// One-dimensional data drawn around a few cluster centres, so that scores
/// take many distinct values.
fn clustered() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..=3, prop::collection::vec(-2.0..2.0f64, 1..4)).prop_flat_map(|(s, centres)| {
        let n = 140 * s;
        (
            Just(s),
            prop::collection::vec((0usize..8, -0.3..0.3f64), n).prop_map(move |picks| {
                picks
                    .iter()
                    .map(|&(c, e)| centres.get(c).copied().unwrap_or(25.0 * c as f64) + e)
                    .collect()
            }),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn single_replacement_moves_the_score_by_less_than_two_over_k(
        (_, data) in clustered(),
        r in 0.05..3.0f64,
        index in any::<prop::sample::Index>(),
        replacement in -30.0..30.0f64,
    ) {
        let cfg = PpmeConfig::new(140, 1.0, 1e-3, SemimetricSpec::norm(r)).unwrap().without_shuffle();
        let set = SampleSet::from_flat(1, data.clone()).unwrap();
        let i = index.index(data.len());
        let change = q_sensitivity_probe(&set, &chunk_mean, &cfg, i, &[replacement]).unwrap();
        prop_assert!(change < 2.0 / 140.0, "change {change}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fail_or_output_with_a_heavy_core((_, data) in clustered(), r in 0.05..3.0f64, seed in any::<u64>()) {
        let cfg = PpmeConfig::new(140, 1.0, 1e-3, SemimetricSpec::norm(r)).unwrap();
        let set = SampleSet::from_flat(1, data).unwrap();
        let out = ppme_run(&set, &chunk_mean, &IdentityMask, &cfg, &mut stream(seed)).unwrap();
        let d = &out.diagnostics;
        match &out.result {
            PpmeResult::Fail => {
                prop_assert!(d.failed_at_threshold);
                prop_assert!(d.q_hat < d.threshold);
                prop_assert!(d.weights.iter().all(|&w| w == 0.0));
            }
            PpmeResult::Output(_) => {
                prop_assert!(!d.failed_at_threshold);
                prop_assert!(d.q_hat >= d.threshold);
                prop_assert!(d.weight_total >= 140.0 / 3.0, "W = {}", d.weight_total);
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_outcomes((_, data) in clustered(), seed in any::<u64>()) {
        let cfg = PpmeConfig::new(140, 1.0, 1e-3, SemimetricSpec::norm(1.0)).unwrap();
        let set = SampleSet::from_flat(1, data).unwrap();
        let a = ppme_run(&set, &chunk_mean, &IdentityMask, &cfg, &mut stream(seed)).unwrap();
        let b = ppme_run(&set, &chunk_mean, &IdentityMask, &cfg, &mut stream(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

/// Five candidates at one point, then one moved far away: four scores drop
/// from 1 to 4/5 and the moved one to 1/5, so `Q` falls from 1 to 17/25.
#[test]
fn moving_one_candidate_out_of_every_ball() {
    let space = SemimetricSpec::norm(1.0);
    let k = 5.0;
    let before = vec![point(&[0.0]); 5];
    let mut after = before.clone();
    after[2] = point(&[50.0]);
    let q = |ys: &[CandidatePoint]| compute_scores(ys, &space).unwrap().iter().sum::<f64>() / k;
    let change = q(&before) - q(&after);
    assert!((change - 8.0 / 25.0).abs() < 1e-15);
    assert!(change <= 1.0 / k + (k - 1.0) / (k * k));
    assert!(change < 2.0 / k);
}

/// Chunk estimates land within `α₁/t` of `Y*` except for a few planted
/// outliers; with a Gaussian mask concentrated at `α₂/t` the release should
/// be within `α₁ + α₂` of `Y*` with probability at least `1 − β`.
#[test]
fn release_lands_near_the_target() {
    let (eps, delta, beta, k, d) = (1.0, 1e-3, 0.1, 140usize, 2usize);
    let (alpha1, r) = (0.5, 1.0);
    let space = SemimetricSpec::norm(r);
    let cfg = PpmeConfig::new(k, eps, delta, space).unwrap();
    let cal = MaskingCalibration::gaussian(cfg.required_mask_gamma(), eps, delta, d, beta).unwrap();
    let alpha2 = cal.conc_alpha * space.t;
    let mask = GaussianMask { calibration: cal };
    let target = DVector::from_vec(vec![3.0, -1.0]);
    let first = |s: &SampleSet| Ok(CandidatePoint::Vector(s.row_vector(0)));

    let trials = 500;
    let mut rng = stream(77);
    let mut hits = 0;
    for t in 0..trials {
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                if i < 5 {
                    vec![100.0 * (i + 1) as f64, 0.0]
                } else {
                    let angle = rng.random::<f64>() * std::f64::consts::TAU;
                    let rad = alpha1 / space.t * rng.random::<f64>().sqrt();
                    vec![target[0] + rad * angle.cos(), target[1] + rad * angle.sin()]
                }
            })
            .collect();
        let set = SampleSet::new(d, &rows).unwrap();
        let out = ppme_run(&set, &first, &mask, &cfg, &mut stream(1000 + t)).unwrap();
        if let Some(p) = out.point() {
            if (p.as_vector().unwrap() - &target).norm() <= alpha1 + alpha2 {
                hits += 1;
            }
        }
    }
    let freq = hits as f64 / trials as f64;
    let floor = (1.0 - beta) - 3.0 * (beta * (1.0 - beta) / trials as f64).sqrt();
    assert!(freq >= floor, "{hits}/{trials} below {floor}");
}
