use nalgebra::{DMatrix, DVector};
use ppme_core::constants::Constants;
use ppme_core::estimators::nonprivate::{filtered_robust_covariance_traced, filtered_robust_mean_traced};
use ppme_core::estimators::pipeline::{
    learn_gaussian_with_plan, plan_learn_gaussian, plan_learn_gaussian_robust, PipelinePlan,
};
use ppme_core::estimators::private::{plan_subspace, private_subspace};
use ppme_core::gauss::{sample_gaussian, tv_upper_bound};
use ppme_core::ppme::PrivacyBudget;
use ppme_core::rng::stream;
use ppme_core::{GaussianModel, PsdMatrix, SampleSet};
use proptest::prelude::*;
use rand::Rng;

fn check_slices(plan: &PipelinePlan) -> std::result::Result<(), TestCaseError> {
    let mut end = 0;
    for s in &plan.slices {
        prop_assert_eq!(s.start, end);
        prop_assert!(s.end > s.start, "empty slice {:?}", s);
        end = s.end;
    }
    prop_assert_eq!(plan.required_records(), end);
    Ok(())
}

fn check_budget(plan: &PipelinePlan, stages: usize) -> std::result::Result<(), TestCaseError> {
    let total = plan.analytic_budget();
    let want = plan.requested;
    prop_assert!((total.epsilon - want.epsilon).abs() <= 1e-12 * want.epsilon);
    prop_assert!((total.delta - want.delta).abs() <= 1e-12 * want.delta);
    prop_assert_eq!(plan.stages.len(), stages);
    for s in &plan.stages {
        let spent = s.spent();
        prop_assert!((spent.epsilon - want.epsilon / stages as f64).abs() <= 1e-12 * want.epsilon);
        prop_assert!((spent.delta - want.delta / stages as f64).abs() <= 1e-12 * want.delta);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn stages_use_disjoint_slices_and_split_the_budget(
        d in 1usize..=8,
        eps in 0.05..20.0f64,
        delta in 1e-8..0.05f64,
        alpha in 0.01..1.0f64,
        beta in 0.01..0.5f64,
    ) {
        let consts = Constants::default();
        let budget = PrivacyBudget::new(eps, delta).unwrap();
        let plan = plan_learn_gaussian(d, budget, alpha, beta, &consts).unwrap();
        check_slices(&plan)?;
        check_budget(&plan, 5)?;
        let robust = plan_learn_gaussian_robust(d, budget, alpha * consts.filter_alpha0, beta, &consts).unwrap();
        check_slices(&robust)?;
        check_budget(&robust, 2)?;
    }
}

/// Centred Gaussian with covariance `GGᵀ` for a random 5×2 factor `G`.
fn rank_two(rng: &mut impl Rng) -> (GaussianModel, DMatrix<f64>) {
    let g = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let model = GaussianModel::new(DVector::zeros(5), PsdMatrix::new(&g * g.transpose()).unwrap()).unwrap();
    (model, g)
}

#[test]
fn subspace_is_recovered_exactly() {
    let setting = PrivacyBudget::new(1.0, 1e-3).unwrap();
    let plan = plan_subspace(5, setting).unwrap();
    let mut rng = stream(404);
    for trial in 0..50 {
        let (model, g) = rank_two(&mut rng);
        let x = sample_gaussian(&model, plan.records() as usize, &mut rng);
        let out = private_subspace(&x, setting, &mut stream(trial)).unwrap();
        let p = out.value.expect("clean data never fails");
        // Oracle: the projector onto the column space of G.
        let truth = &g * (g.transpose() * &g).try_inverse().unwrap() * g.transpose();
        assert!((&p - &truth).norm() <= 1e-8, "trial {trial}: error {:e}", (p - truth).norm());
    }
}

/// `n` clean standard Gaussian records with the first `⌊f·n⌋` replaced by
/// a far cluster; larger `f` corrupts a superset of the records.
fn nested_corruption(clean: &SampleSet, f: f64, offset: f64) -> SampleSet {
    let mut x = clean.clone();
    let bad = (f * clean.len() as f64).floor() as usize;
    for i in 0..bad {
        let mut row = clean.row(i).to_vec();
        row[0] += offset;
        x.set_row(i, &row);
    }
    x
}

#[test]
fn more_corruption_never_means_fewer_filter_rounds() {
    let consts = Constants::default();
    let alpha = 0.08;
    for seed in 0..5 {
        let id = GaussianModel::new(DVector::zeros(3), PsdMatrix::identity(3)).unwrap();
        let clean = sample_gaussian(&id, 4000, &mut stream(seed));
        let mut last_mean = 0;
        let mut last_cov = 0;
        for f in [0.0, 0.01, 0.02, 0.05, 0.08] {
            let x = nested_corruption(&clean, f, 8.0);
            let (_, t) = filtered_robust_mean_traced(&x, alpha, consts.filter_trigger).unwrap();
            assert!(t.rounds >= last_mean, "seed {seed}, f {f}: mean rounds {} < {last_mean}", t.rounds);
            last_mean = t.rounds;
            let (_, t) =
                filtered_robust_covariance_traced(&x, alpha, consts.filter_alpha0, consts.filter_trigger).unwrap();
            assert!(t.rounds >= last_cov, "seed {seed}, f {f}: covariance rounds {} < {last_cov}", t.rounds);
            last_cov = t.rounds;
        }
        assert!(last_mean > 0 && last_cov > 0, "seed {seed}: filters never triggered");
    }
}

/// Small constants and a very large budget keep the pipeline near ten
/// million records; the mechanics are unchanged.
fn cheap() -> (Constants, PrivacyBudget, f64, f64) {
    let mut c = Constants::default();
    c.c1 = 1.0;
    c.c2 = 10.0;
    c.c_frob = 1.5;
    (c, PrivacyBudget::new(1000.0, 1e-3).unwrap(), 1.0, 0.5)
}

#[test]
fn learned_model_is_equivariant_under_diagonal_rescaling() {
    let (consts, budget, alpha, beta) = cheap();
    let plan = plan_learn_gaussian(2, budget, alpha, beta, &consts).unwrap();
    let n = plan.required_records() as usize;
    let truth = GaussianModel::new(
        DVector::from_vec(vec![1.0, -2.0]),
        PsdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.8, 0.8, 1.0])).unwrap(),
    )
    .unwrap();
    let seeds = 5;
    let runs: Vec<(SampleSet, f64)> = (0..seeds)
        .map(|s| {
            let x = sample_gaussian(&truth, n, &mut stream(500 + s));
            let r = learn_gaussian_with_plan(&x, &plan, 900 + s).unwrap();
            assert!(!r.failed, "seed {s}: {:?}", r.failed_stage);
            assert_eq!(r.budget_spent, plan.analytic_budget());
            let tv = tv_upper_bound(&r.model.unwrap(), &truth).unwrap();
            (x, tv)
        })
        .collect();
    // Same draws mapped by D; the reference model is mapped by D as well.
    // Per-axis factors span [1e-3, 1e3] with at most two decades of spread,
    // keeping covariances well inside the numerical rank threshold.
    for factors in [[1e-3, 1e-3], [1e3, 1e3], [1e-3, 1e-1], [10.0, 1e3]] {
        let dm = DMatrix::from_diagonal(&DVector::from_row_slice(&factors));
        let mapped = GaussianModel::new(&dm * truth.mean(), truth.covariance().congruence(&dm)).unwrap();
        let mut diffs = vec![];
        for (s, (x, tv)) in runs.iter().enumerate() {
            let r = learn_gaussian_with_plan(&x.transform(&dm), &plan, 900 + s as u64).unwrap();
            assert!(!r.failed, "factors {factors:?}, seed {s}: {:?}", r.failed_stage);
            diffs.push(tv_upper_bound(&r.model.unwrap(), &mapped).unwrap() - tv);
        }
        let m = diffs.iter().sum::<f64>() / seeds as f64;
        let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (seeds as f64 - 1.0)).sqrt();
        let base = runs.iter().map(|r| r.1).sum::<f64>() / seeds as f64;
        assert!(m.abs() <= 4.0 * sd / (seeds as f64).sqrt() + 1e-6 * base, "factors {factors:?}: mean shift {m}, sd {sd}");
    }
}
