use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctm_core::model::{ks_statistic, TailPolicy};
use ctm_core::sim::{self, hvc_covariates, mad_surface, model_estimate};
use ctm_core::*;

fn meta() -> FitMeta {
    FitMeta {
        observations: 0,
        iterations: 0,
        initial_risk: 0.0,
        final_risk: 0.0,
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Grid {
    Grid::new(sim::linspace(lo, hi, n), GridKind::Equidistant).unwrap()
}

/// `h(v) = v` with no covariate dependence.
fn standard_model(link: Link) -> CtmModel {
    let mut l = TensorLearner::new(
        "v",
        None,
        Marginal::intercept(),
        Marginal::new(BasisSpec::Linear { lo: -8.0, hi: 8.0 }, PenaltySpec::None),
    );
    l.gamma = vec![0.0, 1.0];
    CtmModel::new(
        LossLink::new(LossKind::Bin, link),
        grid(-8.0, 8.0, 100),
        vec![l],
        BoostConfig::default(),
        meta(),
    )
    .unwrap()
}

/// The exact transformation of the simulation model, `v (x1 + 0.5) - x2`.
fn true_hvc_model() -> CtmModel {
    let (lo, hi) = (-10.0, 10.0);
    let mut a = TensorLearner::new(
        "x1",
        Some("x1"),
        Marginal::new(BasisSpec::Linear { lo: 0.0, hi: 1.0 }, PenaltySpec::None),
        Marginal::new(BasisSpec::Linear { lo, hi }, PenaltySpec::None),
    );
    a.gamma = vec![0.0, 0.5, 0.0, 1.0];
    let mut b = TensorLearner::new(
        "x2",
        Some("x2"),
        Marginal::new(BasisSpec::Linear { lo: -2.0, hi: 2.0 }, PenaltySpec::None),
        Marginal::intercept(),
    );
    b.gamma = vec![0.0, -1.0];
    CtmModel::new(
        LossLink::new(LossKind::Bin, Link::Probit),
        grid(lo, hi, 100),
        vec![a, b],
        BoostConfig::default(),
        meta(),
    )
    .unwrap()
}

fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| loss::normal_quantile(rng.random_range(1e-12..1.0))).collect()
}

#[test]
fn residuals_distributed_as_link_pass_ks_and_rank_one_for_x_free_model() {
    let y = normal_sample(2000, 1);
    let data = Dataset::new(y, vec![], None).unwrap();
    let r = standard_model(Link::Probit).diagnostics(&data).unwrap();
    assert!(r.ks_statistic < 1.358 / (2000f64).sqrt(), "{}", r.ks_statistic);
    assert_eq!(r.rank_correlation, Some(1.0));
    assert!(r.violations.is_empty());
    assert_eq!(r.residuals.len(), 2000);
}

#[test]
fn true_model_on_simulated_data_has_small_ks_and_moderate_rank_correlation() {
    let data = sim::simulate_hvc(2000, 0, 11).unwrap();
    let r = true_hvc_model().diagnostics(&data).unwrap();
    assert!(r.ks_statistic < 1.358 / (2000f64).sqrt(), "{}", r.ks_statistic);
    let rho = r.rank_correlation.unwrap();
    assert!(rho < 0.8, "{rho}");
}

#[test]
fn true_model_median_quantile_at_centre_is_zero() {
    let m = true_hvc_model();
    let q = m.quantile(&hvc_covariates(0.5, 0.0, 0), 0.5).unwrap();
    assert_abs_diff_eq!(q, 0.0, epsilon = 1e-6);
}

#[test]
fn bootstrap_of_standard_model_is_standard_normal() {
    let m = standard_model(Link::Probit);
    let xs = vec![Covariates::new(); 5000];
    let draws = m.model_bootstrap(&xs, 17, TailPolicy::Error).unwrap();
    let d = ks_statistic(&draws, loss::normal_cdf);
    assert!(d < 1.358 / (5000f64).sqrt(), "{d}");
}

#[test]
fn zero_iteration_fit_is_one_half_everywhere() {
    let data = sim::simulate_hvc(80, 0, 4).unwrap();
    let learners = sim::SimStudyConfig::default().learners(&data, 0).unwrap();
    let config = BoostConfig {
        max_iterations: 0,
        ..BoostConfig::default()
    };
    let m = fit(&data, &learners, &config).unwrap().model;
    for (x1, x2) in [(0.0, -2.0), (0.3, 1.0), (1.0, 2.0)] {
        for v in m.grid().points() {
            assert_eq!(m.cdf(&hvc_covariates(x1, x2, 0), *v).unwrap(), 0.5);
        }
    }
}

#[test]
fn fitted_document_round_trip_is_exact() {
    let data = sim::simulate_hvc(120, 1, 8).unwrap();
    let learners = sim::SimStudyConfig::default().learners(&data, 1).unwrap();
    let config = BoostConfig {
        max_iterations: 150,
        ..BoostConfig::default()
    };
    let m = fit(&data, &learners, &config).unwrap().model;
    let back = CtmModel::from_json(&m.to_json().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (lo, hi) = (m.grid().lo(), m.grid().hi());
    for _ in 0..1000 {
        let x = sim::hvc_covariates(rng.random(), rng.random_range(-2.0..2.0), 0)
            .with("z1", Value::Real(rng.random()));
        let v = rng.random_range(lo..hi);
        assert_eq!(m.cdf(&x, v).unwrap().to_bits(), back.cdf(&x, v).unwrap().to_bits());
    }
}

#[test]
fn bootstrap_refit_recovers_generating_model() {
    let data = sim::simulate_hvc(200, 0, 21).unwrap();
    let study = sim::SimStudyConfig::default();
    let config = BoostConfig {
        max_iterations: 600,
        ..BoostConfig::default()
    };
    let original = fit(&data, &study.learners(&data, 0).unwrap(), &config).unwrap().model;
    let rows: Vec<Covariates> = (0..data.len()).map(|i| data.frame().row(i)).collect();
    let y = original.model_bootstrap(&rows, 5, TailPolicy::Clamp).unwrap();
    let boot = data.with_response(y).unwrap();
    let refit = fit(&boot, &study.learners(&boot, 0).unwrap(), &config).unwrap().model;

    let lo = original.grid().lo().max(refit.grid().lo());
    let hi = original.grid().hi().min(refit.grid().hi());
    let vs = sim::linspace(lo, hi, 100);
    let reference = model_estimate(&original, 0);
    let surface = mad_surface(
        model_estimate(&refit, 0),
        |x1, x2, v| reference(x1, x2, &[v]).unwrap()[0],
        &sim::linspace(0.0, 1.0, 10),
        &sim::linspace(-2.0, 2.0, 10),
        &vs,
    )
    .unwrap();
    assert!(surface.median < 0.1, "{}", surface.median);
}

fn arbitrary_model(gamma: &[f64], link: Link) -> CtmModel {
    let mut l = TensorLearner::new(
        "x",
        Some("x"),
        Marginal::new(BasisSpec::cubic_bspline(1, 0.0, 1.0), PenaltySpec::None),
        Marginal::new(BasisSpec::cubic_bspline(2, -2.0, 2.0), PenaltySpec::None),
    );
    l.gamma = gamma.to_vec();
    CtmModel::new(LossLink::new(LossKind::Sqe, link), grid(-2.0, 2.0, 40), vec![l], BoostConfig::default(), meta())
        .unwrap()
}

fn any_link() -> impl Strategy<Value = Link> {
    prop_oneof![Just(Link::Probit), Just(Link::Logit), Just(Link::Identity)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cdf_is_a_probability(gamma in prop::collection::vec(-20.0..20.0f64, 30), link in any_link(),
                            x in 0.0..=1.0f64, v in -2.0..=2.0f64) {
        let m = arbitrary_model(&gamma, link);
        let p = m.cdf(&Covariates::new().with("x", Value::Real(x)), v).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn quantile_lies_in_grid_or_reports_an_error(gamma in prop::collection::vec(-5.0..5.0f64, 30),
                                                 link in any_link(), x in 0.0..=1.0f64, tau in 0.01..0.99f64) {
        let m = arbitrary_model(&gamma, link);
        match m.quantile(&Covariates::new().with("x", Value::Real(x)), tau) {
            Ok(q) => prop_assert!((-2.0..=2.0).contains(&q)),
            Err(e) => {
                let expected = matches!(e, CtmError::Tail { .. } | CtmError::Monotonicity { .. });
                prop_assert!(expected, "unexpected error {:?}", e);
            }
        }
    }

    #[test]
    fn mad_is_nonnegative_and_zero_only_on_agreement(shift in -0.3..0.3f64) {
        let vs = sim::linspace(-3.0, 3.0, 25);
        let s = mad_surface(
            |a, b, vs| Ok(vs.iter().map(|v| (sim::true_cdf_hvc(a, b, *v) + shift).clamp(0.0, 1.0)).collect()),
            sim::true_cdf_hvc,
            &[0.0, 0.5, 1.0],
            &[-1.0, 1.0],
            &vs,
        ).unwrap();
        prop_assert!(s.min >= 0.0);
        prop_assert_eq!(s.max == 0.0, shift == 0.0);
    }
}
