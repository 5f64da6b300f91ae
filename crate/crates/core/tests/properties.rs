use distreg::evalcv::auc;
use distreg::ingest::apply_log1;
use distreg::quad::linspace;
use distreg::represent::{
    estimate_density, estimate_hazard, estimate_quantile, estimate_survival, estimate_ttt, HazardEstimator,
};
use distreg::synthgen::{ExpWeibullParams, HazardShape};
use distreg::SubjectSample;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ExpWeibullParams> {
    (0.5f64..100.0, 0.3f64..5.0, 0.1f64..5.0).prop_map(|(scale, shape, power)| ExpWeibullParams { scale, shape, power })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_curves_are_consistent(p in params(), u in 0.01f64..0.99) {
        let x = p.quantile(u).unwrap();
        prop_assume!(x > 1e-8);
        prop_assert!((p.cdf(x).unwrap() - u).abs() < 1e-9);
        let s = p.survival(x).unwrap();
        prop_assert!((p.hazard(x).unwrap() - p.density(x).unwrap() / s).abs() <= 1e-9 * p.hazard(x).unwrap().max(1.0));
        prop_assert!((p.cumulative_hazard(x).unwrap() + s.ln()).abs() < 1e-9);
        prop_assert!(p.ttt(u).unwrap() <= p.mean() * (1.0 + 1e-9));
    }

    #[test]
    fn estimated_curves_keep_their_shape(p in params(), seed in 0u64..1000, m in 20usize..400) {
        let s = SubjectSample::new("s", p.sample(m, seed));
        let top = s.values.iter().cloned().fold(0.0, f64::max);
        prop_assume!(top > 0.0);
        let x = linspace(0.0, top, 40);
        let levels = linspace(0.01, 0.99, 40);

        let surv = estimate_survival(&s, &x).unwrap().values;
        prop_assert!(surv.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(surv.iter().all(|v| (0.0..=1.0).contains(v)));

        let q = estimate_quantile(&s, &levels).unwrap().values;
        prop_assert!(q.windows(2).all(|w| w[1] >= w[0]));

        let t = estimate_ttt(&s, &levels).unwrap().values;
        prop_assert!(t.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!(t.iter().all(|v| *v <= s.mean() * (1.0 + 1e-12)));

        prop_assert!(estimate_density(&s, &x).unwrap().values.iter().all(|v| *v >= 0.0));
        for est in [HazardEstimator::default(), HazardEstimator::Binned] {
            prop_assert!(estimate_hazard(&s, &x, est).unwrap().values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn log1_commutes_with_order_statistics(values in proptest::collection::vec(0.0f64..1e4, 2..200)) {
        // at levels p = r/(m+1) the quantile is exactly an order statistic
        let m = values.len();
        let levels: Vec<f64> = (1..=m).map(|r| r as f64 / (m as f64 + 1.0)).collect();
        let raw = estimate_quantile(&SubjectSample::new("s", values.clone()), &levels).unwrap().values;
        let logged = estimate_quantile(&SubjectSample::new("s", apply_log1(&values).unwrap()), &levels).unwrap().values;
        for (a, b) in raw.iter().zip(&logged) {
            prop_assert!((a.ln_1p() - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn auc_is_invariant_to_monotone_score_maps(
        scores in proptest::collection::vec(-5.0f64..5.0, 4..60),
        flips in proptest::collection::vec(any::<bool>(), 60),
    ) {
        let mut labels: Vec<u8> = scores.iter().zip(&flips).map(|(_, f)| u8::from(*f)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
        let a = auc(&scores, &labels).unwrap();
        prop_assert_eq!(a, auc(&mapped, &labels).unwrap());
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&negated, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
    }
}

#[test]
fn presets_have_their_named_hazard_shapes() {
    let h = |s: HazardShape, x: f64| s.params().hazard(x).unwrap();
    assert!((h(HazardShape::Constant, 3.0) - 0.05).abs() < 1e-12);
    assert!(h(HazardShape::Decreasing, 1.0) > h(HazardShape::Decreasing, 10.0));
    assert!(h(HazardShape::Increasing, 10.0) < h(HazardShape::Increasing, 40.0));
    let grid = linspace(0.5, 400.0, 800);
    let bath: Vec<f64> = grid.iter().map(|&x| h(HazardShape::Bathtub, x)).collect();
    let min = bath.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min < bath[0] && min < bath[bath.len() - 1]);
    let uni: Vec<f64> = grid.iter().map(|&x| h(HazardShape::Unimodal, x)).collect();
    let max = uni.iter().cloned().fold(0.0, f64::max);
    assert!(max > uni[0] && max > uni[uni.len() - 1]);
}
