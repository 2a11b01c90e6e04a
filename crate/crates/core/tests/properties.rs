use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use mmdcal::data::MinMaxScaler;
use mmdcal::kernels::{mmd2_biased_value, mmd2_unbiased, KernelMixture, DEFAULT_BANDWIDTHS};
use mmdcal::metrics::{empirical_coverage, ConfidenceGrid};
use mmdcal::model::GaussianPrediction;
use mmdcal::recalibration::{apply_recalibration, pav, IsotonicRecalibrator};
use mmdcal::verification::{isotonic_oracle, mmd2_oracle};

fn sample(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..2.0, 1..max)
}

proptest! {
    #[test]
    fn mmd_matches_oracle(a in sample(60), b in sample(60)) {
        let mix = KernelMixture::<f64>::default();
        let v = mmd2_biased_value(&a, &b, &mix).unwrap().value;
        prop_assert!((v - mmd2_oracle(&a, &b, &DEFAULT_BANDWIDTHS)).abs() <= 1e-10);
    }

    #[test]
    fn mmd_symmetric_and_nonnegative(a in sample(40), b in sample(40)) {
        let mix = KernelMixture::<f64>::from_f64(&[0.1, 0.5, 2.0]).unwrap();
        let ab = mmd2_biased_value(&a, &b, &mix).unwrap().value;
        let ba = mmd2_biased_value(&b, &a, &mix).unwrap().value;
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= -1e-12);
        prop_assert!(mmd2_biased_value(&a, &a, &mix).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn unbiased_is_symmetric(a in prop::collection::vec(-1.0f64..2.0, 2..30),
                             b in prop::collection::vec(-1.0f64..2.0, 2..30)) {
        let mix = KernelMixture::<f64>::default();
        let ab = mmd2_unbiased(&a, &b, &mix).unwrap().value;
        let ba = mmd2_unbiased(&b, &a, &mix).unwrap().value;
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn pav_matches_oracle(pairs in prop::collection::vec((-5.0f64..5.0, 0.1f64..3.0), 1..25)) {
        let (v, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let fit = pav(&v, &w).unwrap();
        prop_assert!(fit.windows(2).all(|p| p[0] <= p[1] + 1e-12));
        for (x, y) in fit.iter().zip(isotonic_oracle(&v, &w)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let total = |xs: &[f64]| xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>();
        prop_assert!((total(&fit) - total(&v)).abs() < 1e-9);
    }

    #[test]
    fn coverage_nondecreasing_in_level(
        rows in prop::collection::vec((-2.0f64..2.0, 0.05f64..2.0, -4.0f64..4.0), 1..50)
    ) {
        let preds: Vec<_> = rows.iter().map(|&(m, s, _)| GaussianPrediction::new(m, s)).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let cov = empirical_coverage(&preds, &y, &ConfidenceGrid::default()).unwrap();
        prop_assert!(cov.windows(2).all(|c| c[0] <= c[1]));
    }

    #[test]
    fn scaler_round_trip(values in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        if let Some(s) = MinMaxScaler::fit(&values) {
            for &v in &values {
                let u = s.scale(v);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&u));
                prop_assert!((s.descale(u) - v).abs() <= 1e-9 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn quantile_inverts_cdf(mu in -5.0f64..5.0, sigma in 0.01f64..10.0, p in 1e-6f64..(1.0 - 1e-6)) {
        let g = GaussianPrediction::new(mu, sigma);
        let q = g.quantile(p).unwrap();
        prop_assert!((g.cdf(q) - p).abs() < 1e-9);
    }

    #[test]
    fn recalibrated_quantiles_monotone(seed_mu in -1.0f64..1.0, ps in prop::collection::vec(0.001f64..0.999, 2..20)) {
        let recal = IsotonicRecalibrator::identity(10);
        let pred = GaussianPrediction::new(seed_mu, 0.7);
        let mut ps = ps;
        ps.sort_by(f64::total_cmp);
        let qs: Vec<f64> = ps.iter().map(|&p| apply_recalibration(&recal, &pred, p).unwrap()).collect();
        prop_assert!(qs.windows(2).all(|q| q[0] <= q[1]));
    }
}

#[test]
fn worked_mmd_examples() {
    let one = KernelMixture::<f64>::from_f64(&[1.0]).unwrap();
    let v = mmd2_biased_value(&[0.0], &[1.0], &one).unwrap().value;
    assert_abs_diff_eq!(v, 0.786_938_680_6, epsilon = 1e-10);
    assert_abs_diff_eq!(mmd2_oracle(&[0.0], &[1.0], &[1.0]), 0.786_938_680_6, epsilon = 1e-10);
}
