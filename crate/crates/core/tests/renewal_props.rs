use levykick_core::renewal::{mean_inverse_time, sprinkling, RenewalSeries, WaitingTimeDist};
use levykick_core::theory::{var_p_discrete, var_p0, noiseless_force_correlation};
use proptest::prelude::*;

fn dist() -> impl Strategy<Value = WaitingTimeDist> {
    prop_oneof![
        Just(WaitingTimeDist::DeterministicUnit),
        (0.1f64..3.0).prop_map(|a| WaitingTimeDist::yule_simon(a).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sprinkling_is_a_probability(d in dist(), h in 1usize..200) {
        let f = sprinkling(&d, h);
        prop_assert_eq!(f.len(), h + 1);
        for v in &f[1..] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(v));
        }
    }

    #[test]
    fn mean_count_increments_are_sprinkling(d in dist(), h in 1usize..200) {
        let f = sprinkling(&d, h);
        let n = mean_inverse_time(&d, h);
        for t in 1..=h {
            prop_assert!((n[t] - n[t - 1] - f[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn mgf_bounds_and_monotonicity(d in dist(), z in -2.0f64..0.0, h in 1usize..150) {
        let s = RenewalSeries::compute(&d, z, h);
        for t in 1..=h {
            prop_assert!(s.mgf[t] <= s.mgf[t - 1] + 1e-12);
            // Jensen: E[e^{zN}] >= e^{z E[N]}
            prop_assert!(s.mgf[t] >= (z * s.mean_count[t]).exp() - 1e-12);
        }
    }

    #[test]
    fn two_time_factor_is_one_on_empty_windows(d in dist(), z in -1.0f64..0.0, h in 2usize..120) {
        let s = RenewalSeries::compute(&d, z, h);
        for a in [1, h / 2, h] {
            prop_assert!((s.two_time(a as u64, a as u64).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((s.two_time(a as u64, 0).unwrap() - s.mgf[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_variance_is_recovered(d_star in 5.0f64..80.0, hbar in 0.1f64..0.6, h in 5usize..300) {
        let t_star = d_star / (hbar * hbar);
        let v: Vec<f64> = (0..=h + 1).map(|t| var_p0(t as f64, d_star, t_star)).collect();
        let c0 = noiseless_force_correlation(&v);
        let s = RenewalSeries::compute(&WaitingTimeDist::DeterministicUnit, 0.0, h);
        let out = var_p_discrete(&c0, &s, 0.0, h);
        for t in 0..=h {
            prop_assert!((out[t] - v[t]).abs() <= 1e-9 * v[t].max(1.0));
        }
    }
}
