mod common;

use certmon::logic::TimeInterval;
use certmon::robustness::{robustness, robustness_signal, windowed_extrema, Extremum};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn batch_matches_pointwise_and_oracle(
        f in formula_strategy(3, 5, 4),
        ep in episode_strategy(3, 1..40),
    ) {
        let h = f.horizon();
        let sig = robustness_signal(&f, &ep).unwrap();
        prop_assert_eq!(sig.start, h);
        prop_assert_eq!(sig.values.len(), ep.len().saturating_sub(h));
        for t in h..ep.len() {
            let batch = sig.at(t).unwrap();
            prop_assert_eq!(batch, robustness(&f, &ep, t).unwrap());
            prop_assert_eq!(batch, oracle(&f, &ep, t));
        }
        if h > 0 {
            prop_assert!(robustness(&f, &ep, h - 1).is_err());
        }
    }

    #[test]
    fn deque_matches_naive_scan(
        series in prop::collection::vec(-3.0f64..3.0, 0..60),
        interval in interval_strategy(12),
        ties in any::<bool>(),
    ) {
        let series: Vec<f64> = if ties { series.iter().map(|v| v.round()).collect() } else { series };
        let (a, b) = (interval.start(), interval.end());
        prop_assert_eq!(windowed_extrema(&series, interval, Extremum::Min), naive_window(&series, a, b, false));
        prop_assert_eq!(windowed_extrema(&series, interval, Extremum::Max), naive_window(&series, a, b, true));
    }

    #[test]
    fn min_max_duality(series in prop::collection::vec(-3.0f64..3.0, 1..50), interval in interval_strategy(8)) {
        let neg: Vec<f64> = series.iter().map(|v| -v).collect();
        let min = windowed_extrema(&series, interval, Extremum::Min);
        let max_neg: Vec<f64> = windowed_extrema(&neg, interval, Extremum::Max).into_iter().map(|v| -v).collect();
        prop_assert_eq!(min, max_neg);
    }

    /// A wider window can only lower the minimum and raise the maximum.
    #[test]
    fn windows_are_monotone_in_width(series in prop::collection::vec(-3.0f64..3.0, 1..50), b in 0usize..8, extra in 0usize..4) {
        let narrow = TimeInterval::new(0, b).unwrap();
        let wide = TimeInterval::new(0, b + extra).unwrap();
        let n_min = windowed_extrema(&series, narrow, Extremum::Min);
        let w_min = windowed_extrema(&series, wide, Extremum::Min);
        let n_max = windowed_extrema(&series, narrow, Extremum::Max);
        let w_max = windowed_extrema(&series, wide, Extremum::Max);
        for i in 0..w_min.len() {
            prop_assert!(w_min[i] <= n_min[i + extra]);
            prop_assert!(w_max[i] >= n_max[i + extra]);
        }
    }
}
