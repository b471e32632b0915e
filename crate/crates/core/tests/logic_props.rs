mod common;

use std::collections::BTreeSet;

use certmon::fragment::build_depth1_dictionary;
use certmon::logic::{atom_support, check_membership, horizon, parse_formula, predicate_lag_support, Formula, TimeInterval};
use certmon::robustness::{robustness, Episode};
use common::*;
use proptest::prelude::*;

const NAMES: [&str; 4] = ["p0", "speed", "G_x", "f1"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn print_then_parse_is_identity(f in formula_strategy(NAMES.len(), 9, 6)) {
        let text = f.display(&NAMES).to_string();
        let back = parse_formula(&text, &NAMES).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn horizon_is_largest_support_lag(f in formula_strategy(3, 6, 5)) {
        let support = predicate_lag_support(&f);
        let max_lag = support.iter().map(|pl| pl.lag).max().unwrap();
        prop_assert_eq!(horizon(&f), max_lag);
        prop_assert_eq!(horizon(&f), oracle_horizon(&f));
    }

    #[test]
    fn wider_windows_have_larger_support(
        g in formula_strategy(3, 4, 3),
        inner in interval_strategy(6),
        extra in 0usize..4,
    ) {
        let outer = TimeInterval::new(inner.start().saturating_sub(extra), inner.end() + extra).unwrap();
        let small = predicate_lag_support(&Formula::always(inner, g.clone()));
        let big = predicate_lag_support(&Formula::eventually(outer, g));
        prop_assert!(small.is_subset(&big));
    }

    #[test]
    fn membership_leaves_match_atom_support(seed in any::<u64>()) {
        let dict = build_depth1_dictionary(crossroad_names(), &crossroad_intervals()).unwrap();
        let mut r = rng(seed);
        let f = random_fragment_formula(&mut r, &dict, 5);
        let dec = check_membership(&f, &dict).unwrap();
        let support = atom_support(&f, &dict).unwrap();
        prop_assert_eq!(dec.leaves(), support.clone());
        // Every leaf really is an atom occurring in the formula.
        let mut atoms = BTreeSet::new();
        collect_atoms(&f, &dict, &mut atoms);
        prop_assert_eq!(atoms, support);
    }
}

fn collect_atoms(f: &Formula, dict: &certmon::fragment::AtomicDictionary, out: &mut BTreeSet<usize>) {
    if let Some(i) = dict.index_of(f) {
        out.insert(i);
        return;
    }
    match f {
        Formula::And(a, b) | Formula::Or(a, b) => {
            collect_atoms(a, dict, out);
            collect_atoms(b, dict, out);
        }
        _ => panic!("not a fragment formula"),
    }
}

/// Perturbing one past sample shows which lags a formula reads.
#[test]
fn perturbation_reveals_horizon_seven() {
    let names = ["a", "b"];
    let f = parse_formula("G[0,3] F[2,4] a & b", &names).unwrap();
    assert_eq!(horizon(&f), 7);
    let t = 20;
    // `a` is low at lags 5 and 6 and high elsewhere, so the inner window
    // ending at lag 3 is decided by lag 7 alone; `b` never binds.
    let a: Vec<f64> = (0..30)
        .map(|s| if s + 5 == t || s + 6 == t { -10.0 } else { 10.0 })
        .collect();
    let base = Episode::new(0, 0.1, vec![a, vec![100.0; 30]]).unwrap();
    let with = |lag: usize, v: f64| {
        let mut mu = vec![base.predicate(0).to_vec(), base.predicate(1).to_vec()];
        mu[0][t - lag] = v;
        Episode::new(0, 0.1, mu).unwrap()
    };
    let rho = |ep: &Episode| robustness(&f, ep, t).unwrap();
    assert_eq!(rho(&with(7, -3.0)), -3.0);
    assert_eq!(rho(&with(7, 2.0)), 2.0);

    let mut r = rng(11);
    for _ in 0..50 {
        let ep = random_episode(&mut r, 0, 2, 30);
        for lag in 8..=t {
            for v in [-50.0, 50.0] {
                let mut mu = vec![ep.predicate(0).to_vec(), ep.predicate(1).to_vec()];
                mu[0][t - lag] = v;
                mu[1][t - lag] = v;
                let moved = Episode::new(0, 0.1, mu).unwrap();
                assert_eq!(rho(&moved), rho(&ep), "lag {lag} is beyond the horizon");
            }
        }
    }
}

#[test]
fn negation_is_rejected() {
    for text in ["!p0", "G[0,1] ~speed", "¬f1"] {
        assert!(matches!(parse_formula(text, &NAMES), Err(certmon::Error::Negation { .. })));
    }
}

#[test]
fn parse_errors_report_position() {
    match parse_formula("p0 &\n  G[3,1] speed", &NAMES) {
        Err(certmon::Error::ReversedInterval { a: 3, b: 1 }) => {}
        other => panic!("{other:?}"),
    }
    match parse_formula("p0 & nope", &NAMES) {
        Err(certmon::Error::UnknownPredicate { name, line: 1, column: 6 }) => assert_eq!(name, "nope"),
        other => panic!("{other:?}"),
    }
}
