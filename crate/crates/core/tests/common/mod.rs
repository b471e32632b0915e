//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use certmon::fragment::AtomicDictionary;
use certmon::logic::{Formula, TimeInterval};
use certmon::robustness::Episode;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Robustness straight from the recursive definition, no windowing tricks.
pub fn oracle(f: &Formula, ep: &Episode, t: usize) -> f64 {
    match f {
        Formula::Predicate(k) => ep.value(*k, t),
        Formula::And(a, b) => oracle(a, ep, t).min(oracle(b, ep, t)),
        Formula::Or(a, b) => oracle(a, ep, t).max(oracle(b, ep, t)),
        Formula::Always(i, g) => (t - i.end()..=t - i.start())
            .map(|s| oracle(g, ep, s))
            .fold(f64::INFINITY, f64::min),
        Formula::Eventually(i, g) => (t - i.end()..=t - i.start())
            .map(|s| oracle(g, ep, s))
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Largest lag the oracle can touch, by walking every path.
pub fn oracle_horizon(f: &Formula) -> usize {
    match f {
        Formula::Predicate(_) => 0,
        Formula::And(a, b) | Formula::Or(a, b) => oracle_horizon(a).max(oracle_horizon(b)),
        Formula::Always(i, g) | Formula::Eventually(i, g) => i.end() + oracle_horizon(g),
    }
}

/// `out[i]` = min (or max) of `series[i ..= i + b - a]`, aligned with `t = b + i`.
/// Ties (including `-0.0` against `0.0`) resolve to the most recent sample.
pub fn naive_window(series: &[f64], a: usize, b: usize, max: bool) -> Vec<f64> {
    if series.len() <= b {
        return Vec::new();
    }
    (b..series.len())
        .map(|t| {
            let mut best = series[t - b];
            for &v in &series[t - b + 1..=t - a] {
                if (max && v >= best) || (!max && v <= best) {
                    best = v;
                }
            }
            best
        })
        .collect()
}

pub fn random_episode(rng: &mut impl Rng, id: u64, m: usize, len: usize) -> Episode {
    let mu = (0..m)
        .map(|_| {
            // Mix smooth drifts, plateaus and exact ties.
            let mut v: f64 = rng.gen_range(-2.0..2.0);
            (0..len)
                .map(|_| {
                    match rng.gen_range(0..4) {
                        0 => {}
                        1 => v = (v * 4.0).round() / 4.0,
                        _ => v += rng.gen_range(-0.5..0.5),
                    }
                    v
                })
                .collect()
        })
        .collect();
    Episode::new(id, 0.1, mu).unwrap()
}

pub fn random_interval(rng: &mut impl Rng, max_b: usize) -> TimeInterval {
    let b = rng.gen_range(0..=max_b);
    let a = rng.gen_range(0..=b);
    TimeInterval::new(a, b).unwrap()
}

/// Arbitrary PNF formula with total horizon at most `budget`.
pub fn random_formula(rng: &mut impl Rng, m: usize, depth: usize, budget: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.25) {
        return Formula::pred(rng.gen_range(0..m));
    }
    match rng.gen_range(0..4) {
        0 => Formula::and(
            random_formula(rng, m, depth - 1, budget),
            random_formula(rng, m, depth - 1, budget),
        ),
        1 => Formula::or(
            random_formula(rng, m, depth - 1, budget),
            random_formula(rng, m, depth - 1, budget),
        ),
        op => {
            let i = random_interval(rng, budget);
            let rest = budget - i.end();
            let child = random_formula(rng, m, depth - 1, rest);
            if op == 2 {
                Formula::always(i, child)
            } else {
                Formula::eventually(i, child)
            }
        }
    }
}

/// Random ∧/∨ combination of dictionary atoms.
pub fn random_fragment_formula(rng: &mut impl Rng, dict: &AtomicDictionary, depth: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.3) {
        return dict.atoms().choose(rng).unwrap().clone();
    }
    let a = random_fragment_formula(rng, dict, depth - 1);
    let b = random_fragment_formula(rng, dict, depth - 1);
    if rng.gen_bool(0.5) {
        Formula::and(a, b)
    } else {
        Formula::or(a, b)
    }
}

pub fn crossroad_names() -> Vec<String> {
    certmon::benchmark::PREDICATE_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn crossroad_intervals() -> Vec<TimeInterval> {
    [1, 2, 4, 8, 16].iter().map(|&b| TimeInterval::new(0, b).unwrap()).collect()
}

pub fn interval_strategy(max_b: usize) -> impl Strategy<Value = TimeInterval> {
    (0..=max_b)
        .prop_flat_map(|b| (0..=b, Just(b)))
        .prop_map(|(a, b)| TimeInterval::new(a, b).unwrap())
}

/// PNF formulas of depth at most `depth` over `m` predicates.
pub fn formula_strategy(m: usize, max_b: usize, depth: u32) -> impl Strategy<Value = Formula> {
    let leaf = (0..m).prop_map(Formula::pred);
    leaf.prop_recursive(depth, 64, 2, move |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
            (interval_strategy(max_b), inner.clone()).prop_map(|(i, g)| Formula::always(i, g)),
            (interval_strategy(max_b), inner).prop_map(|(i, g)| Formula::eventually(i, g)),
        ]
    })
}

pub fn episode_strategy(m: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = Episode> {
    len.prop_flat_map(move |n| {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, n), m)
            .prop_map(|mu| Episode::new(0, 0.1, mu).unwrap())
    })
}
