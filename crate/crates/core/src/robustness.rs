//! Quantitative semantics over discrete-time signals.
//!
//! Robustness is only defined at times `t >= horizon(φ)`: windows are never
//! truncated at the start of an episode.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fragment::AtomicDictionary;
use crate::logic::{Formula, TimeInterval};
use crate::{Error, Result};

/// A finite trajectory together with the robustness of every predicate at
/// every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub dt: f64,
    states: Option<Vec<Vec<f64>>>,
    /// `mu[k][t]`, predicate-major.
    mu: Vec<Vec<f64>>,
}

impl Episode {
    /// Builds an episode from a predicate-major matrix `mu[k][t]`.
    pub fn new(id: u64, dt: f64, mu: Vec<Vec<f64>>) -> Result<Self> {
        let len = mu.first().map(Vec::len).unwrap_or(0);
        if mu.is_empty() || len == 0 {
            return Err(Error::InvalidConfig(
                "episode needs at least one predicate and one timestep".into(),
            ));
        }
        if let Some(row) = mu.iter().find(|r| r.len() != len) {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: row.len(),
            });
        }
        if mu.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite predicate value".into()));
        }
        Ok(Self {
            id,
            dt,
            states: None,
            mu,
        })
    }

    /// Builds an episode from per-step predicate vectors `rows[t][k]`.
    pub fn from_rows(id: u64, dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(row) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: row.len(),
            });
        }
        let mu = (0..m).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
        Self::new(id, dt, mu)
    }

    pub fn with_states(mut self, states: Vec<Vec<f64>>) -> Result<Self> {
        if states.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: states.len(),
            });
        }
        self.states = Some(states);
        Ok(self)
    }

    pub fn states(&self) -> Option<&[Vec<f64>]> {
        self.states.as_deref()
    }

    /// Number of timesteps, `T + 1`.
    pub fn len(&self) -> usize {
        self.mu[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Final time index `T`.
    pub fn last_time(&self) -> usize {
        self.len() - 1
    }

    pub fn num_predicates(&self) -> usize {
        self.mu.len()
    }

    pub fn predicate(&self, k: usize) -> &[f64] {
        &self.mu[k]
    }

    pub fn value(&self, k: usize, t: usize) -> f64 {
        self.mu[k][t]
    }

    /// Predicate vector `μ(t)`.
    pub fn row(&self, t: usize) -> Vec<f64> {
        self.mu.iter().map(|r| r[t]).collect()
    }

    fn check_time(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.last_time() {
            return Err(Error::TimeOutOfRange {
                t,
                min,
                max: self.last_time(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    PredicateHistory,
    Semantic,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisKind::PredicateHistory => "predicate-history",
            BasisKind::Semantic => "semantic",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisVector {
    pub kind: BasisKind,
    pub t: usize,
    pub values: Vec<f64>,
}

impl BasisVector {
    pub fn new(kind: BasisKind, t: usize, values: Vec<f64>) -> Self {
        Self { kind, t, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    fn pick(self, x: f64, y: f64) -> f64 {
        match self {
            Extremum::Min => x.min(y),
            Extremum::Max => x.max(y),
        }
    }

    /// True when `incoming` makes `stored` useless for every later window.
    fn dominates(self, incoming: f64, stored: f64) -> bool {
        match self {
            Extremum::Min => incoming <= stored,
            Extremum::Max => incoming >= stored,
        }
    }
}

/// Pointwise robustness of `f` at time `t`.
pub fn robustness(f: &Formula, ep: &Episode, t: usize) -> Result<f64> {
    ep.check_time(t, f.horizon())?;
    if f.max_predicate() >= ep.num_predicates() {
        return Err(Error::DimensionMismatch {
            expected: ep.num_predicates(),
            got: f.max_predicate() + 1,
        });
    }
    Ok(eval_at(f, ep, t))
}

fn eval_at(f: &Formula, ep: &Episode, t: usize) -> f64 {
    match f {
        Formula::Predicate(k) => ep.value(*k, t),
        Formula::And(l, r) => eval_at(l, ep, t).min(eval_at(r, ep, t)),
        Formula::Or(l, r) => eval_at(l, ep, t).max(eval_at(r, ep, t)),
        Formula::Always(i, c) => i
            .lags()
            .map(|j| eval_at(c, ep, t - j))
            .fold(f64::INFINITY, f64::min),
        Formula::Eventually(i, c) => i
            .lags()
            .map(|j| eval_at(c, ep, t - j))
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Sliding extremum over the backward window `[t-b, t-a]`.
///
/// Returns one value per valid time: `out[i]` is the extremum for
/// `t = interval.end() + i`. Amortised O(1) per step with a monotone deque.
pub fn windowed_extrema(series: &[f64], interval: TimeInterval, mode: Extremum) -> Vec<f64> {
    let (a, b) = (interval.start(), interval.end());
    if series.len() <= b {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(series.len() - b);
    let mut deque: VecDeque<usize> = VecDeque::with_capacity(b - a + 1);
    let mut next = 0;
    for t in b..series.len() {
        while next <= t - a {
            let v = series[next];
            while deque.back().is_some_and(|&i| mode.dominates(v, series[i])) {
                deque.pop_back();
            }
            deque.push_back(next);
            next += 1;
        }
        while deque.front().is_some_and(|&i| i < t - b) {
            deque.pop_front();
        }
        out.push(series[*deque.front().expect("window is nonempty")]);
    }
    out
}

/// Robustness of a formula over a contiguous range of times.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    /// Time of `values[0]`.
    pub start: usize,
    pub values: Vec<f64>,
}

impl Signal {
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.start).and_then(|i| self.values.get(i)).copied()
    }

    fn from(&self, start: usize) -> &[f64] {
        &self.values[(start - self.start).min(self.values.len())..]
    }
}

/// Batch robustness of `f` at every valid time `t ∈ [horizon(f), T]`.
pub fn robustness_signal(f: &Formula, ep: &Episode) -> Result<Signal> {
    if f.max_predicate() >= ep.num_predicates() {
        return Err(Error::DimensionMismatch {
            expected: ep.num_predicates(),
            got: f.max_predicate() + 1,
        });
    }
    Ok(signal(f, ep))
}

fn signal(f: &Formula, ep: &Episode) -> Signal {
    match f {
        Formula::Predicate(k) => Signal {
            start: 0,
            values: ep.predicate(*k).to_vec(),
        },
        Formula::And(l, r) | Formula::Or(l, r) => {
            let (l, r) = (signal(l, ep), signal(r, ep));
            let start = l.start.max(r.start);
            let op = if matches!(f, Formula::And(..)) {
                Extremum::Min
            } else {
                Extremum::Max
            };
            let values = l
                .from(start)
                .iter()
                .zip(r.from(start))
                .map(|(&x, &y)| op.pick(x, y))
                .collect();
            Signal { start, values }
        }
        Formula::Always(i, c) | Formula::Eventually(i, c) => {
            let child = signal(c, ep);
            let mode = if matches!(f, Formula::Always(..)) {
                Extremum::Min
            } else {
                Extremum::Max
            };
            Signal {
                start: child.start + i.end(),
                values: windowed_extrema(&child.values, *i, mode),
            }
        }
    }
}

/// `B^P_t`: `μ_k(t - j)` for `k` outer, `j = 0..=k_max` inner.
pub fn predicate_history_basis(ep: &Episode, k_max: usize, t: usize) -> Result<BasisVector> {
    ep.check_time(t, k_max)?;
    let values = (0..ep.num_predicates())
        .flat_map(|k| (0..=k_max).map(move |j| ep.value(k, t - j)))
        .collect();
    Ok(BasisVector::new(BasisKind::PredicateHistory, t, values))
}

/// `B^A_t`: the robustness of every dictionary atom at time `t`.
pub fn semantic_basis(ep: &Episode, dict: &AtomicDictionary, t: usize) -> Result<BasisVector> {
    ep.check_time(t, dict.k_max())?;
    let values = dict
        .atoms()
        .iter()
        .map(|a| robustness(a, ep, t))
        .collect::<Result<_>>()?;
    Ok(BasisVector::new(BasisKind::Semantic, t, values))
}

/// Semantic basis rows for every `t ∈ [K_max, T]`, one deque pass per atom.
/// Row `i` belongs to time `K_max + i`.
pub fn semantic_basis_series(ep: &Episode, dict: &AtomicDictionary) -> Result<Vec<Vec<f64>>> {
    let k_max = dict.k_max();
    ep.check_time(ep.last_time(), k_max)?;
    let columns = dict
        .atoms()
        .iter()
        .map(|a| robustness_signal(a, ep).map(|s| s.from(k_max).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(transpose(&columns))
}

/// Predicate-history rows for every `t ∈ [k_max, T]`.
pub fn predicate_history_series(ep: &Episode, k_max: usize) -> Result<Vec<Vec<f64>>> {
    ep.check_time(ep.last_time(), k_max)?;
    (k_max..ep.len())
        .map(|t| predicate_history_basis(ep, k_max, t).map(|b| b.values))
        .collect()
}

pub(crate) fn transpose(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = columns.first().map(Vec::len).unwrap_or(0);
    (0..rows)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect()
}
