//! Online monitors producing per-timestep certified verdicts.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::conformal::{interval_propagate, CalibratedMonitor, MonitorKind, PredictionTarget, Predictor};
use crate::fragment::{BasisSpec, Decoder};
use crate::logic::Formula;
use crate::robustness::{robustness_signal, BasisKind, BasisVector, Episode};
use crate::{Error, Result};

/// Ring of the last `K_max + 1` predicted predicate vectors.
#[derive(Clone, Debug)]
pub struct RollingBuffer {
    capacity: usize,
    num_predicates: usize,
    ring: VecDeque<Vec<f64>>,
    steps: usize,
}

impl RollingBuffer {
    pub fn new(num_predicates: usize, k_max: usize) -> Self {
        Self {
            capacity: k_max + 1,
            num_predicates,
            ring: VecDeque::with_capacity(k_max + 1),
            steps: 0,
        }
    }

    pub fn for_monitor(mon: &CalibratedMonitor) -> Self {
        Self::new(mon.basis.num_predicates(), mon.k_max())
    }

    pub fn k_max(&self) -> usize {
        self.capacity - 1
    }

    pub fn fill(&self) -> usize {
        self.ring.len()
    }

    pub fn is_warm(&self) -> bool {
        self.ring.len() == self.capacity
    }

    /// Time of the most recent step, if any step was taken.
    pub fn current_time(&self) -> Option<usize> {
        self.steps.checked_sub(1)
    }

    pub fn push(&mut self, mu_hat: &[f64]) -> Result<()> {
        if mu_hat.len() != self.num_predicates {
            return Err(Error::DimensionMismatch {
                expected: self.num_predicates,
                got: mu_hat.len(),
            });
        }
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(mu_hat.to_vec());
        self.steps += 1;
        Ok(())
    }

    /// A missing prediction: time advances and the window must refill.
    pub fn drop_step(&mut self) {
        self.ring.clear();
        self.steps += 1;
    }

    /// Buffered predictions, oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.ring.iter().map(Vec::as_slice)
    }

    /// Reconstructed `B̂^P_t` once warm.
    pub fn window(&self) -> Option<BasisVector> {
        if !self.is_warm() {
            return None;
        }
        let newest = self.capacity - 1;
        let values = (0..self.num_predicates)
            .flat_map(|k| (0..self.capacity).map(move |j| (k, newest - j)))
            .map(|(k, i)| self.ring[i][k])
            .collect();
        Some(BasisVector::new(BasisKind::PredicateHistory, self.current_time()?, values))
    }
}

pub fn rolling_step(buf: &mut RollingBuffer, mu_hat: &[f64]) -> Result<()> {
    buf.push(mu_hat)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Safe,
    Uncertain,
    WarmingUp,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Safe => "safe",
            Label::Uncertain => "uncertain",
            Label::WarmingUp => "warming_up",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub t: usize,
    pub formula: usize,
    /// Certified lower bound on robustness; absent during warm-up.
    pub lb: Option<f64>,
    pub label: Label,
}

impl MonitorVerdict {
    fn warming_up(t: usize, formula: usize) -> Self {
        Self {
            t,
            formula,
            lb: None,
            label: Label::WarmingUp,
        }
    }

    fn from_bound(t: usize, formula: usize, lb: f64) -> Self {
        Self {
            t,
            formula,
            lb: Some(lb),
            label: if lb >= 0.0 { Label::Safe } else { Label::Uncertain },
        }
    }
}

/// A formula compiled against a monitor together with its radius.
#[derive(Clone, Debug)]
pub struct PreparedFormula {
    pub id: usize,
    pub text: String,
    pub formula: Formula,
    pub decoder: Decoder,
    pub radius: f64,
}

impl PreparedFormula {
    pub fn new(mon: &CalibratedMonitor, id: usize, formula: Formula) -> Result<Self> {
        let decoder = mon.decoder(&formula)?;
        let radius = mon.radius_for(&formula)?;
        let text = formula.display(&mon.predicate_names()).to_string();
        Ok(Self {
            id,
            text,
            formula,
            decoder,
            radius,
        })
    }
}

fn expect_kind(mon: &CalibratedMonitor, kinds: &[MonitorKind]) -> Result<()> {
    if !kinds.contains(&mon.kind) {
        return Err(Error::KindMismatch {
            expected: kinds.iter().map(ToString::to_string).collect::<Vec<_>>().join("|"),
            got: mon.kind.to_string(),
        });
    }
    Ok(())
}

/// Certifies from the rolling buffer: shift the buffered window down by
/// `q_φ·σ` and decode with the predicate-history decoder.
pub fn rolling_certify(buf: &RollingBuffer, mon: &CalibratedMonitor, f: &PreparedFormula) -> Result<MonitorVerdict> {
    expect_kind(mon, &[MonitorKind::Rolling])?;
    certify_window(buf, mon, f, |window| {
        let lower = mon.lower_basis(&window.values, f.radius)?;
        f.decoder.decode_values(&lower)
    })
}

/// Observer baseline: symmetric intervals `μ̂ ± q` propagated through interval
/// semantics; the verdict uses the lower endpoint.
pub fn observer_certify(buf: &RollingBuffer, mon: &CalibratedMonitor, f: &PreparedFormula) -> Result<MonitorVerdict> {
    expect_kind(mon, &[MonitorKind::Observer])?;
    certify_window(buf, mon, f, |window| {
        let lower = mon.lower_basis(&window.values, f.radius)?;
        let upper = mon.lower_basis(&window.values, -f.radius)?;
        let lower = BasisVector::new(BasisKind::PredicateHistory, window.t, lower);
        let upper = BasisVector::new(BasisKind::PredicateHistory, window.t, upper);
        Ok(interval_propagate(&f.formula, &lower, &upper, mon.basis.num_predicates(), mon.k_max())?.lo)
    })
}

fn certify_window(
    buf: &RollingBuffer,
    mon: &CalibratedMonitor,
    f: &PreparedFormula,
    bound: impl FnOnce(&BasisVector) -> Result<f64>,
) -> Result<MonitorVerdict> {
    if buf.k_max() != mon.k_max() {
        return Err(Error::DimensionMismatch {
            expected: mon.k_max() + 1,
            got: buf.k_max() + 1,
        });
    }
    let t = buf.current_time().unwrap_or(0);
    match buf.window() {
        None => Ok(MonitorVerdict::warming_up(t, f.id)),
        Some(window) => Ok(MonitorVerdict::from_bound(t, f.id, bound(&window)?)),
    }
}

/// Certifies from a predicted semantic basis vector.
pub fn semantic_certify(basis_hat: &BasisVector, mon: &CalibratedMonitor, f: &PreparedFormula) -> Result<MonitorVerdict> {
    expect_kind(mon, &[MonitorKind::Semantic])?;
    if basis_hat.kind != BasisKind::Semantic {
        return Err(Error::KindMismatch {
            expected: BasisKind::Semantic.to_string(),
            got: basis_hat.kind.to_string(),
        });
    }
    if basis_hat.t < mon.k_max() {
        return Ok(MonitorVerdict::warming_up(basis_hat.t, f.id));
    }
    let lower = mon.lower_basis(&basis_hat.values, f.radius)?;
    Ok(MonitorVerdict::from_bound(basis_hat.t, f.id, f.decoder.decode_values(&lower)?))
}

/// Verdicts and ground truth of one formula over one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct FormulaTrace {
    pub id: usize,
    pub text: String,
    pub radius: f64,
    /// One verdict per timestep `0..=T`.
    pub verdicts: Vec<MonitorVerdict>,
    /// True robustness where defined (`t ≥ horizon`).
    pub truth: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormulaError {
    pub id: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRun {
    pub episode_id: u64,
    pub traces: Vec<FormulaTrace>,
    pub errors: Vec<FormulaError>,
}

/// Prepares every formula, recording unsupported ones instead of failing.
pub fn prepare_all(mon: &CalibratedMonitor, formulas: &[Formula]) -> (Vec<PreparedFormula>, Vec<FormulaError>) {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (id, f) in formulas.iter().enumerate() {
        match PreparedFormula::new(mon, id, f.clone()) {
            Ok(p) => ok.push(p),
            Err(e) => errors.push(FormulaError {
                id,
                message: e.to_string(),
            }),
        }
    }
    (ok, errors)
}

/// Streams one episode through the monitor, certifying every formula at
/// every step.
pub fn run_episode(
    ep: &Episode,
    predictor: &dyn Predictor,
    mon: &CalibratedMonitor,
    formulas: &[Formula],
) -> Result<EpisodeRun> {
    let (prepared, errors) = prepare_all(mon, formulas);
    run_prepared(ep, predictor, mon, &prepared, errors)
}

pub fn run_prepared(
    ep: &Episode,
    predictor: &dyn Predictor,
    mon: &CalibratedMonitor,
    prepared: &[PreparedFormula],
    errors: Vec<FormulaError>,
) -> Result<EpisodeRun> {
    let len = ep.len();
    let mut traces: Vec<FormulaTrace> = prepared
        .iter()
        .map(|p| {
            let truth = robustness_signal(&p.formula, ep).map(|s| (0..len).map(|t| s.at(t)).collect())?;
            Ok(FormulaTrace {
                id: p.id,
                text: p.text.clone(),
                radius: p.radius,
                verdicts: Vec::with_capacity(len),
                truth,
            })
        })
        .collect::<Result<_>>()?;

    match (&mon.kind, &mon.basis) {
        (MonitorKind::Semantic, BasisSpec::Semantic(dict)) => {
            let preds = predictor.predict(ep, PredictionTarget::Semantic(dict))?;
            for t in 0..len {
                let row = t.checked_sub(preds.start).and_then(|i| preds.rows.get(i));
                for (p, trace) in prepared.iter().zip(&mut traces) {
                    let v = match row {
                        Some(row) => semantic_certify(&BasisVector::new(BasisKind::Semantic, t, row.clone()), mon, p)?,
                        None => MonitorVerdict::warming_up(t, p.id),
                    };
                    trace.verdicts.push(v);
                }
            }
        }
        (MonitorKind::Rolling | MonitorKind::Observer, BasisSpec::PredicateHistory { .. }) => {
            let preds = predictor.predict(ep, PredictionTarget::Predicates)?;
            let mut buf = RollingBuffer::for_monitor(mon);
            for row in preds.rows.iter().take(len) {
                buf.push(row)?;
                for (p, trace) in prepared.iter().zip(&mut traces) {
                    let v = if mon.kind == MonitorKind::Rolling {
                        rolling_certify(&buf, mon, p)?
                    } else {
                        observer_certify(&buf, mon, p)?
                    };
                    trace.verdicts.push(v);
                }
            }
        }
        _ => {
            return Err(Error::KindMismatch {
                expected: mon.kind.basis_kind().to_string(),
                got: mon.basis.kind().to_string(),
            })
        }
    }
    Ok(EpisodeRun {
        episode_id: ep.id,
        traces,
        errors,
    })
}
