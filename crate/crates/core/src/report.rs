//! Certification metrics on test episodes and the horizon sweep of radii.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{sample_time, CalibratedMonitor, Level, MonitorKind, Predictor};
use crate::logic::{Formula, TimeInterval};
use crate::monitors::{prepare_all, run_prepared, FormulaError, Label, MonitorVerdict};
use crate::robustness::Episode;
use crate::{Error, Result};

/// Mixed into the monitor seed when sampling test-time evaluation points,
/// so they are independent of the calibration draws.
pub const EVAL_SALT: u64 = 0x7E57_0000_0000_0001;

/// Integer tallies behind one report row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub valid: usize,
    pub safe: usize,
    /// Safe verdicts where the true robustness is nonnegative.
    pub true_safe: usize,
    /// Safe verdicts where the true robustness is negative.
    pub false_safe: usize,
    pub gt_safe: usize,
    pub covered: usize,
    pub coverage_trials: usize,
}

impl MetricCounts {
    pub fn merge(&mut self, o: &MetricCounts) {
        self.valid += o.valid;
        self.safe += o.safe;
        self.true_safe += o.true_safe;
        self.false_safe += o.false_safe;
        self.gt_safe += o.gt_safe;
        self.covered += o.covered;
        self.coverage_trials += o.coverage_trials;
    }

    pub fn gt_unsafe(&self) -> usize {
        self.valid - self.gt_safe
    }

    fn pct(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| 100.0 * num as f64 / den as f64)
    }

    pub fn csr(&self) -> f64 {
        Self::pct(self.safe, self.valid).unwrap_or(0.0)
    }

    /// Blank when nothing was certified safe.
    pub fn prec(&self) -> Option<f64> {
        Self::pct(self.true_safe, self.safe)
    }

    /// Blank when every valid time is truly safe.
    pub fn fpr(&self) -> Option<f64> {
        Self::pct(self.false_safe, self.gt_unsafe())
    }

    pub fn gt(&self) -> f64 {
        Self::pct(self.gt_safe, self.valid).unwrap_or(0.0)
    }

    pub fn coverage(&self) -> f64 {
        Self::pct(self.covered, self.coverage_trials).unwrap_or(0.0)
    }
}

/// Which times count toward coverage in one episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoverageEvent {
    /// Level-2: the bound at one sampled time.
    At(usize),
    /// Level-1: the bound at every valid time simultaneously.
    AllTimes,
}

/// Tallies one episode's verdicts against true robustness over valid times `t ≥ k_max`.
pub fn compute_metrics(
    verdicts: &[MonitorVerdict],
    truths: &[Option<f64>],
    k_max: usize,
    event: CoverageEvent,
) -> Result<MetricCounts> {
    if verdicts.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: verdicts.len(),
        });
    }
    let mut c = MetricCounts::default();
    let mut all_covered = true;
    for (t, (v, truth)) in verdicts.iter().zip(truths).enumerate().skip(k_max) {
        let (Some(rho), Some(lb)) = (*truth, v.lb) else {
            return Err(Error::InvalidConfig(format!("no bound or truth at valid time {t}")));
        };
        if v.t != t {
            return Err(Error::InvalidConfig(format!("verdict for t={} found at position {t}", v.t)));
        }
        c.valid += 1;
        let safe = v.label == Label::Safe;
        c.safe += safe as usize;
        c.gt_safe += (rho >= 0.0) as usize;
        c.true_safe += (safe && rho >= 0.0) as usize;
        c.false_safe += (safe && rho < 0.0) as usize;
        let hit = lb <= rho;
        all_covered &= hit;
        if event == CoverageEvent::At(t) {
            c.coverage_trials = 1;
            c.covered = hit as usize;
        }
    }
    match event {
        CoverageEvent::AllTimes if c.valid > 0 => {
            c.coverage_trials = 1;
            c.covered = all_covered as usize;
        }
        CoverageEvent::At(t) if c.coverage_trials == 0 => {
            return Err(Error::TimeOutOfRange {
                t,
                min: k_max,
                max: verdicts.len().saturating_sub(1),
            })
        }
        _ => {}
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub formula: String,
    pub monitor: MonitorKind,
    pub level: Level,
    pub q_phi: f64,
    pub csr: f64,
    pub prec: Option<f64>,
    pub fpr: Option<f64>,
    pub gt: f64,
    pub coverage: f64,
    pub counts: MetricCounts,
}

impl ReportRow {
    fn new(formula: String, mon: &CalibratedMonitor, q_phi: f64, counts: MetricCounts) -> Self {
        Self {
            formula,
            monitor: mon.kind,
            level: mon.level,
            q_phi,
            csr: counts.csr(),
            prec: counts.prec(),
            fpr: counts.fpr(),
            gt: counts.gt(),
            coverage: counts.coverage(),
            counts,
        }
    }
}

/// Coverage event of a test episode under the monitor's level.
pub fn coverage_event(mon: &CalibratedMonitor, ep: &Episode) -> CoverageEvent {
    match mon.level {
        Level::Level1 => CoverageEvent::AllTimes,
        Level::Level2 => CoverageEvent::At(sample_time(mon.seed ^ EVAL_SALT, ep.id, mon.k_max(), ep.last_time())),
    }
}

/// Evaluation of one monitor on test episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<ReportRow>,
    /// Formulas the monitor cannot certify (outside the fragment, too long a horizon).
    pub errors: Vec<FormulaError>,
}

/// Runs every formula through `mon` on `episodes` and aggregates the metrics.
pub fn evaluate(
    mon: &CalibratedMonitor,
    predictor: &dyn Predictor,
    episodes: &[Episode],
    formulas: &[Formula],
) -> Result<Evaluation> {
    let (prepared, errors) = prepare_all(mon, formulas);
    let per_episode = episodes
        .par_iter()
        .map(|ep| {
            let run = run_prepared(ep, predictor, mon, &prepared, Vec::new())?;
            let event = coverage_event(mon, ep);
            run.traces
                .iter()
                .map(|tr| compute_metrics(&tr.verdicts, &tr.truth, mon.k_max(), event))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = prepared
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut total = MetricCounts::default();
            for counts in &per_episode {
                total.merge(&counts[i]);
            }
            ReportRow::new(p.text.clone(), mon, p.radius, total)
        })
        .collect();
    Ok(Evaluation { rows, errors })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub monitor: MonitorKind,
    pub level: Level,
    pub k: usize,
    pub q_phi: f64,
}

/// Active-support radius of `G[0,K] predicate` for each `K`, read from the score cache.
pub fn horizon_sweep(mon: &CalibratedMonitor, predicate: &str, ks: &[usize]) -> Result<Vec<SweepPoint>> {
    let names = mon.predicate_names();
    let k = names
        .iter()
        .position(|n| n == predicate)
        .ok_or_else(|| Error::UnknownPredicate {
            name: predicate.to_string(),
            line: 1,
            column: 1,
        })?;
    ks.iter()
        .map(|&horizon| {
            let f = Formula::always(TimeInterval::new(0, horizon)?, Formula::pred(k));
            let support: BTreeSet<usize> = mon.decoder(&f)?.support().clone();
            Ok(SweepPoint {
                monitor: mon.kind,
                level: mon.level,
                k: horizon,
                q_phi: mon.radius_for_support(&support)?,
            })
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt1(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

pub const REPORT_HEADER: &str = "formula,monitor,level,q_phi,csr,prec,fpr,gt,coverage";

/// CSV with percentages rounded to one decimal.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.4},{:.1},{},{},{:.1},{:.1}\n",
            csv_field(&r.formula),
            r.monitor,
            r.level,
            r.q_phi,
            r.csr,
            opt1(r.prec),
            opt1(r.fpr),
            r.gt,
            r.coverage
        ));
    }
    out
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("monitor,level,k,q_phi\n");
    for p in points {
        out.push_str(&format!("{},{},{},{:.6}\n", p.monitor, p.level, p.k, p.q_phi));
    }
    out
}

#[derive(Serialize)]
struct Sidecar<'a> {
    rows: &'a [ReportRow],
    sweep: &'a [SweepPoint],
    errors: Vec<SidecarError<'a>>,
}

#[derive(Serialize)]
struct SidecarError<'a> {
    monitor: MonitorKind,
    level: Level,
    formula: usize,
    message: &'a str,
}

/// Paths written by [`write_report`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub sweep: PathBuf,
}

impl ReportFiles {
    pub fn for_output(csv: &Path) -> Self {
        let stem = csv
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report".into());
        Self {
            csv: csv.to_path_buf(),
            json: csv.with_file_name(format!("{stem}.json")),
            sweep: csv.with_file_name(format!("{stem}.sweep.csv")),
        }
    }
}

/// Writes the rounded CSV, the full-precision JSON sidecar and the sweep CSV.
pub fn write_report(
    out: &Path,
    evaluations: &[(&CalibratedMonitor, Evaluation)],
    sweep: &[SweepPoint],
) -> Result<ReportFiles> {
    let files = ReportFiles::for_output(out);
    let rows: Vec<ReportRow> = evaluations.iter().flat_map(|(_, e)| e.rows.iter().cloned()).collect();
    let errors = evaluations
        .iter()
        .flat_map(|(m, e)| {
            e.errors.iter().map(|err| SidecarError {
                monitor: m.kind,
                level: m.level,
                formula: err.id,
                message: &err.message,
            })
        })
        .collect();
    let sidecar = Sidecar {
        rows: &rows,
        sweep,
        errors,
    };
    fs::write(&files.csv, report_csv(&rows)).map_err(|e| Error::io(&files.csv, e))?;
    let json = serde_json::to_string_pretty(&sidecar).expect("report serializes");
    fs::write(&files.json, json).map_err(|e| Error::io(&files.json, e))?;
    fs::write(&files.sweep, sweep_csv(sweep)).map_err(|e| Error::io(&files.sweep, e))?;
    Ok(files)
}
