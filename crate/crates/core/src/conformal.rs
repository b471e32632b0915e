//! Split-conformal calibration of basis predictions and certified lower bounds.
//!
//! A calibrated radius `C` turns a predicted basis `B̂` into the coordinatewise
//! lower bound `B̂ - C·σ`. Because every decoder is monotone, decoding the lower
//! bound lower-bounds the robustness of every formula at once whenever the
//! coordinatewise event holds.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fragment::{compile_decoder, AtomicDictionary, BasisSpec, Decoder, DictionaryDoc};
use crate::logic::{parse_formula, Formula};
use crate::robustness::{BasisKind, BasisVector, Episode};
use crate::rng::stream_rng;
use crate::{Error, Result};

pub const MODEL_VERSION: u32 = 1;
pub const SCORE_CACHE_VERSION: u32 = 1;

/// Guard against `(n+1)(1-α)` landing a hair above an integer.
const RANK_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Episode-wise: the maximum score over all valid times.
    Level1,
    /// Random-time: the score at one uniformly sampled valid time.
    Level2,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Level1 => "1",
            Level::Level2 => "2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorKind {
    /// Predicts the semantic basis; calibrated after temporal composition.
    Semantic,
    /// Predicts per-step predicates and buffers them; calibrated before composition.
    Rolling,
    /// Symmetric per-coordinate intervals with a Bonferroni split.
    Observer,
}

impl MonitorKind {
    pub fn basis_kind(self) -> BasisKind {
        match self {
            MonitorKind::Semantic => BasisKind::Semantic,
            MonitorKind::Rolling | MonitorKind::Observer => BasisKind::PredicateHistory,
        }
    }
}

impl fmt::Display for MonitorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MonitorKind::Semantic => "semantic",
            MonitorKind::Rolling => "rolling",
            MonitorKind::Observer => "observer",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    FragmentWide,
    ActiveSupport(BTreeSet<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreConfig {
    sigma: Vec<f64>,
    scope: Scope,
    alpha: f64,
    level: Level,
}

impl ScoreConfig {
    pub fn new(sigma: Vec<f64>, scope: Scope, alpha: f64, level: Level) -> Result<Self> {
        if sigma.is_empty() || sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("sigma must be positive and finite".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {alpha} not in (0,1)")));
        }
        if let Scope::ActiveSupport(s) = &scope {
            if s.is_empty() {
                return Err(Error::EmptySupport);
            }
            if let Some(&i) = s.iter().next_back().filter(|&&i| i >= sigma.len()) {
                return Err(Error::DimensionMismatch {
                    expected: sigma.len(),
                    got: i + 1,
                });
            }
        }
        Ok(Self {
            sigma,
            scope,
            alpha,
            level,
        })
    }

    /// `σ = 1` on every coordinate.
    pub fn unit(dim: usize, scope: Scope, alpha: f64, level: Level) -> Result<Self> {
        Self::new(vec![1.0; dim], scope, alpha, level)
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn level(&self) -> Level {
        self.level
    }
}

/// Coordinatewise `max(0, predicted - truth)`.
pub fn one_sided_errors(predicted: &BasisVector, truth: &BasisVector) -> Result<Vec<f64>> {
    if predicted.kind != truth.kind {
        return Err(Error::KindMismatch {
            expected: truth.kind.to_string(),
            got: predicted.kind.to_string(),
        });
    }
    check_dim(truth.dim(), predicted.dim())?;
    Ok(predicted
        .values
        .iter()
        .zip(&truth.values)
        .map(|(p, t)| (p - t).max(0.0))
        .collect())
}

/// Maximum normalised error over the configured coordinates.
pub fn score(errors: &[f64], cfg: &ScoreConfig) -> Result<f64> {
    check_dim(cfg.sigma.len(), errors.len())?;
    let normalised = |i: usize| errors[i] / cfg.sigma[i];
    Ok(match &cfg.scope {
        Scope::FragmentWide => (0..errors.len()).map(normalised).fold(0.0, f64::max),
        Scope::ActiveSupport(s) => {
            if s.is_empty() {
                return Err(Error::EmptySupport);
            }
            s.iter().map(|&i| normalised(i)).fold(0.0, f64::max)
        }
    })
}

/// 1-based rank `min{n, ⌈(n+1)(1-α)⌉}` of the split-conformal quantile.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let rank = (((n + 1) as f64) * (1.0 - alpha) - RANK_EPS).ceil();
    (rank.max(1.0) as usize).min(n)
}

/// Split-conformal quantile: the order statistic at [`quantile_rank`].
pub fn split_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} not in (0,1)")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_rank(scores.len(), alpha) - 1])
}

#[derive(Clone, Copy, Debug)]
pub enum PredictionTarget<'a> {
    /// One predicted row per `t ∈ [K_max, T]` over the dictionary atoms.
    Semantic(&'a AtomicDictionary),
    /// One predicted predicate vector per `t ∈ [0, T]`.
    Predicates,
}

/// Per-timestep predictions for one episode. `rows[i]` belongs to time `start + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub start: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Source of basis estimates. Must be deterministic per episode.
pub trait Predictor: Sync {
    fn predict(&self, ep: &Episode, target: PredictionTarget<'_>) -> Result<Predictions>;
}

/// Predicate-history rows `[μ̂_k(t-j)]` for every `t ∈ [k_max, T]` from per-step rows.
pub fn history_rows(per_step: &[Vec<f64>], k_max: usize) -> Vec<Vec<f64>> {
    let m = per_step.first().map(Vec::len).unwrap_or(0);
    (k_max..per_step.len())
        .map(|t| {
            (0..m)
                .flat_map(|k| (0..=k_max).map(move |j| per_step[t - j][k]))
                .collect()
        })
        .collect()
}

/// Predicted basis rows aligned with `basis.series(ep)`.
pub fn predicted_basis_rows(
    ep: &Episode,
    predictor: &dyn Predictor,
    kind: MonitorKind,
    basis: &BasisSpec,
) -> Result<Vec<Vec<f64>>> {
    check_kind(kind, basis)?;
    let k_max = basis.k_max();
    let expected_rows = ep.len().checked_sub(k_max).filter(|&n| n > 0).ok_or(Error::EpisodeTooShort {
        id: ep.id,
        len: ep.len(),
        required: k_max + 1,
    })?;
    let rows = match (kind, basis) {
        (MonitorKind::Semantic, BasisSpec::Semantic(dict)) => {
            let p = predictor.predict(ep, PredictionTarget::Semantic(dict))?;
            if p.start != k_max {
                return Err(Error::InvalidConfig(format!(
                    "semantic predictions start at {} instead of {k_max}",
                    p.start
                )));
            }
            p.rows
        }
        _ => {
            let p = predictor.predict(ep, PredictionTarget::Predicates)?;
            if p.start != 0 {
                return Err(Error::InvalidConfig("predicate predictions must start at t=0".into()));
            }
            if let Some(r) = p.rows.iter().find(|r| r.len() != basis.num_predicates()) {
                return Err(Error::DimensionMismatch {
                    expected: basis.num_predicates(),
                    got: r.len(),
                });
            }
            history_rows(&p.rows, k_max)
        }
    };
    check_dim(expected_rows, rows.len())?;
    if let Some(r) = rows.iter().find(|r| r.len() != basis.dim()) {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: r.len(),
        });
    }
    Ok(rows)
}

fn check_kind(kind: MonitorKind, basis: &BasisSpec) -> Result<()> {
    if kind.basis_kind() != basis.kind() {
        return Err(Error::KindMismatch {
            expected: kind.basis_kind().to_string(),
            got: basis.kind().to_string(),
        });
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Level-2 evaluation time for an episode: uniform on `{k_max, ..., T}`.
pub fn sample_time(seed: u64, episode_id: u64, k_max: usize, last_time: usize) -> usize {
    stream_rng(seed, episode_id).gen_range(k_max..=last_time)
}

/// Per-episode aggregated normalised coordinate errors, `rows × coordinates`.
///
/// Level-1 rows hold the maximum over valid times of each coordinate; Level-2
/// rows hold the errors at the sampled time. Maxima commute, so the score of any
/// coordinate subset is recoverable from these rows alone.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCache {
    pub level: Level,
    pub rows: Vec<Vec<f64>>,
}

impl ScoreCache {
    pub fn dim(&self) -> usize {
        self.rows.first().map(Vec::len).unwrap_or(0)
    }

    /// Per-episode scores restricted to `coords` (all coordinates when `None`).
    pub fn scores(&self, coords: Option<&BTreeSet<usize>>) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match coords {
                None => r.iter().copied().fold(0.0, f64::max),
                Some(s) => s.iter().map(|&i| r[i]).fold(0.0, f64::max),
            })
            .collect()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let level = match self.level {
            Level::Level1 => 1,
            Level::Level2 => 2,
        };
        let mut emit = || -> std::io::Result<()> {
            writeln!(
                w,
                "certmon-score-cache,{SCORE_CACHE_VERSION},{level},{},{}",
                self.rows.len(),
                self.dim()
            )?;
            for row in &self.rows {
                let line: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty score cache"))?
            .map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = header.split(',').collect();
        let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::format(path, e));
        if fields.len() != 5 || fields[0] != "certmon-score-cache" {
            return Err(Error::format(path, "bad score cache header"));
        }
        if parse(fields[1])? != SCORE_CACHE_VERSION as usize {
            return Err(Error::format(path, format!("unsupported version {}", fields[1])));
        }
        let level = match parse(fields[2])? {
            1 => Level::Level1,
            2 => Level::Level2,
            l => return Err(Error::format(path, format!("unknown level {l}"))),
        };
        let (n, d) = (parse(fields[3])?, parse(fields[4])?);
        let mut rows = Vec::with_capacity(n);
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::format(path, e)))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != d {
                return Err(Error::format(path, format!("row of length {} (expected {d})", row.len())));
            }
            rows.push(row);
        }
        if rows.len() != n {
            return Err(Error::format(path, format!("{} rows (expected {n})", rows.len())));
        }
        Ok(Self { level, rows })
    }
}

/// Frozen calibration artifact: everything needed to certify at runtime.
#[derive(Clone, Debug)]
pub struct CalibratedMonitor {
    pub kind: MonitorKind,
    pub level: Level,
    pub alpha: f64,
    pub radius: f64,
    pub sigma: Vec<f64>,
    pub scope: Scope,
    pub basis: BasisSpec,
    pub n: usize,
    pub seed: u64,
    /// Formula the radius was calibrated for (observer baseline, active-support queries).
    pub formula: Option<String>,
    /// Opaque description of the predictor, stored for later `certify` runs.
    pub predictor: Option<serde_json::Value>,
    names: Option<Vec<String>>,
    cache: Arc<ScoreCache>,
}

impl CalibratedMonitor {
    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    pub fn k_max(&self) -> usize {
        self.basis.k_max()
    }

    pub fn predicate_names(&self) -> Vec<String> {
        if let Some(names) = &self.names {
            return names.clone();
        }
        match &self.basis {
            BasisSpec::Semantic(d) => d.predicate_names().to_vec(),
            BasisSpec::PredicateHistory { num_predicates, .. } => {
                (0..*num_predicates).map(|k| format!("p{k}")).collect()
            }
        }
    }

    /// Names predicate-history predicates (semantic monitors take them from the dictionary).
    pub fn with_predicate_names(mut self, names: Vec<String>) -> Result<Self> {
        check_dim(self.basis.num_predicates(), names.len())?;
        if let BasisSpec::Semantic(d) = &self.basis {
            if d.predicate_names() != names.as_slice() {
                return Err(Error::InvalidConfig("names differ from the dictionary".into()));
            }
            return Ok(self);
        }
        let formula = match &self.formula {
            Some(text) => Some(self.parse(text)?.display(&names).to_string()),
            None => None,
        };
        self.formula = formula;
        self.names = Some(names);
        Ok(self)
    }

    pub fn parse(&self, text: &str) -> Result<Formula> {
        parse_formula(text, &self.predicate_names())
    }

    pub fn decoder(&self, f: &Formula) -> Result<Decoder> {
        compile_decoder(f, &self.basis)
    }

    /// Radius for an explicit coordinate set, recomputed from the score cache.
    pub fn radius_for_support(&self, support: &BTreeSet<usize>) -> Result<f64> {
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        if let Some(&i) = support.iter().next_back().filter(|&&i| i >= self.cache.dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.cache.dim(),
                got: i + 1,
            });
        }
        match self.kind {
            MonitorKind::Observer => bonferroni_radius(&self.cache, support, self.alpha),
            _ => split_quantile(&self.cache.scores(Some(support)), self.alpha),
        }
    }

    /// Radius to certify `f`: the shared radius for fragment-wide monitors,
    /// otherwise `q_φ` recomputed from the cached scores.
    pub fn radius_for(&self, f: &Formula) -> Result<f64> {
        let d = self.decoder(f)?;
        match self.scope {
            Scope::FragmentWide if self.kind != MonitorKind::Observer => Ok(self.radius),
            _ => self.radius_for_support(d.support()),
        }
    }

    /// A monitor for `f` with active-support scope, derived without new data.
    pub fn requery(&self, f: &Formula) -> Result<CalibratedMonitor> {
        let d = self.decoder(f)?;
        let radius = self.radius_for_support(d.support())?;
        let text = f.display(&self.predicate_names()).to_string();
        Ok(CalibratedMonitor {
            radius,
            scope: Scope::ActiveSupport(d.support().clone()),
            formula: Some(text),
            ..self.clone()
        })
    }

    /// Coordinatewise lower bound `B̂ - radius·σ`.
    pub fn lower_basis(&self, predicted: &[f64], radius: f64) -> Result<Vec<f64>> {
        check_dim(self.sigma.len(), predicted.len())?;
        Ok(predicted
            .iter()
            .zip(&self.sigma)
            .map(|(b, s)| b - radius * s)
            .collect())
    }

    pub fn save(&self, model_path: &Path) -> Result<()> {
        let cache_path = cache_path_for(model_path);
        self.cache.write(&cache_path)?;
        let doc = self.to_doc(
            cache_path
                .file_name()
                .map(PathBuf::from)
                .unwrap_or_else(|| cache_path.clone()),
        );
        let text = serde_json::to_string_pretty(&doc).expect("model serializes");
        fs::write(model_path, text).map_err(|e| Error::io(model_path, e))
    }

    pub fn load(model_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(model_path).map_err(|e| Error::io(model_path, e))?;
        let doc: MonitorDoc = serde_json::from_str(&text).map_err(|e| Error::format(model_path, e))?;
        if doc.version != MODEL_VERSION {
            return Err(Error::format(model_path, format!("unsupported version {}", doc.version)));
        }
        let cache_path = if doc.score_cache_path.is_absolute() {
            doc.score_cache_path.clone()
        } else {
            model_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&doc.score_cache_path)
        };
        let cache = ScoreCache::read(&cache_path)?;
        Self::from_doc(doc, cache).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::format(model_path, m),
            e => e,
        })
    }

    fn to_doc(&self, score_cache_path: PathBuf) -> MonitorDoc {
        let (dictionary, m, kmax) = match &self.basis {
            BasisSpec::Semantic(d) => (Some(DictionaryDoc::from(d)), d.num_predicates(), d.k_max()),
            BasisSpec::PredicateHistory { num_predicates, k_max } => (None, *num_predicates, *k_max),
        };
        MonitorDoc {
            version: MODEL_VERSION,
            kind: self.kind,
            level: self.level,
            alpha: self.alpha,
            radius: self.radius,
            sigma: self.sigma.clone(),
            scope: self.scope.clone(),
            dictionary,
            m,
            kmax,
            n: self.n,
            seed: self.seed,
            formula: self.formula.clone(),
            predictor: self.predictor.clone(),
            predicate_names: self.names.clone(),
            score_cache_path,
        }
    }

    fn from_doc(doc: MonitorDoc, cache: ScoreCache) -> Result<Self> {
        let basis = match doc.dictionary {
            Some(d) => BasisSpec::Semantic(AtomicDictionary::try_from(d)?),
            None => BasisSpec::PredicateHistory {
                num_predicates: doc.m,
                k_max: doc.kmax,
            },
        };
        check_kind(doc.kind, &basis)?;
        check_dim(basis.dim(), doc.sigma.len())?;
        check_dim(basis.dim(), cache.dim())?;
        check_dim(doc.n, cache.rows.len())?;
        if let Some(names) = &doc.predicate_names {
            check_dim(basis.num_predicates(), names.len())?;
        }
        if cache.level != doc.level {
            return Err(Error::InvalidConfig("score cache level differs from model level".into()));
        }
        Ok(Self {
            kind: doc.kind,
            level: doc.level,
            alpha: doc.alpha,
            radius: doc.radius,
            sigma: doc.sigma,
            scope: doc.scope,
            basis,
            n: doc.n,
            seed: doc.seed,
            formula: doc.formula,
            predictor: doc.predictor,
            names: doc.predicate_names,
            cache: Arc::new(cache),
        })
    }
}

fn cache_path_for(model_path: &Path) -> PathBuf {
    let stem = model_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    model_path.with_file_name(format!("{stem}.scores.csv"))
}

/// On-disk model document.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct MonitorDoc {
    version: u32,
    kind: MonitorKind,
    level: Level,
    alpha: f64,
    radius: f64,
    sigma: Vec<f64>,
    scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dictionary: Option<DictionaryDoc>,
    m: usize,
    kmax: usize,
    n: usize,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    formula: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predictor: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicate_names: Option<Vec<String>>,
    score_cache_path: PathBuf,
}

/// Normalised per-timestep errors of one episode for `t ∈ [K_max, T]`.
/// One-sided overestimation, or absolute error when `symmetric`.
pub fn episode_errors(
    ep: &Episode,
    predictor: &dyn Predictor,
    kind: MonitorKind,
    basis: &BasisSpec,
    sigma: &[f64],
    symmetric: bool,
) -> Result<Vec<Vec<f64>>> {
    check_dim(basis.dim(), sigma.len())?;
    let truth = basis.series(ep)?;
    let predicted = predicted_basis_rows(ep, predictor, kind, basis)?;
    Ok(truth
        .iter()
        .zip(&predicted)
        .map(|(b, p)| {
            b.iter()
                .zip(p)
                .zip(sigma)
                .map(|((b, p), s)| {
                    let e = if symmetric { (p - b).abs() } else { (p - b).max(0.0) };
                    e / s
                })
                .collect()
        })
        .collect())
}

/// Floor applied to estimated scales.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Per-coordinate scales from held-out episodes: the median of the strictly
/// positive overestimations, `1` for a coordinate never overestimated,
/// floored at [`SIGMA_FLOOR`].
pub fn estimate_sigma(
    episodes: &[Episode],
    predictor: &dyn Predictor,
    kind: MonitorKind,
    basis: &BasisSpec,
) -> Result<Vec<f64>> {
    check_episodes(episodes, basis)?;
    let dim = basis.dim();
    let unit = vec![1.0; dim];
    let symmetric = kind == MonitorKind::Observer;
    let per_episode = episodes
        .par_iter()
        .map(|ep| episode_errors(ep, predictor, kind, basis, &unit, symmetric))
        .collect::<Result<Vec<_>>>()?;
    let mut columns = vec![Vec::new(); dim];
    for rows in &per_episode {
        for row in rows {
            for (col, &e) in columns.iter_mut().zip(row) {
                if e > 0.0 {
                    col.push(e);
                }
            }
        }
    }
    Ok(columns
        .into_iter()
        .map(|mut col| {
            if col.is_empty() {
                return 1.0;
            }
            col.sort_by(f64::total_cmp);
            let mid = col.len() / 2;
            let median = if col.len() % 2 == 1 { col[mid] } else { 0.5 * (col[mid - 1] + col[mid]) };
            median.max(SIGMA_FLOOR)
        })
        .collect())
}

fn aggregate(errors: Vec<Vec<f64>>, level: Level, seed: u64, ep: &Episode, k_max: usize) -> Vec<f64> {
    match level {
        Level::Level1 => {
            let mut acc = vec![0.0f64; errors.first().map(Vec::len).unwrap_or(0)];
            for row in &errors {
                for (a, e) in acc.iter_mut().zip(row) {
                    *a = a.max(*e);
                }
            }
            acc
        }
        Level::Level2 => {
            let tau = sample_time(seed, ep.id, k_max, ep.last_time());
            errors.into_iter().nth(tau - k_max).expect("sampled time is valid")
        }
    }
}

fn check_episodes(episodes: &[Episode], basis: &BasisSpec) -> Result<()> {
    if episodes.is_empty() {
        return Err(Error::EmptyScores);
    }
    for ep in episodes {
        if ep.last_time() < basis.k_max() {
            return Err(Error::EpisodeTooShort {
                id: ep.id,
                len: ep.len(),
                required: basis.k_max() + 1,
            });
        }
        check_dim(basis.num_predicates(), ep.num_predicates())?;
    }
    Ok(())
}

fn warn_small_n(n: usize, alpha: f64) {
    let needed = (1.0 / alpha).ceil() as usize;
    if n + 1 < needed {
        log::warn!(
            "only {n} calibration episodes at alpha={alpha}: the quantile is the sample maximum and the bound is conservative"
        );
    }
}

/// Calibrates a semantic or rolling monitor on exchangeable episodes.
pub fn calibrate(
    episodes: &[Episode],
    predictor: &dyn Predictor,
    kind: MonitorKind,
    cfg: &ScoreConfig,
    basis: &BasisSpec,
    seed: u64,
) -> Result<CalibratedMonitor> {
    if kind == MonitorKind::Observer {
        return Err(Error::InvalidConfig("use observer_calibrate for the observer baseline".into()));
    }
    check_kind(kind, basis)?;
    check_dim(basis.dim(), cfg.sigma.len())?;
    check_episodes(episodes, basis)?;
    warn_small_n(episodes.len(), cfg.alpha);

    let k_max = basis.k_max();
    let rows = episodes
        .par_iter()
        .map(|ep| {
            let errors = episode_errors(ep, predictor, kind, basis, &cfg.sigma, false)?;
            Ok(aggregate(errors, cfg.level, seed, ep, k_max))
        })
        .collect::<Result<Vec<_>>>()?;
    let cache = ScoreCache { level: cfg.level, rows };
    let support = match &cfg.scope {
        Scope::FragmentWide => None,
        Scope::ActiveSupport(s) => Some(s),
    };
    let radius = split_quantile(&cache.scores(support), cfg.alpha)?;
    Ok(CalibratedMonitor {
        kind,
        level: cfg.level,
        alpha: cfg.alpha,
        radius,
        sigma: cfg.sigma.clone(),
        scope: cfg.scope.clone(),
        basis: basis.clone(),
        n: episodes.len(),
        seed,
        formula: None,
        predictor: None,
        names: None,
        cache: Arc::new(cache),
    })
}

fn bonferroni_radius(cache: &ScoreCache, support: &BTreeSet<usize>, alpha: f64) -> Result<f64> {
    let per_coordinate = alpha / support.len() as f64;
    support
        .iter()
        .map(|&i| split_quantile(&cache.column(i), per_coordinate))
        .try_fold(0.0f64, |acc, q| Ok(acc.max(q?)))
}

/// Observer baseline: symmetric per-coordinate scores over the predicate-lag
/// support of `f`, each calibrated at level `1 - α/|supp|` (Level-2 time
/// sampling); the reported radius is the largest per-coordinate quantile.
pub fn observer_calibrate(
    episodes: &[Episode],
    predictor: &dyn Predictor,
    f: &Formula,
    alpha: f64,
    sigma: &[f64],
    basis: &BasisSpec,
    seed: u64,
) -> Result<CalibratedMonitor> {
    check_kind(MonitorKind::Observer, basis)?;
    let cfg = ScoreConfig::new(sigma.to_vec(), Scope::FragmentWide, alpha, Level::Level2)?;
    check_dim(basis.dim(), cfg.sigma.len())?;
    check_episodes(episodes, basis)?;
    let support = basis.support_of(f)?;
    warn_small_n(episodes.len(), alpha / support.len() as f64);

    let k_max = basis.k_max();
    let rows = episodes
        .par_iter()
        .map(|ep| {
            let errors = episode_errors(ep, predictor, MonitorKind::Observer, basis, sigma, true)?;
            Ok(aggregate(errors, Level::Level2, seed, ep, k_max))
        })
        .collect::<Result<Vec<_>>>()?;
    let cache = ScoreCache {
        level: Level::Level2,
        rows,
    };
    let radius = bonferroni_radius(&cache, &support, alpha)?;
    let text = f.to_string();
    Ok(CalibratedMonitor {
        kind: MonitorKind::Observer,
        level: Level::Level2,
        alpha,
        radius,
        sigma: sigma.to_vec(),
        scope: Scope::ActiveSupport(support),
        basis: basis.clone(),
        n: episodes.len(),
        seed,
        formula: Some(text),
        predictor: None,
        names: None,
        cache: Arc::new(cache),
    })
}

/// `decode(d, B̂ - radius·σ)` using the monitor's calibrated radius.
pub fn certified_lower_bound(mon: &CalibratedMonitor, predicted: &BasisVector, d: &Decoder) -> Result<f64> {
    if d.kind() != mon.kind.basis_kind() || predicted.kind != d.kind() {
        return Err(Error::KindMismatch {
            expected: mon.kind.basis_kind().to_string(),
            got: if d.kind() != mon.kind.basis_kind() { d.kind() } else { predicted.kind }.to_string(),
        });
    }
    if let Scope::ActiveSupport(s) = &mon.scope {
        if !d.support().is_subset(s) {
            return Err(Error::SupportViolation);
        }
    }
    let lower = mon.lower_basis(&predicted.values, mon.radius)?;
    d.decode_values(&lower)
}

/// Closed real interval used by interval STL semantics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn meet(self, o: Interval) -> Interval {
        Interval {
            lo: self.lo.min(o.lo),
            hi: self.hi.min(o.hi),
        }
    }

    fn join(self, o: Interval) -> Interval {
        Interval {
            lo: self.lo.max(o.lo),
            hi: self.hi.max(o.hi),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Interval-arithmetic robustness of `f` from bracketing predicate-history
/// vectors. Sound: contains the true robustness whenever the inputs bracket
/// the true basis.
pub fn interval_propagate(
    f: &Formula,
    lower: &BasisVector,
    upper: &BasisVector,
    num_predicates: usize,
    k_max: usize,
) -> Result<Interval> {
    for b in [lower, upper] {
        if b.kind != BasisKind::PredicateHistory {
            return Err(Error::KindMismatch {
                expected: BasisKind::PredicateHistory.to_string(),
                got: b.kind.to_string(),
            });
        }
        check_dim(num_predicates * (k_max + 1), b.dim())?;
    }
    if let Some((i, (l, u))) = lower.values.iter().zip(&upper.values).enumerate().find(|(_, (l, u))| l > u) {
        return Err(Error::CrossedBounds {
            index: i,
            lower: *l,
            upper: *u,
        });
    }
    if f.horizon() > k_max {
        return Err(Error::HorizonExceeded {
            horizon: f.horizon(),
            k_max,
        });
    }
    if f.max_predicate() >= num_predicates {
        return Err(Error::DimensionMismatch {
            expected: num_predicates,
            got: f.max_predicate() + 1,
        });
    }
    Ok(propagate(f, 0, &lower.values, &upper.values, k_max))
}

fn propagate(f: &Formula, shift: usize, lo: &[f64], hi: &[f64], k_max: usize) -> Interval {
    match f {
        Formula::Predicate(k) => {
            let i = k * (k_max + 1) + shift;
            Interval { lo: lo[i], hi: hi[i] }
        }
        Formula::And(l, r) => propagate(l, shift, lo, hi, k_max).meet(propagate(r, shift, lo, hi, k_max)),
        Formula::Or(l, r) => propagate(l, shift, lo, hi, k_max).join(propagate(r, shift, lo, hi, k_max)),
        Formula::Always(i, c) => i
            .lags()
            .map(|j| propagate(c, shift + j, lo, hi, k_max))
            .reduce(Interval::meet)
            .expect("nonempty window"),
        Formula::Eventually(i, c) => i
            .lags()
            .map(|j| propagate(c, shift + j, lo, hi, k_max))
            .reduce(Interval::join)
            .expect("nonempty window"),
    }
}
