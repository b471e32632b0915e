//! Noisy-oracle predictors standing in for a learned encoder: ground truth
//! plus bias plus scaled, optionally AR(1)-correlated noise.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::conformal::{PredictionTarget, Predictions, Predictor};
use crate::robustness::{semantic_basis_series, Episode};
use crate::rng::stream_rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubMode {
    /// Perturbs the semantic basis (semantic monitor).
    NoisyBasis,
    /// Perturbs per-step predicate vectors (rolling and observer monitors).
    NoisyPredicates,
}

/// Scalar broadcast to every coordinate, or one value per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerCoordinate {
    All(f64),
    Each(Vec<f64>),
}

impl PerCoordinate {
    fn get(&self, i: usize) -> f64 {
        match self {
            PerCoordinate::All(v) => *v,
            PerCoordinate::Each(vs) => vs[i],
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match self {
            PerCoordinate::Each(vs) if vs.len() != dim => Err(Error::DimensionMismatch {
                expected: dim,
                got: vs.len(),
            }),
            _ => Ok(()),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            PerCoordinate::All(v) => vec![*v],
            PerCoordinate::Each(vs) => vs.clone(),
        }
    }
}

impl Default for PerCoordinate {
    fn default() -> Self {
        PerCoordinate::All(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorStub {
    pub mode: StubMode,
    pub scale: PerCoordinate,
    pub bias: PerCoordinate,
    /// AR(1) coefficient of the noise process over time, in `[0, 1)`.
    pub ar: f64,
    /// Student-t degrees of freedom for heavy-tailed innovations; Gaussian when absent.
    pub dof: Option<f64>,
    pub seed: u64,
}

impl Default for PredictorStub {
    fn default() -> Self {
        Self {
            mode: StubMode::NoisyBasis,
            scale: PerCoordinate::All(0.0),
            bias: PerCoordinate::All(0.0),
            ar: 0.0,
            dof: None,
            seed: 0,
        }
    }
}

impl PredictorStub {
    pub fn gaussian(mode: StubMode, scale: f64, seed: u64) -> Self {
        Self {
            mode,
            scale: PerCoordinate::All(scale),
            seed,
            ..Self::default()
        }
    }

    pub fn exact(mode: StubMode) -> Self {
        Self::gaussian(mode, 0.0, 0)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stub: Self = toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        stub.validate()?;
        Ok(stub)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.values().iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig("noise scales must be nonnegative".into()));
        }
        if self.bias.values().iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("bias must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.ar) {
            return Err(Error::InvalidConfig(format!("AR coefficient {} not in [0,1)", self.ar)));
        }
        if self.dof.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::InvalidConfig("dof must be positive".into()));
        }
        Ok(())
    }

    fn innovation(&self, rng: &mut impl Rng) -> f64 {
        match self.dof {
            Some(dof) => StudentT::new(dof).expect("validated dof").sample(rng),
            None => rng.sample(StandardNormal),
        }
    }

    /// Adds noise to `truth[i][ℓ]` (time-major rows).
    fn perturb(&self, ep: &Episode, truth: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let dim = truth.first().map(Vec::len).unwrap_or(0);
        self.scale.check(dim)?;
        self.bias.check(dim)?;
        let salt = match self.mode {
            StubMode::NoisyBasis => 0xBA515,
            StubMode::NoisyPredicates => 0x9E0D,
        };
        let mut rng = stream_rng(self.seed ^ salt, ep.id);
        let innovation_weight = (1.0 - self.ar * self.ar).sqrt();
        let mut state: Vec<f64> = Vec::with_capacity(dim);
        Ok(truth
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(l, v)| {
                        let eps = self.innovation(&mut rng);
                        let z = if i == 0 {
                            state.push(eps);
                            eps
                        } else {
                            state[l] = self.ar * state[l] + innovation_weight * eps;
                            state[l]
                        };
                        v + self.bias.get(l) + self.scale.get(l) * z
                    })
                    .collect()
            })
            .collect())
    }
}

impl Predictor for PredictorStub {
    fn predict(&self, ep: &Episode, target: PredictionTarget<'_>) -> Result<Predictions> {
        let (start, truth) = match (self.mode, target) {
            (StubMode::NoisyBasis, PredictionTarget::Semantic(dict)) => (dict.k_max(), semantic_basis_series(ep, dict)?),
            (StubMode::NoisyPredicates, PredictionTarget::Predicates) => (0, (0..ep.len()).map(|t| ep.row(t)).collect()),
            (mode, _) => {
                return Err(Error::InvalidConfig(format!(
                    "predictor mode {mode:?} does not produce the requested basis"
                )))
            }
        };
        Ok(Predictions {
            start,
            rows: self.perturb(ep, truth)?,
        })
    }
}
