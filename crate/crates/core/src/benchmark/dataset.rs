//! On-disk datasets: `manifest.json` plus one JSON-lines file per episode in
//! `train/`, `calib/` and `test/`. Each line is `{"t", "state", "mu"}`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::crossroad::{simulate_episode, CrossroadConfig};
use crate::fragment::{build_depth1_dictionary, AtomicDictionary};
use crate::robustness::Episode;
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Calib,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Calib, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calib => "calib",
            Split::Test => "test",
        }
    }

    fn code(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Calib => 2,
            Split::Test => 3,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown split `{s}` (train|calib|test)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub calib: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Calib => self.calib,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeIds {
    pub train: Vec<u64>,
    pub calib: Vec<u64>,
    pub test: Vec<u64>,
}

impl EpisodeIds {
    pub fn get(&self, split: Split) -> &[u64] {
        match split {
            Split::Train => &self.train,
            Split::Calib => &self.calib,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub m: usize,
    pub predicate_names: Vec<String>,
    pub predicate_definitions: Vec<String>,
    pub dt: f64,
    #[serde(rename = "K_max")]
    pub k_max: usize,
    pub intervals: Vec<[usize; 2]>,
    pub counts: SplitCounts,
    pub config: CrossroadConfig,
    pub seed: u64,
    /// Episode ids (simulation seeds) per split, in file order.
    pub episodes: EpisodeIds,
}

#[derive(Serialize, Deserialize)]
struct Line {
    t: usize,
    state: Vec<f64>,
    mu: Vec<f64>,
}

/// Seed of episode `index` in `split`; splits draw from disjoint streams.
pub fn episode_seed(seed: u64, split: Split, index: usize) -> u64 {
    derive_seed(seed, (split.code() << 40) | index as u64)
}

fn episode_file(dir: &Path, split: Split, index: usize) -> PathBuf {
    dir.join(split.name()).join(format!("ep_{index:06}.jsonl"))
}

/// Simulates `counts` episodes per split from one config and writes them to `dir`.
pub fn generate_dataset(cfg: &CrossroadConfig, counts: SplitCounts, seed: u64, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    for split in Split::ALL {
        if counts.get(split) == 0 {
            return Err(Error::InvalidConfig(format!("{} count must be at least 1", split.name())));
        }
    }
    let ids = |split: Split| (0..counts.get(split)).map(|i| episode_seed(seed, split, i)).collect();
    let episodes = EpisodeIds {
        train: ids(Split::Train),
        calib: ids(Split::Calib),
        test: ids(Split::Test),
    };
    for split in Split::ALL {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        episodes
            .get(split)
            .par_iter()
            .enumerate()
            .try_for_each(|(i, &id)| write_episode(&simulate_episode(cfg, id)?, &episode_file(dir, split, i)))?;
    }
    let predicates = cfg.predicates();
    let manifest = Manifest {
        version: DATASET_VERSION,
        m: predicates.names().len(),
        predicate_names: predicates.names(),
        predicate_definitions: predicates.definitions(),
        dt: cfg.dt,
        k_max: cfg.k_max(),
        intervals: cfg.intervals.clone(),
        counts,
        config: cfg.clone(),
        seed,
        episodes,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn write_episode(ep: &Episode, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let empty = Vec::new();
    for t in 0..ep.len() {
        let line = Line {
            t,
            state: ep.states().map(|s| s[t].clone()).unwrap_or_else(|| empty.clone()),
            mu: ep.row(t),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::format(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episode(path: &Path, id: u64, dt: f64) -> Result<Episode> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut states = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        if parsed.t != rows.len() {
            return Err(Error::format(path, format!("expected t={}, found t={}", rows.len(), parsed.t)));
        }
        rows.push(parsed.mu);
        states.push(parsed.state);
    }
    let ep = Episode::from_rows(id, dt, &rows).map_err(|e| Error::format(path, e))?;
    if states.iter().all(Vec::is_empty) {
        Ok(ep)
    } else {
        ep.with_states(states)
    }
}

/// A dataset directory opened through its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
        if manifest.version != DATASET_VERSION {
            return Err(Error::format(&path, format!("unsupported version {}", manifest.version)));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Episode>> {
        self.manifest
            .episodes
            .get(split)
            .par_iter()
            .enumerate()
            .map(|(i, &id)| read_episode(&episode_file(&self.root, split, i), id, self.manifest.dt))
            .collect()
    }

    pub fn dictionary(&self) -> Result<AtomicDictionary> {
        let intervals = self
            .manifest
            .intervals
            .iter()
            .map(|[a, b]| crate::logic::TimeInterval::new(*a, *b))
            .collect::<Result<Vec<_>>>()?;
        build_depth1_dictionary(self.manifest.predicate_names.clone(), &intervals)
    }
}
