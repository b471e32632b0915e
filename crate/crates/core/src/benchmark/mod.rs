//! Crossroad benchmark: simulator, predicate suite, predictor stubs and datasets.

mod crossroad;
mod dataset;
mod predictor;

pub use crossroad::{crossroad_predicates, simulate_episode, CrossroadConfig, CrossroadPredicates, PREDICATE_NAMES};
pub use dataset::{
    episode_seed, generate_dataset, read_episode, write_episode, Dataset, EpisodeIds, Manifest, Split, SplitCounts,
    DATASET_VERSION,
};
pub use predictor::{PerCoordinate, PredictorStub, StubMode};
