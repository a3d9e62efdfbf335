//! Histogram gradient-boosted regression trees with squared-error loss,
//! trained as an ensemble over contiguous temporal folds.

mod binning;
mod booster;
mod bundle;
mod split;
mod tree;

use serde::{Deserialize, Serialize};

pub use binning::{BinnedData, FeatureBinning, MAX_CATEGORICAL_BINS};
pub use booster::{assign_folds, predict, predict_log, train, training_loss_curve};
pub use bundle::{FoldEnsemble, ModelBundle, TrainingMetadata, BUNDLE_FORMAT, BUNDLE_VERSION};
pub use split::{find_best_split, SplitCandidate, SplitRule};
pub use tree::{Node, RegressionTree, SplitCondition};

#[derive(Debug, thiserror::Error)]
pub enum GbdtError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training data is empty")]
    EmptyInput,
    #[error("{rows} rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("feature matrix still holds unencoded categorical labels")]
    NotEncoded,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("non-finite target at row {0}")]
    NonFiniteTarget(usize),
    #[error("bundle format: {0}")]
    Format(String),
    #[error("bundle I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub feature_fraction: f64,
    pub row_fraction: f64,
    /// Value bins per numeric feature; a missing bin comes on top.
    pub n_bins: usize,
    pub seed: u64,
    pub n_folds: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            learning_rate: 0.05,
            max_leaves: 31,
            min_samples_leaf: 20,
            feature_fraction: 0.9,
            row_fraction: 0.9,
            n_bins: 255,
            seed: 0,
            n_folds: 3,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |msg: String| Err(GbdtError::InvalidParams(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} not in (0, 1]", self.learning_rate));
        }
        if self.max_leaves < 2 {
            return bad(format!("max_leaves {} < 2", self.max_leaves));
        }
        if self.n_folds < 2 {
            return bad(format!("n_folds {} < 2", self.n_folds));
        }
        if !(2..=1024).contains(&self.n_bins) {
            return bad(format!("n_bins {} not in [2, 1024]", self.n_bins));
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        for (name, v) in [("feature_fraction", self.feature_fraction), ("row_fraction", self.row_fraction)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} not in (0, 1]"));
            }
        }
        Ok(())
    }
}
