use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tree::RegressionTree;
use super::{GbdtError, GbdtParams};
use crate::features::{CategoryDictionary, Column, FeatureMatrix, FeatureSchema, TargetVector};

pub const BUNDLE_FORMAT: &str = "occutrend-gbdt";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEnsemble {
    /// Mean target over the rows this ensemble was trained on.
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    pub n_train_rows: usize,
    /// Log-space RMSE on the training rows after 0, 1, ... trees.
    pub train_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// SHA-256 over schema, row keys, cells and targets.
    pub data_hash: String,
    pub seed: u64,
    pub n_rows: usize,
    pub n_meters: usize,
    pub first_timestamp: Option<NaiveDateTime>,
    pub last_timestamp: Option<NaiveDateTime>,
    /// Set when every target was identical and no trees were grown.
    pub constant_target: bool,
}

impl TrainingMetadata {
    pub fn describe(x: &FeatureMatrix, y: &TargetVector, seed: u64, constant_target: bool) -> Self {
        Self {
            data_hash: data_hash(x, y),
            seed,
            n_rows: x.n_rows(),
            n_meters: x.meter_ids.len(),
            first_timestamp: x.timestamps.iter().min().copied(),
            last_timestamp: x.timestamps.iter().max().copied(),
            constant_target,
        }
    }
}

pub fn data_hash(x: &FeatureMatrix, y: &TargetVector) -> String {
    let mut h = Sha256::new();
    for name in x.schema.names() {
        h.update(name.as_bytes());
        h.update([0u8]);
    }
    for id in &x.meter_ids {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    for (m, ts) in x.row_meter.iter().zip(&x.timestamps) {
        h.update(m.to_le_bytes());
        h.update(ts.and_utc().timestamp().to_le_bytes());
    }
    for col in &x.columns {
        match col {
            Column::Numeric(v) => v.iter().for_each(|c| h.update(c.to_bits().to_le_bytes())),
            Column::Categorical(v) => v.iter().for_each(|c| h.update(c.to_le_bytes())),
            Column::Labels { labels, index } => {
                for i in index {
                    h.update(labels[*i as usize].as_bytes());
                    h.update([0u8]);
                }
            }
        }
    }
    for v in &y.0 {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// A trained fold ensemble with everything needed to predict: schema,
/// categorical dictionary and parameters. Stored as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub params: GbdtParams,
    pub schema: FeatureSchema,
    pub dictionary: CategoryDictionary,
    pub folds: Vec<FoldEnsemble>,
    pub metadata: TrainingMetadata,
}

impl ModelBundle {
    pub fn with_dictionary(mut self, dictionary: CategoryDictionary) -> Self {
        self.dictionary = dictionary;
        self
    }

    pub fn to_json(&self) -> Result<String, GbdtError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, GbdtError> {
        let bundle: ModelBundle = serde_json::from_str(text)?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(GbdtError::Format(format!("unexpected format tag {:?}", bundle.format)));
        }
        if bundle.version != BUNDLE_VERSION {
            return Err(GbdtError::Format(format!(
                "version {} not supported (expected {BUNDLE_VERSION})",
                bundle.version
            )));
        }
        bundle.check()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<(), GbdtError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GbdtError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// One ensemble per fold, and no tree refers past the schema.
    pub fn check(&self) -> Result<(), GbdtError> {
        if self.folds.len() != self.params.n_folds {
            return Err(GbdtError::Format(format!(
                "{} ensembles for {} folds",
                self.folds.len(),
                self.params.n_folds
            )));
        }
        let width = self.schema.width();
        for fold in &self.folds {
            if fold.trees.iter().filter_map(|t| t.max_feature()).any(|f| f >= width) {
                return Err(GbdtError::Format(format!("tree feature index beyond schema width {width}")));
            }
        }
        Ok(())
    }
}
