//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! [data]                      # paths are relative to this file
//! meters = "meters.csv"
//! metadata = "metadata.csv"
//! weather = "weather.csv"
//! trends = "trends.csv"
//! topics = "topics.csv"       # optional, defaults to the shipped catalog
//! day_types = "day_types.csv"
//! site_geo = "site_geo.csv"
//! benchmark = "bench.csv"     # optional, defaults to the shipped table
//!
//! [experiment]
//! training_year = 2016
//! validation_year = 2017
//! mode = "both"               # baseline | proposed | both
//! group_by = "none"           # none | category
//! allow_partial_year = false
//! output_dir = "runs/default"
//!
//! [cleaning]    # z_threshold, min_constant_hours
//! [imputation]  # max_interp_hours
//! [calendar]    # min_valid_hours
//! [screening]   # fair_threshold, high_threshold, min_overlap_days
//! [gbdt]        # n_trees, learning_rate, max_leaves, min_samples_leaf,
//!               # feature_fraction, row_fraction, n_bins, seed, n_folds
//! [evaluation]  # min_meters
//! ```
//!
//! Every section except `[data]` is optional and every key has a default.

use std::fmt;
use std::path::{Path, PathBuf};

use occutrend_core::calendar::CalendarConfig;
use occutrend_core::evaluation::EvalConfig;
use occutrend_core::gbdt::GbdtParams;
use occutrend_core::ingest::{CleaningConfig, ImputeConfig};
use occutrend_core::screening::ScreeningConfig;
use occutrend_core::Mode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub meters: PathBuf,
    pub metadata: PathBuf,
    pub weather: PathBuf,
    pub trends: PathBuf,
    pub day_types: PathBuf,
    pub site_geo: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<PathBuf>,
}

impl DataPaths {
    /// Every configured input, with its config key.
    pub fn all(&self) -> Vec<(&'static str, &Path)> {
        let mut out: Vec<(&'static str, &Path)> = vec![
            ("meters", &self.meters),
            ("metadata", &self.metadata),
            ("weather", &self.weather),
            ("trends", &self.trends),
            ("day_types", &self.day_types),
            ("site_geo", &self.site_geo),
        ];
        if let Some(p) = &self.topics {
            out.push(("topics", p));
        }
        if let Some(p) = &self.benchmark {
            out.push(("benchmark", p));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Baseline,
    Proposed,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeSelection::Baseline => vec![Mode::Baseline],
            ModeSelection::Proposed => vec![Mode::Proposed],
            ModeSelection::Both => vec![Mode::Baseline, Mode::Proposed],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    /// One model over every meter.
    None,
    /// One model per correlation category.
    Category,
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupBy::None => "none",
            GroupBy::Category => "category",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub training_year: i32,
    pub validation_year: i32,
    pub mode: ModeSelection,
    pub group_by: GroupBy,
    /// Accept inputs that do not cover both years completely.
    pub allow_partial_year: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            training_year: 2016,
            validation_year: 2017,
            mode: ModeSelection::Both,
            group_by: GroupBy::None,
            allow_partial_year: false,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataPaths,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub cleaning: CleaningConfig,
    #[serde(default)]
    pub imputation: ImputeConfig,
    #[serde(default)]
    pub calendar: CalendarConfig,
    #[serde(default)]
    pub screening: ScreeningConfig,
    #[serde(default)]
    pub gbdt: GbdtParams,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<ModeSelection>,
    pub group_by: Option<GroupBy>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, resolves relative paths against the file's directory, applies
    /// overrides and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [
            &mut d.meters,
            &mut d.metadata,
            &mut d.weather,
            &mut d.trends,
            &mut d.day_types,
            &mut d.site_geo,
        ] {
            fix(p);
        }
        if let Some(p) = &mut d.topics {
            fix(p);
        }
        if let Some(p) = &mut d.benchmark {
            fix(p);
        }
        fix(&mut self.experiment.output_dir);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.experiment.mode = m;
        }
        if let Some(g) = o.group_by {
            self.experiment.group_by = g;
        }
        if let Some(s) = o.seed {
            self.gbdt.seed = s;
        }
        if let Some(out) = &o.out {
            self.experiment.output_dir = out.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.experiment;
        if e.training_year == e.validation_year {
            return Err(CliError::Config(format!(
                "training_year and validation_year are both {}",
                e.training_year
            )));
        }
        for (key, path) in self.data.all() {
            if !path.is_file() {
                return Err(CliError::Config(format!("data.{key}: {} does not exist", path.display())));
            }
        }
        let s = &self.screening;
        if !(0.0 < s.fair_threshold && s.fair_threshold < s.high_threshold && s.high_threshold <= 1.0) {
            return Err(CliError::Config(format!(
                "screening thresholds must satisfy 0 < fair ({}) < high ({}) <= 1",
                s.fair_threshold, s.high_threshold
            )));
        }
        if s.min_overlap_days == 0 {
            return Err(CliError::Config("screening.min_overlap_days must be positive".into()));
        }
        if self.cleaning.z_threshold.is_nan() || self.cleaning.z_threshold <= 0.0 || self.cleaning.min_constant_hours < 2 {
            return Err(CliError::Config(
                "cleaning.z_threshold must be positive and min_constant_hours at least 2".into(),
            ));
        }
        if self.calendar.min_valid_hours == 0 || self.calendar.min_valid_hours > 24 {
            return Err(CliError::Config("calendar.min_valid_hours must be in 1..=24".into()));
        }
        if self.evaluation.min_meters == 0 {
            return Err(CliError::Config("evaluation.min_meters must be positive".into()));
        }
        self.gbdt
            .validate()
            .map_err(|err| CliError::Config(format!("gbdt: {err}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
