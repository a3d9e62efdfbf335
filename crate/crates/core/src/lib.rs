//! Search-trend topics as occupancy proxies for building energy forecasting.
//!
//! The crate covers the whole experiment: meter, metadata, weather and
//! day-type ingestion with cleaning ([`ingest`]), daily search-volume series
//! and their per-year standardization ([`trends`]), daily calendar signals
//! from the first principal component of each meter's day×hour matrix
//! ([`calendar`]), best-fit topic selection by Pearson correlation
//! ([`screening`]), hourly feature matrices ([`features`]), a histogram
//! gradient-boosted tree learner trained as a temporal fold ensemble
//! ([`gbdt`]) and RMSLE error analysis by day type ([`evaluation`]).
//!
//! [`synth`] generates the deterministic synthetic corpus used by the test
//! suites and the CLI smoke runs.

pub mod calendar;
pub mod evaluation;
pub mod features;
pub mod gbdt;
pub mod ingest;
mod nan_serde;
pub mod screening;
pub mod synth;
pub mod trends;

pub use calendar::{CalendarSignal, DayMatrix};
pub use evaluation::{rmsle, EvalReport, PredictionRecord};
pub use features::{FeatureMatrix, FeatureSchema, Mode};
pub use gbdt::{GbdtParams, ModelBundle};
pub use ingest::{BuildingMeta, DayType, DayTypeCalendar, MeterSeries, MeterType, WeatherSeries};
pub use screening::{CorrelationCategory, ScreeningResult};
pub use trends::{TrendSeries, TrendTopic};
