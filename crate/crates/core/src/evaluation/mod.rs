//! RMSLE scoring, day-type segmentation, change rates and benchmark tiers.

mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::ingest::{DayType, DayTypeCalendar, MeterType};
use crate::screening::CorrelationCategory;

pub use report::{
    build_report, emit_report, EvalConfig, EvalReport, GroupRow, RunScores, SegmentScores, WeeklyRow,
    REPORT_SCHEMA_VERSION,
};

const DEFAULT_BENCHMARK: &str = include_str!("../../data/gepiii_benchmark.csv");

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("{0} predictions but {1} actuals")]
    LengthMismatch(usize, usize),
    #[error("negative value {value} at index {index}")]
    Negative { index: usize, value: f64 },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("baseline RMSLE is zero; change rate undefined")]
    ZeroBaseline,
    #[error("no benchmark row for category {0}")]
    UnknownCategory(String),
    #[error("{site_id} {date}: no day-type label")]
    UnlabeledDate { site_id: String, date: chrono::NaiveDate },
    #[error("baseline and proposed runs cover different rows (first difference at row {0})")]
    RowSetMismatch(usize),
    #[error("benchmark table {path}: {message}")]
    Benchmark { path: PathBuf, message: String },
    #[error("report I/O at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("report CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// `sqrt(mean((ln(p+1) - ln(a+1))^2))`.
pub fn rmsle(pred: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != actual.len() {
        return Err(EvalError::LengthMismatch(pred.len(), actual.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for (i, (p, a)) in pred.iter().zip(actual).enumerate() {
        for v in [*p, *a] {
            if !v.is_finite() {
                return Err(EvalError::NonFinite(i));
            }
            if v < 0.0 {
                return Err(EvalError::Negative { index: i, value: v });
            }
        }
        let d = p.ln_1p() - a.ln_1p();
        sum += d * d;
    }
    Ok((sum / pred.len() as f64).sqrt())
}

/// Percent change from baseline to proposed.
pub fn change_rate(baseline: f64, proposed: f64) -> Result<f64, EvalError> {
    if baseline == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(100.0 * (proposed - baseline) / baseline)
}

/// One decimal with an explicit sign, as in `-1.9%`.
pub fn format_change_rate(rate: f64) -> String {
    let rounded = (rate * 10.0).round() / 10.0;
    if rounded == 0.0 {
        "0.0%".to_string()
    } else {
        format!("{rounded:+.1}%")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub meter_id: String,
    pub timestamp: NaiveDateTime,
    /// kWh
    pub actual: f64,
    /// kWh
    pub predicted: f64,
    pub day_type: DayType,
    /// Unscreenable meters count as Poor.
    pub category: CorrelationCategory,
    pub meter_type: MeterType,
    pub site_id: String,
    pub country: Option<String>,
    pub topic_id: Option<String>,
}

/// Pooled RMSLE per day type; day types without records are absent.
pub fn segment_by_daytype(
    records: &[PredictionRecord],
    calendar: &DayTypeCalendar,
) -> Result<BTreeMap<DayType, f64>, EvalError> {
    let mut acc: BTreeMap<DayType, (f64, usize)> = BTreeMap::new();
    for r in records {
        let date = r.timestamp.date();
        let day_type = calendar.get(&r.site_id, date).ok_or_else(|| EvalError::UnlabeledDate {
            site_id: r.site_id.clone(),
            date,
        })?;
        let d = r.predicted.ln_1p() - r.actual.ln_1p();
        let e = acc.entry(day_type).or_default();
        e.0 += d * d;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, (sum, n))| (k, (sum / n as f64).sqrt()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Top5,
    Gold,
    Silver,
    Bronze,
    NoMedal,
}

impl Tier {
    pub const MEDALS: [Tier; 4] = [Tier::Top5, Tier::Gold, Tier::Silver, Tier::Bronze];

    pub fn label(self) -> &'static str {
        match self {
            Tier::Top5 => "Top 5",
            Tier::Gold => "Gold",
            Tier::Silver => "Silver",
            Tier::Bronze => "Bronze",
            Tier::NoMedal => "no medal",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Average competition RMSLE per category for the Top-5, Gold, Silver and
/// Bronze tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: BTreeMap<CorrelationCategory, [f64; 4]>,
}

impl Default for BenchmarkTable {
    fn default() -> Self {
        Self::parse(DEFAULT_BENCHMARK.as_bytes(), Path::new("<shipped benchmark>")).expect("shipped benchmark is valid")
    }
}

impl BenchmarkTable {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(file, path)
    }

    pub fn parse<R: std::io::Read>(input: R, path: &Path) -> Result<Self, EvalError> {
        let bad = |message: String| EvalError::Benchmark {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_ascii_lowercase).collect();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| bad(format!("missing column {name}")))
        };
        let cat_col = col("category")?;
        let tier_cols = [col("top5")?, col("gold")?, col("silver")?, col("bronze")?];
        let mut rows = BTreeMap::new();
        for record in reader.records() {
            let record = record?;
            let category = CorrelationCategory::parse(&record[cat_col])
                .ok_or_else(|| bad(format!("unknown category {:?}", &record[cat_col])))?;
            let mut values = [0.0; 4];
            for (v, c) in values.iter_mut().zip(tier_cols) {
                *v = record[c]
                    .parse()
                    .map_err(|_| bad(format!("bad value {:?} for {category}", &record[c])))?;
            }
            if !values.windows(2).all(|w| w[0] < w[1]) {
                return Err(bad(format!("{category}: tier averages must strictly increase")));
            }
            rows.insert(category, values);
        }
        Ok(Self { rows })
    }
}

/// The best tier whose average RMSLE is at least `score`; above Bronze is
/// "no medal".
pub fn benchmark_tier(score: f64, category: CorrelationCategory, table: &BenchmarkTable) -> Result<Tier, EvalError> {
    let row = table
        .rows
        .get(&category)
        .ok_or_else(|| EvalError::UnknownCategory(category.to_string()))?;
    Ok(Tier::MEDALS
        .iter()
        .zip(row)
        .find(|(_, avg)| **avg >= score)
        .map(|(t, _)| *t)
        .unwrap_or(Tier::NoMedal))
}
