//! Best-fit topic selection by Pearson correlation against calendar signals.

use std::collections::BTreeMap;
use std::fmt;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::calendar::CalendarSignal;
use crate::ingest::MeterType;
use crate::trends::TrendSeries;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScreeningError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("only {found} paired observations, need at least {needed}")]
    InsufficientOverlap { found: usize, needed: usize },
    #[error("constant input, correlation undefined")]
    ConstantInput,
    #[error("r² = {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("{meter_id}: no topic overlaps {min_overlap_days} usable days of {year}")]
    NoOverlap {
        meter_id: String,
        year: i32,
        min_overlap_days: usize,
    },
    #[error("{meter_id}: every topic (or the calendar) is constant over the overlap")]
    AllConstant { meter_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CorrelationCategory {
    Poor,
    Fair,
    High,
}

impl CorrelationCategory {
    pub const ALL: [CorrelationCategory; 3] = [
        CorrelationCategory::Poor,
        CorrelationCategory::Fair,
        CorrelationCategory::High,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorrelationCategory::Poor => "Poor",
            CorrelationCategory::Fair => "Fair",
            CorrelationCategory::High => "High",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        match value.trim().to_ascii_lowercase().as_str() {
            "poor" => Some(CorrelationCategory::Poor),
            "fair" => Some(CorrelationCategory::Fair),
            "high" => Some(CorrelationCategory::High),
            _ => None,
        }
    }
}

impl fmt::Display for CorrelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningConfig {
    /// r² at or above this (and up to `high_threshold`) is Fair.
    pub fair_threshold: f64,
    /// r² strictly above this is High.
    pub high_threshold: f64,
    pub min_overlap_days: usize,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            fair_threshold: 0.6,
            high_threshold: 0.8,
            min_overlap_days: 180,
        }
    }
}

impl ScreeningConfig {
    pub fn classify(&self, r_squared: f64) -> Result<CorrelationCategory, ScreeningError> {
        if !(0.0..=1.0).contains(&r_squared) {
            return Err(ScreeningError::OutOfRange(r_squared));
        }
        Ok(if r_squared > self.high_threshold {
            CorrelationCategory::High
        } else if r_squared >= self.fair_threshold {
            CorrelationCategory::Fair
        } else {
            CorrelationCategory::Poor
        })
    }
}

/// Poor below 0.6, Fair on [0.6, 0.8], High above 0.8.
pub fn classify_correlation(r_squared: f64) -> Result<CorrelationCategory, ScreeningError> {
    ScreeningConfig::default().classify(r_squared)
}

/// Pearson product-moment correlation over indices where both sides are
/// finite (NaN marks an undefined value).
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, ScreeningError> {
    if x.len() != y.len() {
        return Err(ScreeningError::LengthMismatch(x.len(), y.len()));
    }
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .collect();
    if pairs.len() < 3 {
        return Err(ScreeningError::InsufficientOverlap {
            found: pairs.len(),
            needed: 3,
        });
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ScreeningError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub meter_id: String,
    pub best_topic_id: String,
    pub geo: String,
    pub r: f64,
    pub r_squared: f64,
    pub category: CorrelationCategory,
    pub n_days_used: usize,
    /// r² of every topic that passed the overlap requirement.
    pub per_topic: BTreeMap<String, f64>,
}

/// Correlates the calendar with each standardized topic over the usable days
/// of `training_year` and keeps the topic with the largest r² (ties go to the
/// lexicographically smallest topic id).
pub fn screen_meter(
    calendar: &CalendarSignal,
    trends: &[TrendSeries],
    training_year: i32,
    cfg: &ScreeningConfig,
) -> Result<ScreeningResult, ScreeningError> {
    let days: Vec<(chrono::NaiveDate, f64)> = calendar
        .dates
        .iter()
        .zip(&calendar.scores)
        .filter(|(d, _)| d.year() == training_year)
        .filter_map(|(d, s)| s.map(|s| (*d, s)))
        .collect();

    let mut per_topic = BTreeMap::new();
    let mut best: Option<(f64, &TrendSeries, f64, usize)> = None;
    let mut any_overlap = false;
    for series in trends {
        let (xs, ys): (Vec<f64>, Vec<f64>) = days
            .iter()
            .filter_map(|(d, s)| series.standardized_at(*d).map(|t| (*s, t)))
            .unzip();
        if xs.len() < cfg.min_overlap_days.max(3) {
            continue;
        }
        any_overlap = true;
        let r = match pearson_r(&xs, &ys) {
            Ok(r) => r,
            Err(ScreeningError::ConstantInput) => continue,
            Err(e) => return Err(e),
        };
        let r2 = r * r;
        per_topic.insert(series.topic_id.clone(), r2);
        let better = match &best {
            None => true,
            Some((best_r2, best_series, _, _)) => {
                r2 > *best_r2 || (r2 == *best_r2 && series.topic_id < best_series.topic_id)
            }
        };
        if better {
            best = Some((r2, series, r, xs.len()));
        }
    }

    let (r_squared, series, r, n_days_used) = best.ok_or_else(|| {
        if any_overlap {
            ScreeningError::AllConstant {
                meter_id: calendar.meter_id.clone(),
            }
        } else {
            ScreeningError::NoOverlap {
                meter_id: calendar.meter_id.clone(),
                year: training_year,
                min_overlap_days: cfg.min_overlap_days,
            }
        }
    })?;
    Ok(ScreeningResult {
        meter_id: calendar.meter_id.clone(),
        best_topic_id: series.topic_id.clone(),
        geo: series.geo.clone(),
        r,
        r_squared,
        category: cfg.classify(r_squared.min(1.0))?,
        n_days_used,
        per_topic,
    })
}

/// A meter's screening outcome with the attributes the census groups by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRecord {
    pub meter_id: String,
    pub meter_type: MeterType,
    pub primary_use: String,
    pub result: Option<ScreeningResult>,
    /// Why the meter could not be screened, when `result` is `None`.
    pub unscreenable_reason: Option<String>,
}

impl ScreeningRecord {
    /// Unscreenable meters group with Poor.
    pub fn category(&self) -> CorrelationCategory {
        self.result
            .as_ref()
            .map(|r| r.category)
            .unwrap_or(CorrelationCategory::Poor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub label: String,
    /// Counts ordered Poor, Fair, High.
    pub counts: [usize; 3],
    pub percents: [f64; 3],
}

impl CensusRow {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Census {
    /// One row per meter type plus a final "Sum" row; percentages of all meters.
    pub by_meter_type: Vec<CensusRow>,
    /// Percentages within each primary use.
    pub by_primary_use: Vec<CensusRow>,
    /// Category of each topic's r² across meters; percentages within each topic.
    pub by_topic: Vec<CensusRow>,
    pub unscreenable: usize,
}

fn row_percent(label: String, counts: [usize; 3]) -> CensusRow {
    let total: usize = counts.iter().sum();
    let percents = counts.map(|c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 });
    CensusRow { label, counts, percents }
}

pub fn screening_census(records: &[ScreeningRecord], cfg: &ScreeningConfig) -> Census {
    let grand_total = records.len();
    let pct = |c: usize| if grand_total == 0 { 0.0 } else { 100.0 * c as f64 / grand_total as f64 };

    let mut by_type: BTreeMap<MeterType, [usize; 3]> = MeterType::ALL.iter().map(|t| (*t, [0; 3])).collect();
    let mut by_use: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut by_topic: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for rec in records {
        let k = rec.category() as usize;
        by_type.get_mut(&rec.meter_type).expect("all types present")[k] += 1;
        by_use.entry(rec.primary_use.clone()).or_default()[k] += 1;
        if let Some(result) = &rec.result {
            for (topic, r2) in &result.per_topic {
                if let Ok(cat) = cfg.classify(r2.min(1.0)) {
                    by_topic.entry(topic.clone()).or_default()[cat as usize] += 1;
                }
            }
        }
    }

    let mut sum = [0usize; 3];
    let mut rows: Vec<CensusRow> = by_type
        .into_iter()
        .map(|(t, counts)| {
            for k in 0..3 {
                sum[k] += counts[k];
            }
            CensusRow {
                label: t.name().to_string(),
                counts,
                percents: counts.map(pct),
            }
        })
        .collect();
    rows.push(CensusRow {
        label: "Sum".into(),
        counts: sum,
        percents: sum.map(pct),
    });

    Census {
        by_meter_type: rows,
        by_primary_use: by_use.into_iter().map(|(l, c)| row_percent(l, c)).collect(),
        by_topic: by_topic.into_iter().map(|(l, c)| row_percent(l, c)).collect(),
        unscreenable: records.iter().filter(|r| r.result.is_none()).count(),
    }
}

pub fn write_screening_results<W: std::io::Write>(records: &[ScreeningRecord], output: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(["meter_id", "best_topic", "geo", "r", "r2", "category", "n_days_used"])?;
    for rec in records {
        match &rec.result {
            Some(r) => writer.write_record([
                r.meter_id.clone(),
                r.best_topic_id.clone(),
                r.geo.clone(),
                format!("{:.6}", r.r),
                format!("{:.6}", r.r_squared),
                r.category.to_string(),
                r.n_days_used.to_string(),
            ])?,
            None => writer.write_record([
                rec.meter_id.as_str(),
                "",
                "",
                "",
                "",
                "unscreenable",
                "0",
            ])?,
        }
    }
    writer.flush()?;
    Ok(())
}

/// Census table as CSV: `label, poor, poor_pct, fair, fair_pct, high, high_pct, total`.
pub fn write_census_rows<W: std::io::Write>(rows: &[CensusRow], first_column: &str, output: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record([first_column, "poor", "poor_pct", "fair", "fair_pct", "high", "high_pct", "total"])?;
    for row in rows {
        writer.write_record([
            row.label.clone(),
            row.counts[0].to_string(),
            format!("{:.1}", row.percents[0]),
            row.counts[1].to_string(),
            format!("{:.1}", row.percents[1]),
            row.counts[2].to_string(),
            format!("{:.1}", row.percents[2]),
            row.total().to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
