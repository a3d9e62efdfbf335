use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::TrendsError;
use crate::ingest::DATE_FORMAT;

/// Shortest series [`load_trend_csv`] accepts.
pub const MIN_SERIES_DAYS: usize = 365;

/// One (topic, country) daily series, contiguous from `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub topic_id: String,
    /// ISO 3166-1 alpha-2 country code.
    pub geo: String,
    pub start: NaiveDate,
    pub raw: Vec<u8>,
    /// Dates absent from the source and filled by interpolation.
    pub interpolated: Vec<bool>,
    /// Per-year z-scores, set by [`standardize_by_year`].
    pub standardized: Option<Vec<f64>>,
    /// Years whose raw values were constant (standardized to zeros).
    pub degenerate_years: Vec<i32>,
}

impl TrendSeries {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.len() as i64 - 1)
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.start + Duration::days(index as i64)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    pub fn standardized_at(&self, date: NaiveDate) -> Option<f64> {
        let idx = self.index_of(date)?;
        self.standardized.as_ref().map(|s| s[idx])
    }
}

pub fn load_trend_csv(path: &Path) -> Result<Vec<TrendSeries>, TrendsError> {
    let file = std::fs::File::open(path).map_err(|e| TrendsError::Csv {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    parse_trend_csv(file, path, MIN_SERIES_DAYS)
}

/// Parses `topic_id, geo, date, volume` rows (any column order) into one raw
/// series per (topic, geo). Interior missing dates are interpolated and rounded.
pub fn parse_trend_csv<R: Read>(input: R, path: &Path, min_days: usize) -> Result<Vec<TrendSeries>, TrendsError> {
    let csv_err = |source| TrendsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TrendsError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let (c_topic, c_geo, c_date, c_volume) = (col("topic_id")?, col("geo")?, col("date")?, col("volume")?);

    let mut groups: BTreeMap<(String, String), BTreeMap<NaiveDate, u8>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let date = NaiveDate::parse_from_str(&record[c_date], DATE_FORMAT).map_err(|_| {
            TrendsError::MalformedDate {
                path: path.to_path_buf(),
                line,
                value: record[c_date].to_string(),
            }
        })?;
        let raw = &record[c_volume];
        let volume = raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && (0.0..=100.0).contains(v))
            .ok_or_else(|| TrendsError::VolumeOutOfRange {
                path: path.to_path_buf(),
                line,
                value: raw.to_string(),
            })?;
        groups
            .entry((record[c_topic].to_string(), record[c_geo].to_string()))
            .or_default()
            .insert(date, volume as u8);
    }

    groups
        .into_iter()
        .map(|((topic_id, geo), by_date)| {
            let start = *by_date.keys().next().expect("group has rows");
            let end = *by_date.keys().next_back().expect("group has rows");
            let len = (end - start).num_days() as usize + 1;
            if len < min_days {
                return Err(TrendsError::SeriesTooShort {
                    topic_id,
                    geo,
                    days: len,
                    min_days,
                });
            }
            let mut raw = vec![0u8; len];
            let mut interpolated = vec![true; len];
            for (date, v) in &by_date {
                let idx = (*date - start).num_days() as usize;
                raw[idx] = *v;
                interpolated[idx] = false;
            }
            fill_gaps(&mut raw, &interpolated);
            Ok(TrendSeries {
                topic_id,
                geo,
                start,
                raw,
                interpolated,
                standardized: None,
                degenerate_years: Vec::new(),
            })
        })
        .collect()
}

fn fill_gaps(raw: &mut [u8], missing: &[bool]) {
    let mut i = 0;
    while i < raw.len() {
        if !missing[i] {
            i += 1;
            continue;
        }
        let gap_start = i;
        while missing[i] {
            i += 1;
        }
        // Endpoints are observed by construction.
        let left = raw[gap_start - 1] as f64;
        let right = raw[i] as f64;
        let step = (right - left) / (i - gap_start + 1) as f64;
        for k in gap_start..i {
            raw[k] = (left + step * (k - gap_start + 1) as f64).round() as u8;
        }
    }
}

/// Writes series in the loader's schema (raw volumes only).
pub fn write_trend_csv<W: std::io::Write>(series: &[TrendSeries], output: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(["topic_id", "geo", "date", "volume"])?;
    for s in series {
        for (i, v) in s.raw.iter().enumerate() {
            writer.write_record([
                s.topic_id.as_str(),
                s.geo.as_str(),
                s.date(i).format(DATE_FORMAT).to_string().as_str(),
                v.to_string().as_str(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Z-scores `values` (daily from `start`) independently within each calendar
/// year using the population standard deviation. Constant years become zeros
/// and are returned as degenerate.
pub fn zscore_by_year(
    start: NaiveDate,
    values: &[f64],
    allow_partial: bool,
) -> Result<(Vec<f64>, Vec<i32>), NaiveDate> {
    if values.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let end = start + Duration::days(values.len() as i64 - 1);
    if !allow_partial {
        if (start.month(), start.day()) != (1, 1) {
            return Err(start);
        }
        if (end.month(), end.day()) != (12, 31) {
            return Err(end);
        }
    }

    let mut out = vec![0.0; values.len()];
    let mut degenerate = Vec::new();
    let mut block_start = 0;
    while block_start < values.len() {
        let year = (start + Duration::days(block_start as i64)).year();
        let mut block_end = block_start;
        while block_end < values.len() && (start + Duration::days(block_end as i64)).year() == year {
            block_end += 1;
        }
        let block = &values[block_start..block_end];
        let n = block.len() as f64;
        let mean = block.iter().sum::<f64>() / n;
        let std = (block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            degenerate.push(year);
        } else {
            for (o, v) in out[block_start..block_end].iter_mut().zip(block) {
                *o = (v - mean) / std;
            }
        }
        block_start = block_end;
    }
    Ok((out, degenerate))
}

/// Adds per-year z-scores of the raw volumes.
pub fn standardize_by_year(series: &TrendSeries, allow_partial: bool) -> Result<TrendSeries, TrendsError> {
    let values: Vec<f64> = series.raw.iter().map(|v| *v as f64).collect();
    let (standardized, degenerate_years) =
        zscore_by_year(series.start, &values, allow_partial).map_err(|boundary| TrendsError::PartialYear {
            topic_id: series.topic_id.clone(),
            geo: series.geo.clone(),
            boundary,
        })?;
    if !degenerate_years.is_empty() {
        log::warn!(
            "{}/{}: constant search volume in {:?}, standardized to zeros",
            series.topic_id,
            series.geo,
            degenerate_years
        );
    }
    Ok(TrendSeries {
        standardized: Some(standardized),
        degenerate_years,
        ..series.clone()
    })
}
