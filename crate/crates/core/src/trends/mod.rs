//! Daily search-volume series per (topic, country).
//!
//! Series come from CSV exports (`topic_id, geo, date, volume`) or, optionally,
//! from [`fetch::TrendFetcher`], which caches every response in the same
//! schema. Each series is standardized per calendar year before use.

mod catalog;
pub mod fetch;
mod series;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

pub use catalog::{default_catalog, load_topic_catalog, parse_topic_catalog, TopicCategory, TrendTopic};
pub use series::{
    load_trend_csv, parse_trend_csv, standardize_by_year, write_trend_csv, zscore_by_year,
    TrendSeries, MIN_SERIES_DAYS,
};

#[derive(Debug, thiserror::Error)]
pub enum TrendsError {
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: empty catalog")]
    EmptyCatalog { path: PathBuf },
    #[error("{path}: duplicate topic_id `{topic_id}`")]
    DuplicateTopic { path: PathBuf, topic_id: String },
    #[error("{path}:{line}: unknown topic category `{value}` (allowed: building_type, productivity_tool)")]
    UnknownCategory { path: PathBuf, line: u64, value: String },
    #[error("{path}:{line}: malformed date `{value}`")]
    MalformedDate { path: PathBuf, line: u64, value: String },
    #[error("{path}:{line}: volume `{value}` is not an integer in [0, 100]")]
    VolumeOutOfRange { path: PathBuf, line: u64, value: String },
    #[error("{topic_id}/{geo}: series covers {days} days, need at least {min_days}")]
    SeriesTooShort {
        topic_id: String,
        geo: String,
        days: usize,
        min_days: usize,
    },
    #[error("{path}:{line}: duplicate site_id `{site_id}`")]
    DuplicateSite { path: PathBuf, line: u64, site_id: String },
    #[error("{topic_id}/{geo}: partial calendar year at {boundary} (series must cover whole years)")]
    PartialYear {
        topic_id: String,
        geo: String,
        boundary: NaiveDate,
    },
}

/// Loads the `site_id, geo` table that maps each site to the country whose
/// search series it is screened against.
pub fn load_site_geo(path: &Path) -> Result<BTreeMap<String, String>, TrendsError> {
    let csv_err = |source| TrendsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
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
    let (c_site, c_geo) = (col("site_id")?, col("geo")?);
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let site = record[c_site].to_string();
        if out.insert(site.clone(), record[c_geo].to_string()).is_some() {
            return Err(TrendsError::DuplicateSite {
                path: path.to_path_buf(),
                line,
                site_id: site,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_geo_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("site_geo.csv");
        std::fs::write(&path, "site_id,geo\ns1, US\ns2,GB\n").unwrap();
        let map = load_site_geo(&path).unwrap();
        assert_eq!(map["s1"], "US");
        assert_eq!(map["s2"], "GB");
        std::fs::write(&path, "site_id,geo\ns1,US\ns1,GB\n").unwrap();
        assert!(matches!(load_site_geo(&path), Err(TrendsError::DuplicateSite { line: 3, .. })));
    }
}
