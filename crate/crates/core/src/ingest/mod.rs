//! Loading and cleaning of the building energy inputs.
//!
//! All CSV inputs are UTF-8 with a header row. Timestamps are site-local
//! naive times formatted `YYYY-MM-DD HH:MM:SS`, dates `YYYY-MM-DD`. Hourly
//! series are stored densely from their first hour: a gap is a `false`
//! entry in the validity mask, never a missing row.

mod cleaning;
mod daytype;
mod metadata;
mod meters;
mod weather;

use std::path::PathBuf;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

pub use cleaning::{clean_meter_series, write_cleaning_reports, CleaningConfig, CleaningReport};
pub use daytype::{load_daytype_calendar, DayType, DayTypeCalendar};
pub use metadata::{load_building_metadata, BuildingMeta, BuildingTable};
pub use meters::{
    load_meter_readings, write_meter_readings, MeterLoad, MeterLoadOptions, MeterSeries, MeterType,
};
pub use weather::{
    impute_weather, load_weather, write_weather, ImputeConfig, WeatherField, WeatherLoad,
    WeatherSeries, WeatherVariable,
};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}:{line}: malformed timestamp `{value}`")]
    MalformedTimestamp {
        path: PathBuf,
        line: u64,
        value: String,
    },
    #[error("{path}:{line}: malformed date `{value}`")]
    MalformedDate {
        path: PathBuf,
        line: u64,
        value: String,
    },
    #[error("{path}:{line}: unknown meter type `{value}`")]
    UnknownMeterType {
        path: PathBuf,
        line: u64,
        value: String,
    },
    #[error("{path}:{line}: malformed reading `{value}`")]
    MalformedReading {
        path: PathBuf,
        line: u64,
        value: String,
    },
    #[error("{path}:{line}: duplicate building_id `{building_id}`")]
    DuplicateBuilding {
        path: PathBuf,
        line: u64,
        building_id: String,
    },
    #[error("{path}:{line}: {message}")]
    InvalidField {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}:{line}: unknown day_type `{value}` (allowed: regular, public_holiday, site_specific)")]
    UnknownDayType {
        path: PathBuf,
        line: u64,
        value: String,
    },
    #[error("day-type calendar for site `{site_id}` is missing {date}")]
    MissingCalendarDate { site_id: String, date: NaiveDate },
    #[error("site `{site_id}`: {field} is missing at every hour, cannot impute")]
    Unimputable { site_id: String, field: &'static str },
}

impl IngestError {
    pub(crate) fn csv(path: &std::path::Path, source: csv::Error) -> Self {
        IngestError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Inclusive range of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        assert!(start <= end, "date range start after end");
        Self { start, end }
    }

    /// January 1st through December 31st of `year`.
    pub fn year(year: i32) -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"),
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn contains_hour(&self, ts: NaiveDateTime) -> bool {
        self.contains(ts.date())
    }

    pub fn n_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take(self.n_days())
    }

    pub fn first_hour(&self) -> NaiveDateTime {
        self.start.and_time(NaiveTime::MIN)
    }

    pub fn n_hours(&self) -> usize {
        self.n_days() * 24
    }

    /// Union of two ranges' spans.
    pub fn union(&self, other: &DateRange) -> DateRange {
        DateRange::new(self.start.min(other.start), self.end.max(other.end))
    }
}

pub fn days_in_year(year: i32) -> usize {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

pub(crate) fn parse_timestamp(value: &str) -> Option<NaiveDateTime> {
    let value = value.trim();
    NaiveDateTime::parse_from_str(value, TIMESTAMP_FORMAT)
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(value, "%Y-%m-%dT%H:%M:%S").ok())
}

pub(crate) fn parse_date(value: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(value.trim(), DATE_FORMAT).ok()
}

pub(crate) fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// Whole hours from `origin` to `ts`; `ts` must sit on an hour boundary.
pub(crate) fn hour_offset(origin: NaiveDateTime, ts: NaiveDateTime) -> Option<i64> {
    let delta = ts - origin;
    if delta.num_seconds() % 3600 != 0 {
        return None;
    }
    Some(delta.num_hours())
}

pub(crate) fn hour_at(origin: NaiveDateTime, offset: usize) -> NaiveDateTime {
    origin + Duration::hours(offset as i64)
}

pub(crate) fn floor_to_day(ts: NaiveDateTime) -> NaiveDateTime {
    ts.date().and_time(NaiveTime::MIN)
}

/// Column index lookup over a CSV header.
pub(crate) struct Header {
    names: Vec<String>,
}

impl Header {
    pub(crate) fn new(record: &csv::StringRecord) -> Self {
        Self {
            names: record.iter().map(|s| s.trim().to_ascii_lowercase()).collect(),
        }
    }

    pub(crate) fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub(crate) fn require(&self, path: &std::path::Path, name: &str) -> Result<usize, IngestError> {
        self.find(name).ok_or_else(|| IngestError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    }
}

pub(crate) fn open_csv(path: &std::path::Path) -> Result<(csv::Reader<std::fs::File>, Header), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IngestError::csv(path, e))?;
    let header = Header::new(reader.headers().map_err(|e| IngestError::csv(path, e))?);
    Ok((reader, header))
}

pub(crate) fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}
