use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{line_of, open_csv, parse_date, DateRange, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Regular,
    PublicHoliday,
    SiteSpecific,
}

impl DayType {
    pub const ALL: [DayType; 3] = [DayType::Regular, DayType::PublicHoliday, DayType::SiteSpecific];

    pub fn name(self) -> &'static str {
        match self {
            DayType::Regular => "regular",
            DayType::PublicHoliday => "public_holiday",
            DayType::SiteSpecific => "site_specific",
        }
    }

    pub fn parse(value: &str) -> Option<DayType> {
        match value.trim().to_ascii_lowercase().as_str() {
            "regular" => Some(DayType::Regular),
            "public_holiday" => Some(DayType::PublicHoliday),
            "site_specific" => Some(DayType::SiteSpecific),
            _ => None,
        }
    }
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-site day labels, total over the configured range.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTypeCalendar {
    labels: BTreeMap<String, BTreeMap<NaiveDate, DayType>>,
}

impl DayTypeCalendar {
    pub fn get(&self, site_id: &str, date: NaiveDate) -> Option<DayType> {
        self.labels.get(site_id)?.get(&date).copied()
    }

    pub fn sites(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }

    pub fn insert(&mut self, site_id: &str, date: NaiveDate, day_type: DayType) {
        self.labels
            .entry(site_id.to_string())
            .or_default()
            .insert(date, day_type);
    }

    /// Checks that every listed site has a label for every date of `range`.
    pub fn ensure_total(&self, range: &DateRange) -> Result<(), IngestError> {
        for (site_id, dates) in &self.labels {
            if let Some(date) = range.days().find(|d| !dates.contains_key(d)) {
                return Err(IngestError::MissingCalendarDate {
                    site_id: site_id.clone(),
                    date,
                });
            }
        }
        Ok(())
    }
}

/// Loads `site_id, date, day_type`; fails on the first date of `range` missing
/// for any site in the file.
pub fn load_daytype_calendar(path: &Path, range: &DateRange) -> Result<DayTypeCalendar, IngestError> {
    let (mut reader, header) = open_csv(path)?;
    let col_site = header.require(path, "site_id")?;
    let col_date = header.require(path, "date")?;
    let col_type = header.require(path, "day_type")?;

    let mut calendar = DayTypeCalendar::default();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::csv(path, e))?;
        let line = line_of(&record);
        let date = parse_date(&record[col_date]).ok_or_else(|| IngestError::MalformedDate {
            path: path.to_path_buf(),
            line,
            value: record[col_date].to_string(),
        })?;
        let day_type = DayType::parse(&record[col_type]).ok_or_else(|| IngestError::UnknownDayType {
            path: path.to_path_buf(),
            line,
            value: record[col_type].to_string(),
        })?;
        calendar.insert(&record[col_site], date, day_type);
    }
    calendar.ensure_total(range)?;
    Ok(calendar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.csv");
        std::fs::write(&path, body).unwrap();
        (dir, path)
    }

    fn year_rows(skip: Option<NaiveDate>) -> String {
        let mut body = String::from("site_id,date,day_type\n");
        for d in DateRange::year(2017).days() {
            if Some(d) == skip {
                continue;
            }
            let label = if d == NaiveDate::from_ymd_opt(2017, 12, 25).unwrap() {
                "public_holiday"
            } else {
                "regular"
            };
            body.push_str(&format!("s0,{d},{label}\n"));
        }
        body
    }

    #[test]
    fn full_year_loads() {
        let (_dir, path) = write(&year_rows(None));
        let cal = load_daytype_calendar(&path, &DateRange::year(2017)).unwrap();
        assert_eq!(
            cal.get("s0", NaiveDate::from_ymd_opt(2017, 12, 25).unwrap()),
            Some(DayType::PublicHoliday)
        );
        assert_eq!(cal.sites().count(), 1);
    }

    #[test]
    fn missing_date_is_named() {
        let missing = NaiveDate::from_ymd_opt(2017, 7, 4).unwrap();
        let (_dir, path) = write(&year_rows(Some(missing)));
        let err = load_daytype_calendar(&path, &DateRange::year(2017)).unwrap_err();
        assert!(err.to_string().contains("2017-07-04"), "{err}");
    }

    #[test]
    fn unknown_label_lists_allowed_values() {
        let (_dir, path) = write("site_id,date,day_type\ns0,2017-01-01,vacation\n");
        let err = load_daytype_calendar(&path, &DateRange::year(2017)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vacation") && msg.contains("public_holiday") && msg.contains("site_specific"));
    }
}
