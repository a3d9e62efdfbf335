use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{
    format_timestamp, hour_at, hour_offset, line_of, open_csv, parse_timestamp, BuildingTable,
    DateRange, IngestError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeterType {
    Electricity,
    ChilledWater,
    Steam,
    HotWater,
}

impl MeterType {
    pub const ALL: [MeterType; 4] = [
        MeterType::Electricity,
        MeterType::ChilledWater,
        MeterType::Steam,
        MeterType::HotWater,
    ];

    /// Numeric code used by the competition files (0–3).
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            MeterType::Electricity => "electricity",
            MeterType::ChilledWater => "chilledwater",
            MeterType::Steam => "steam",
            MeterType::HotWater => "hotwater",
        }
    }

    /// Accepts the numeric code or the name (case, spaces and underscores ignored).
    pub fn parse(value: &str) -> Option<MeterType> {
        let normalized: String = value
            .trim()
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .collect::<String>()
            .to_ascii_lowercase();
        match normalized.as_str() {
            "0" | "electricity" => Some(MeterType::Electricity),
            "1" | "chilledwater" => Some(MeterType::ChilledWater),
            "2" | "steam" => Some(MeterType::Steam),
            "3" | "hotwater" => Some(MeterType::HotWater),
            _ => None,
        }
    }
}

impl fmt::Display for MeterType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One meter's hourly readings, dense from `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterSeries {
    pub meter_id: String,
    pub building_id: String,
    pub site_id: Option<String>,
    pub meter_type: MeterType,
    pub start: NaiveDateTime,
    /// kWh; the value at a masked hour is whatever was recorded (or NaN if nothing was).
    #[serde(with = "crate::nan_serde")]
    pub readings: Vec<f64>,
    pub valid: Vec<bool>,
}

impl MeterSeries {
    pub fn meter_id_for(building_id: &str, meter_type: MeterType) -> String {
        format!("{building_id}-{}", meter_type.name())
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        hour_at(self.start, index)
    }

    /// Index of `ts` within the series, if it falls on one of its hours.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let offset = hour_offset(self.start, ts)?;
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Iterator over `(timestamp, reading)` for valid hours.
    pub fn valid_hours(&self) -> impl Iterator<Item = (NaiveDateTime, f64)> + '_ {
        self.readings
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter(|(_, (_, v))| **v)
            .map(|(i, (r, _))| (self.timestamp(i), *r))
    }

    /// Equality of identity, span, mask and the readings at valid hours.
    pub fn same_valid_data(&self, other: &MeterSeries) -> bool {
        self.meter_id == other.meter_id
            && self.building_id == other.building_id
            && self.meter_type == other.meter_type
            && self.start == other.start
            && self.valid == other.valid
            && self
                .readings
                .iter()
                .zip(&other.readings)
                .zip(&self.valid)
                .all(|((a, b), v)| !*v || a == b)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MeterLoadOptions<'a> {
    /// Rows outside the range are dropped; every series spans the range.
    pub date_range: Option<DateRange>,
    /// Supplies `site_id` for each meter's building.
    pub buildings: Option<&'a BuildingTable>,
}

#[derive(Debug, Clone)]
pub struct MeterLoad {
    pub series: Vec<MeterSeries>,
    pub duplicate_warning_count: usize,
    pub negative_reading_count: usize,
    pub out_of_range_dropped: usize,
}

struct RawRow {
    ts: NaiveDateTime,
    reading: Option<f64>,
}

/// Loads `building_id, meter, timestamp, meter_reading` rows into one series per
/// (building, meter type).
pub fn load_meter_readings(path: &Path, opts: MeterLoadOptions<'_>) -> Result<MeterLoad, IngestError> {
    let (mut reader, header) = open_csv(path)?;
    let col_building = header.require(path, "building_id")?;
    let col_meter = header.require(path, "meter")?;
    let col_ts = header.require(path, "timestamp")?;
    let col_reading = header.require(path, "meter_reading")?;

    let mut groups: BTreeMap<(String, MeterType), Vec<RawRow>> = BTreeMap::new();
    let mut out_of_range_dropped = 0;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::csv(path, e))?;
        let line = line_of(&record);
        let meter_raw = &record[col_meter];
        let meter_type = MeterType::parse(meter_raw).ok_or_else(|| IngestError::UnknownMeterType {
            path: path.to_path_buf(),
            line,
            value: meter_raw.to_string(),
        })?;
        let ts_raw = &record[col_ts];
        let ts = parse_timestamp(ts_raw)
            .filter(|ts| hour_offset(super::floor_to_day(*ts), *ts).is_some())
            .ok_or_else(|| IngestError::MalformedTimestamp {
                path: path.to_path_buf(),
                line,
                value: ts_raw.to_string(),
            })?;
        let reading_raw = record[col_reading].trim();
        let reading = if reading_raw.is_empty() {
            None
        } else {
            let value: f64 = reading_raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| IngestError::MalformedReading {
                    path: path.to_path_buf(),
                    line,
                    value: reading_raw.to_string(),
                })?;
            Some(value)
        };
        if let Some(range) = &opts.date_range {
            if !range.contains_hour(ts) {
                out_of_range_dropped += 1;
                continue;
            }
        }
        groups
            .entry((record[col_building].to_string(), meter_type))
            .or_default()
            .push(RawRow { ts, reading });
    }

    let mut duplicate_warning_count = 0;
    let mut negative_reading_count = 0;
    let mut series = Vec::with_capacity(groups.len());
    for ((building_id, meter_type), rows) in groups {
        let (start, len) = match &opts.date_range {
            Some(range) => (range.first_hour(), range.n_hours()),
            None => {
                let first = rows.iter().map(|r| r.ts).min().expect("group has rows");
                let last = rows.iter().map(|r| r.ts).max().expect("group has rows");
                (first, (last - first).num_hours() as usize + 1)
            }
        };
        let mut readings = vec![f64::NAN; len];
        let mut valid = vec![false; len];
        let mut seen = vec![false; len];
        for row in rows {
            let idx = hour_offset(start, row.ts).expect("hour aligned") as usize;
            if seen[idx] {
                duplicate_warning_count += 1;
            }
            seen[idx] = true;
            match row.reading {
                Some(value) => {
                    readings[idx] = value;
                    valid[idx] = value >= 0.0;
                    if value < 0.0 {
                        negative_reading_count += 1;
                    }
                }
                None => {
                    readings[idx] = f64::NAN;
                    valid[idx] = false;
                }
            }
        }
        if duplicate_warning_count > 0 {
            log::debug!("{building_id}/{meter_type}: duplicate rows resolved last-wins");
        }
        let site_id = opts
            .buildings
            .and_then(|b| b.get(&building_id))
            .map(|m| m.site_id.clone());
        series.push(MeterSeries {
            meter_id: MeterSeries::meter_id_for(&building_id, meter_type),
            building_id,
            site_id,
            meter_type,
            start,
            readings,
            valid,
        });
    }
    if duplicate_warning_count > 0 {
        log::warn!(
            "{}: {duplicate_warning_count} duplicate (meter, timestamp) rows resolved last-wins",
            path.display()
        );
    }
    Ok(MeterLoad {
        series,
        duplicate_warning_count,
        negative_reading_count,
        out_of_range_dropped,
    })
}

/// Writes series in the loader's schema, masked hours as empty readings.
pub fn write_meter_readings(series: &[MeterSeries], path: &Path) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| IngestError::csv(path, e))?;
    writer
        .write_record(["building_id", "meter", "timestamp", "meter_reading"])
        .map_err(|e| IngestError::csv(path, e))?;
    for s in series {
        let code = s.meter_type.code().to_string();
        for i in 0..s.len() {
            let reading = if s.valid[i] {
                s.readings[i].to_string()
            } else {
                String::new()
            };
            writer
                .write_record([
                    s.building_id.as_str(),
                    code.as_str(),
                    format_timestamp(s.timestamp(i)).as_str(),
                    reading.as_str(),
                ])
                .map_err(|e| IngestError::csv(path, e))?;
        }
    }
    writer.flush().map_err(|e| IngestError::io(path, e))
}
