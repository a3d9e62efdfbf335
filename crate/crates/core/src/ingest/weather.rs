use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::{
    format_timestamp, hour_at, hour_offset, line_of, open_csv, parse_timestamp, DateRange,
    IngestError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherVariable {
    AirTemperature,
    CloudCoverage,
    DewTemperature,
    PrecipDepth,
    SeaLevelPressure,
    WindSpeed,
    WindDirection,
}

impl WeatherVariable {
    pub const ALL: [WeatherVariable; 7] = [
        WeatherVariable::AirTemperature,
        WeatherVariable::CloudCoverage,
        WeatherVariable::DewTemperature,
        WeatherVariable::PrecipDepth,
        WeatherVariable::SeaLevelPressure,
        WeatherVariable::WindSpeed,
        WeatherVariable::WindDirection,
    ];

    pub fn column(self) -> &'static str {
        match self {
            WeatherVariable::AirTemperature => "air_temperature",
            WeatherVariable::CloudCoverage => "cloud_coverage",
            WeatherVariable::DewTemperature => "dew_temperature",
            WeatherVariable::PrecipDepth => "precip_depth",
            WeatherVariable::SeaLevelPressure => "sea_level_pressure",
            WeatherVariable::WindSpeed => "wind_speed",
            WeatherVariable::WindDirection => "wind_direction",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            WeatherVariable::PrecipDepth => &["precip_depth_1_hr"],
            _ => &[],
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// One weather variable at hourly resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherField {
    #[serde(with = "crate::nan_serde")]
    pub values: Vec<f64>,
    /// Value was observed (and valid) in the source file.
    pub present: Vec<bool>,
    /// Value was filled by [`impute_weather`].
    pub imputed: Vec<bool>,
}

impl WeatherField {
    fn missing(len: usize) -> Self {
        Self {
            values: vec![f64::NAN; len],
            present: vec![false; len],
            imputed: vec![false; len],
        }
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        (self.present[index] || self.imputed[index]).then(|| self.values[index])
    }

    pub fn missing_count(&self) -> usize {
        self.present
            .iter()
            .zip(&self.imputed)
            .filter(|(p, i)| !**p && !**i)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    pub site_id: String,
    pub start: NaiveDateTime,
    pub fields: Vec<WeatherField>,
}

impl WeatherSeries {
    pub fn len(&self) -> usize {
        self.fields[0].values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn field(&self, var: WeatherVariable) -> &WeatherField {
        &self.fields[var.index()]
    }

    pub fn field_mut(&mut self, var: WeatherVariable) -> &mut WeatherField {
        &mut self.fields[var.index()]
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        hour_at(self.start, index)
    }

    /// Value of `var` at `ts`, if observed or imputed.
    pub fn value_at(&self, var: WeatherVariable, ts: NaiveDateTime) -> Option<f64> {
        let offset = hour_offset(self.start, ts)?;
        if offset < 0 || offset as usize >= self.len() {
            return None;
        }
        self.field(var).get(offset as usize)
    }
}

#[derive(Debug, Clone)]
pub struct WeatherLoad {
    pub series: Vec<WeatherSeries>,
    /// Cells that could not be parsed as numbers (masked missing).
    pub unparseable_count: usize,
    /// Wind directions outside [0, 360] (masked missing).
    pub invalid_wind_direction_count: usize,
}

/// Loads hourly weather per site. Bad cells are masked with a warning, never zeroed.
pub fn load_weather(path: &Path, date_range: Option<DateRange>) -> Result<WeatherLoad, IngestError> {
    let (mut reader, header) = open_csv(path)?;
    let col_site = header.require(path, "site_id")?;
    let col_ts = header.require(path, "timestamp")?;
    let mut var_cols = Vec::with_capacity(WeatherVariable::ALL.len());
    for var in WeatherVariable::ALL {
        let col = std::iter::once(var.column())
            .chain(var.aliases().iter().copied())
            .find_map(|name| header.find(name))
            .ok_or_else(|| IngestError::MissingColumn {
                path: path.to_path_buf(),
                column: var.column().to_string(),
            })?;
        var_cols.push(col);
    }

    type Row = (NaiveDateTime, [Option<f64>; 7]);
    let mut per_site: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    let mut unparseable_count = 0;
    let mut invalid_wind_direction_count = 0;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::csv(path, e))?;
        let line = line_of(&record);
        let ts = parse_timestamp(&record[col_ts])
            .filter(|ts| ts.minute() == 0 && ts.second() == 0)
            .ok_or_else(|| IngestError::MalformedTimestamp {
                path: path.to_path_buf(),
                line,
                value: record[col_ts].to_string(),
            })?;
        if date_range.is_some_and(|r| !r.contains_hour(ts)) {
            continue;
        }
        let mut values = [None; 7];
        for (var, &col) in WeatherVariable::ALL.iter().zip(&var_cols) {
            let raw = record[col].trim();
            if raw.is_empty() {
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if *var == WeatherVariable::WindDirection && !(0.0..=360.0).contains(&v) {
                        invalid_wind_direction_count += 1;
                        log::warn!("{}:{line}: wind_direction {v} outside [0, 360], masked", path.display());
                    } else {
                        values[var.index()] = Some(v);
                    }
                }
                _ => {
                    unparseable_count += 1;
                    log::warn!("{}:{line}: {} `{raw}` is not numeric, masked", path.display(), var.column());
                }
            }
        }
        per_site
            .entry(record[col_site].to_string())
            .or_default()
            .push((ts, values));
    }

    let series = per_site
        .into_iter()
        .map(|(site_id, rows)| {
            let (start, len) = match &date_range {
                Some(r) => (r.first_hour(), r.n_hours()),
                None => {
                    let first = rows.iter().map(|r| r.0).min().expect("site has rows");
                    let last = rows.iter().map(|r| r.0).max().expect("site has rows");
                    (first, (last - first).num_hours() as usize + 1)
                }
            };
            let mut fields: Vec<WeatherField> =
                WeatherVariable::ALL.iter().map(|_| WeatherField::missing(len)).collect();
            for (ts, values) in rows {
                let idx = hour_offset(start, ts).expect("hour aligned") as usize;
                for (field, value) in fields.iter_mut().zip(values) {
                    match value {
                        Some(v) => {
                            field.values[idx] = v;
                            field.present[idx] = true;
                        }
                        None => {
                            field.values[idx] = f64::NAN;
                            field.present[idx] = false;
                        }
                    }
                }
            }
            WeatherSeries {
                site_id,
                start,
                fields,
            }
        })
        .collect();
    Ok(WeatherLoad {
        series,
        unparseable_count,
        invalid_wind_direction_count,
    })
}

pub fn write_weather(series: &[WeatherSeries], path: &Path) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| IngestError::csv(path, e))?;
    let mut header = vec!["site_id", "timestamp"];
    header.extend(WeatherVariable::ALL.iter().map(|v| v.column()));
    writer.write_record(&header).map_err(|e| IngestError::csv(path, e))?;
    for s in series {
        for i in 0..s.len() {
            let mut row = vec![s.site_id.clone(), format_timestamp(s.timestamp(i))];
            row.extend(
                s.fields
                    .iter()
                    .map(|f| f.get(i).map(|v| v.to_string()).unwrap_or_default()),
            );
            writer.write_record(&row).map_err(|e| IngestError::csv(path, e))?;
        }
    }
    writer.flush().map_err(|e| IngestError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeConfig {
    /// Longest gap (hours) filled by linear interpolation between its neighbours.
    pub max_interp_hours: usize,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self { max_interp_hours: 6 }
    }
}

/// Fills short gaps by linear interpolation and long air/dew temperature gaps by
/// the site's hour-of-day monthly mean. Observed values are never touched.
pub fn impute_weather(w: &WeatherSeries, cfg: &ImputeConfig) -> Result<WeatherSeries, IngestError> {
    let mut out = w.clone();
    for var in WeatherVariable::ALL {
        let field = out.field_mut(var);
        interpolate_short_gaps(field, cfg.max_interp_hours);
    }
    for var in [WeatherVariable::AirTemperature, WeatherVariable::DewTemperature] {
        if !w.field(var).present.iter().any(|p| *p) {
            return Err(IngestError::Unimputable {
                site_id: w.site_id.clone(),
                field: var.column(),
            });
        }
        let profile = HourMonthProfile::from_observed(w, var);
        let start = out.start;
        let field = out.field_mut(var);
        for i in 0..field.values.len() {
            if field.present[i] || field.imputed[i] {
                continue;
            }
            let ts = hour_at(start, i);
            field.values[i] = profile.value(ts.month0() as usize, ts.hour() as usize);
            field.imputed[i] = true;
        }
    }
    Ok(out)
}

fn interpolate_short_gaps(field: &mut WeatherField, max_gap: usize) {
    let len = field.values.len();
    let mut i = 0;
    while i < len {
        if field.present[i] {
            i += 1;
            continue;
        }
        let gap_start = i;
        while i < len && !field.present[i] {
            i += 1;
        }
        let gap_len = i - gap_start;
        if gap_start == 0 || i == len || gap_len > max_gap {
            continue;
        }
        let left = field.values[gap_start - 1];
        let right = field.values[i];
        let step = (right - left) / (gap_len + 1) as f64;
        for k in 0..gap_len {
            field.values[gap_start + k] = left + step * (k + 1) as f64;
            field.imputed[gap_start + k] = true;
        }
    }
}

/// Means of observed values by (month, hour), with coarser fallbacks.
struct HourMonthProfile {
    by_month_hour: [[Option<f64>; 24]; 12],
    by_hour: [Option<f64>; 24],
    overall: f64,
}

impl HourMonthProfile {
    fn from_observed(w: &WeatherSeries, var: WeatherVariable) -> Self {
        let field = w.field(var);
        let mut sums = [[(0.0, 0usize); 24]; 12];
        for i in 0..field.values.len() {
            if field.present[i] {
                let ts = w.timestamp(i);
                let cell = &mut sums[ts.month0() as usize][ts.hour() as usize];
                cell.0 += field.values[i];
                cell.1 += 1;
            }
        }
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let mut by_month_hour = [[None; 24]; 12];
        let mut hour_sums = [(0.0, 0usize); 24];
        let mut total = (0.0, 0usize);
        for (m, row) in sums.iter().enumerate() {
            for (h, &cell) in row.iter().enumerate() {
                by_month_hour[m][h] = mean(cell);
                hour_sums[h].0 += cell.0;
                hour_sums[h].1 += cell.1;
                total.0 += cell.0;
                total.1 += cell.1;
            }
        }
        Self {
            by_month_hour,
            by_hour: hour_sums.map(mean),
            overall: mean(total).unwrap_or(f64::NAN),
        }
    }

    fn value(&self, month0: usize, hour: usize) -> f64 {
        self.by_month_hour[month0][hour]
            .or(self.by_hour[hour])
            .unwrap_or(self.overall)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "site_id,timestamp,air_temperature,cloud_coverage,dew_temperature,precip_depth,sea_level_pressure,wind_speed,wind_direction\n";

    fn load(body: &str) -> WeatherLoad {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        std::fs::write(&path, body).unwrap();
        load_weather(&path, None).unwrap()
    }

    fn complete_rows(hours: usize) -> String {
        (0..hours)
            .map(|h| {
                let ts = hour_at(
                    chrono::NaiveDate::from_ymd_opt(2016, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
                    h,
                );
                format!("s0,{},{},4,{},0,1013.2,3.1,180\n", format_timestamp(ts), h as f64 * 0.1, -1.0)
            })
            .collect()
    }

    #[test]
    fn complete_file_has_no_missing_flags() {
        let load = load(&format!("{HEADER}{}", complete_rows(48)));
        assert_eq!(load.series.len(), 1);
        let s = &load.series[0];
        assert_eq!(s.len(), 48);
        assert!(s.fields.iter().all(|f| f.missing_count() == 0));
    }

    #[test]
    fn empty_cloud_cell_is_masked() {
        let body = format!("{HEADER}s0,2016-01-01 00:00:00,1,,0,0,1000,1,10\n");
        let s = &load(&body).series[0];
        assert!(!s.field(WeatherVariable::CloudCoverage).present[0]);
        assert!(s.field(WeatherVariable::AirTemperature).present[0]);
    }

    #[test]
    fn wind_direction_370_is_masked_not_clamped() {
        let body = format!("{HEADER}s0,2016-01-01 00:00:00,1,2,0,0,1000,1,370\n");
        let load = load(&body);
        assert_eq!(load.invalid_wind_direction_count, 1);
        assert_eq!(load.series[0].field(WeatherVariable::WindDirection).get(0), None);
    }

    #[test]
    fn unparseable_cell_is_masked_with_count() {
        let body = format!("{HEADER}s0,2016-01-01 00:00:00,warm,2,0,0,1000,1,10\n");
        let load = load(&body);
        assert_eq!(load.unparseable_count, 1);
        assert_eq!(load.series[0].field(WeatherVariable::AirTemperature).get(0), None);
    }

    fn temp_series(values: &[Option<f64>]) -> WeatherSeries {
        let len = values.len();
        let mut fields: Vec<WeatherField> =
            WeatherVariable::ALL.iter().map(|_| WeatherField::missing(len)).collect();
        for var in [WeatherVariable::AirTemperature, WeatherVariable::DewTemperature] {
            let f = &mut fields[var.index()];
            for (i, v) in values.iter().enumerate() {
                if let Some(v) = v {
                    f.values[i] = *v;
                    f.present[i] = true;
                }
            }
        }
        WeatherSeries {
            site_id: "s0".into(),
            start: chrono::NaiveDate::from_ymd_opt(2016, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            fields,
        }
    }

    #[test]
    fn two_hour_gap_is_interpolated() {
        let w = temp_series(&[Some(10.0), None, None, Some(12.0)]);
        let out = impute_weather(&w, &ImputeConfig { max_interp_hours: 2 }).unwrap();
        let f = out.field(WeatherVariable::AirTemperature);
        assert!((f.values[1] - 32.0 / 3.0).abs() < 1e-12);
        assert!((f.values[2] - 34.0 / 3.0).abs() < 1e-12);
        assert!(f.imputed[1] && f.imputed[2] && !f.imputed[0]);
        assert!(((f.values[1] * 100.0).round() / 100.0 - 10.67).abs() < 1e-9);
    }

    #[test]
    fn no_gaps_is_identity() {
        let w = temp_series(&[Some(1.0), Some(2.0), Some(3.0)]);
        let out = impute_weather(&w, &ImputeConfig::default()).unwrap();
        for var in [WeatherVariable::AirTemperature, WeatherVariable::DewTemperature] {
            assert_eq!(out.field(var), w.field(var));
        }
    }

    #[test]
    fn fully_missing_temperature_is_an_error() {
        let w = temp_series(&[None, None, None]);
        assert!(matches!(
            impute_weather(&w, &ImputeConfig::default()),
            Err(IngestError::Unimputable { .. })
        ));
    }

    #[test]
    fn long_gap_uses_hour_of_day_monthly_mean() {
        // Two days: day one observed, day two missing except its last hour.
        let mut values: Vec<Option<f64>> = (0..24).map(|h| Some(h as f64)).collect();
        values.extend((0..23).map(|_| None));
        values.push(Some(100.0));
        let w = temp_series(&values);
        let out = impute_weather(&w, &ImputeConfig { max_interp_hours: 3 }).unwrap();
        let f = out.field(WeatherVariable::AirTemperature);
        // hour 5 of day two: mean of observed hour-5 values in January = 5
        assert_eq!(f.values[24 + 5], 5.0);
        // hour 23 was observed on both days
        assert_eq!(f.values[47], 100.0);
        assert_eq!(f.missing_count(), 0);
    }

    #[test]
    fn other_fields_stay_missing_beyond_interpolation() {
        let mut w = temp_series(&[Some(1.0); 10]);
        let cloud = w.field_mut(WeatherVariable::CloudCoverage);
        cloud.values[0] = 2.0;
        cloud.present[0] = true;
        cloud.values[9] = 4.0;
        cloud.present[9] = true;
        let out = impute_weather(&w, &ImputeConfig { max_interp_hours: 3 }).unwrap();
        assert_eq!(out.field(WeatherVariable::CloudCoverage).missing_count(), 8);
    }
}
