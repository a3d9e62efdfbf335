//! Hourly feature matrices for the baseline and trend-augmented models.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::{Datelike, NaiveDateTime, Timelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{format_timestamp, BuildingTable, DateRange, MeterSeries, WeatherSeries, WeatherVariable};
use crate::screening::ScreeningRecord;
use crate::trends::TrendSeries;

/// Code given to categories never seen when the dictionary was built.
pub const UNKNOWN_CATEGORY: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("meter {meter_id}: no metadata for building {building_id}")]
    MissingMetadata { meter_id: String, building_id: String },
    #[error("meter {0}: proposed mode needs a screening entry")]
    MissingScreening(String),
    #[error("no standardized trend series for topic {topic_id} in {geo}")]
    MissingTrend { topic_id: String, geo: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Proposed,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Proposed => "proposed",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Meta,
    Weather,
    Temporal,
    Trend,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub source: FeatureSource,
}

impl FeatureSpec {
    pub fn new(name: &str, kind: FeatureKind, source: FeatureSource) -> Self {
        Self {
            name: name.to_string(),
            kind,
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
}

const WEATHER_FEATURES: [WeatherVariable; 4] = [
    WeatherVariable::AirTemperature,
    WeatherVariable::DewTemperature,
    WeatherVariable::CloudCoverage,
    WeatherVariable::PrecipDepth,
];

pub const TREND_FEATURE: &str = "trend_value";

impl FeatureSchema {
    pub fn baseline() -> Self {
        use FeatureKind::*;
        use FeatureSource::*;
        let mut features = vec![
            FeatureSpec::new("building_id", Categorical, Meta),
            FeatureSpec::new("meter_type", Categorical, Meta),
            FeatureSpec::new("primary_use", Categorical, Meta),
            FeatureSpec::new("log10_square_feet", Numeric, Meta),
            FeatureSpec::new("year_built", Numeric, Meta),
        ];
        features.extend(WEATHER_FEATURES.iter().map(|v| FeatureSpec::new(v.column(), Numeric, Weather)));
        features.push(FeatureSpec::new("hour", Numeric, Temporal));
        features.push(FeatureSpec::new("day_of_week", Numeric, Temporal));
        Self { features }
    }

    pub fn proposed() -> Self {
        let mut schema = Self::baseline();
        schema
            .features
            .push(FeatureSpec::new(TREND_FEATURE, FeatureKind::Numeric, FeatureSource::Trend));
        schema
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Baseline => Self::baseline(),
            Mode::Proposed => Self::proposed(),
        }
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    /// NaN marks a missing cell.
    Numeric(#[serde(with = "crate::nan_serde")] Vec<f64>),
    /// Unencoded labels, interned per column: row `i` is `labels[index[i]]`.
    /// An empty label is treated as missing.
    Labels { labels: Vec<String>, index: Vec<u32> },
    /// Dictionary codes; [`UNKNOWN_CATEGORY`] for unseen or missing labels.
    Categorical(Vec<u32>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Labels { index, .. } => index.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn take(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Labels { labels, index } => Column::Labels {
                labels: labels.clone(),
                index: rows.iter().map(|&r| index[r]).collect(),
            },
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Column-major hourly rows ordered by meter, then timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    /// Distinct meters in row order.
    pub meter_ids: Vec<String>,
    /// Index into `meter_ids` for every row.
    pub row_meter: Vec<u32>,
    pub timestamps: Vec<NaiveDateTime>,
    pub columns: Vec<Column>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn meter_of(&self, row: usize) -> &str {
        &self.meter_ids[self.row_meter[row] as usize]
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema.index_of(name).map(|i| &self.columns[i])
    }

    /// Numeric value of a cell, with categorical codes widened to f64
    /// (unknown codes read as NaN).
    pub fn value(&self, row: usize, col: usize) -> f64 {
        match &self.columns[col] {
            Column::Numeric(v) => v[row],
            Column::Categorical(v) if v[row] == UNKNOWN_CATEGORY => f64::NAN,
            Column::Categorical(v) => v[row] as f64,
            Column::Labels { .. } => f64::NAN,
        }
    }

    pub fn is_encoded(&self) -> bool {
        !self.columns.iter().any(|c| matches!(c, Column::Labels { .. }))
    }

    /// Appends a column; used for ablations such as a pure-noise feature.
    pub fn push_column(&mut self, spec: FeatureSpec, column: Column) -> Result<(), FeatureError> {
        if column.len() != self.n_rows() {
            return Err(FeatureError::SchemaMismatch(format!(
                "column {} has {} rows, matrix has {}",
                spec.name,
                column.len(),
                self.n_rows()
            )));
        }
        self.schema.features.push(spec);
        self.columns.push(column);
        Ok(())
    }

    /// Rows for which `keep` holds, preserving order.
    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> (FeatureMatrix, Vec<usize>) {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&r| keep(r)).collect();
        let mut used = vec![u32::MAX; self.meter_ids.len()];
        let mut meter_ids = Vec::new();
        let row_meter = rows
            .iter()
            .map(|&r| {
                let m = self.row_meter[r] as usize;
                if used[m] == u32::MAX {
                    used[m] = meter_ids.len() as u32;
                    meter_ids.push(self.meter_ids[m].clone());
                }
                used[m]
            })
            .collect();
        let matrix = FeatureMatrix {
            schema: self.schema.clone(),
            meter_ids,
            row_meter,
            timestamps: rows.iter().map(|&r| self.timestamps[r]).collect(),
            columns: self.columns.iter().map(|c| c.take(&rows)).collect(),
        };
        (matrix, rows)
    }

    /// Audit dump: one header row, missing cells empty, categories as codes
    /// (or labels, before encoding).
    pub fn write_csv<W: std::io::Write>(&self, target: Option<&TargetVector>, output: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(output);
        let mut header = vec!["meter_id".to_string(), "timestamp".to_string()];
        header.extend(self.schema.names().map(str::to_string));
        if target.is_some() {
            header.push("target".into());
        }
        writer.write_record(&header)?;
        for row in 0..self.n_rows() {
            let mut record = vec![self.meter_of(row).to_string(), format_timestamp(self.timestamps[row])];
            for col in &self.columns {
                record.push(match col {
                    Column::Numeric(v) if v[row].is_nan() => String::new(),
                    Column::Numeric(v) => v[row].to_string(),
                    Column::Categorical(v) if v[row] == UNKNOWN_CATEGORY => String::new(),
                    Column::Categorical(v) => v[row].to_string(),
                    Column::Labels { labels, index } => labels[index[row] as usize].clone(),
                });
            }
            if let Some(t) = target {
                record.push(t.0[row].to_string());
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// log1p of the reading for every matrix row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVector(pub Vec<f64>);

impl TargetVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> TargetVector {
        TargetVector(rows.iter().map(|&r| self.0[r]).collect())
    }
}

pub struct FeatureInputs<'a> {
    pub meters: &'a [MeterSeries],
    pub buildings: &'a BuildingTable,
    /// One series per site; sites without weather get missing cells.
    pub weather: &'a [WeatherSeries],
    /// Standardized series; only needed in proposed mode.
    pub trends: &'a [TrendSeries],
    /// Only needed in proposed mode.
    pub screening: &'a [ScreeningRecord],
    /// Restricts rows to this range when set.
    pub range: Option<DateRange>,
}

struct LabelInterner {
    labels: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl LabelInterner {
    fn new() -> Self {
        Self {
            labels: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&i) = self.lookup.get(label) {
            return i;
        }
        let i = self.labels.len() as u32;
        self.labels.push(label.to_string());
        self.lookup.insert(label.to_string(), i);
        i
    }
}

struct MeterRows {
    timestamps: Vec<NaiveDateTime>,
    target: Vec<f64>,
    numeric: Vec<Vec<f64>>,
}

/// Joins cleaned readings with metadata, weather, calendar features and, in
/// proposed mode, the meter's best-fit topic. Only valid hours become rows.
pub fn build_feature_matrix(
    inputs: &FeatureInputs<'_>,
    mode: Mode,
) -> Result<(FeatureMatrix, TargetVector), FeatureError> {
    let schema = FeatureSchema::for_mode(mode);
    let mut meters: Vec<&MeterSeries> = inputs.meters.iter().collect();
    meters.sort_by(|a, b| a.meter_id.cmp(&b.meter_id));

    let weather: HashMap<&str, &WeatherSeries> = inputs.weather.iter().map(|w| (w.site_id.as_str(), w)).collect();
    let trends: HashMap<(&str, &str), &TrendSeries> = inputs
        .trends
        .iter()
        .map(|t| ((t.topic_id.as_str(), t.geo.as_str()), t))
        .collect();
    let screening: BTreeMap<&str, &ScreeningRecord> =
        inputs.screening.iter().map(|s| (s.meter_id.as_str(), s)).collect();

    let mut metas = Vec::with_capacity(meters.len());
    let mut topics: Vec<Option<&TrendSeries>> = Vec::with_capacity(meters.len());
    for m in &meters {
        let meta = inputs.buildings.get(&m.building_id).ok_or_else(|| FeatureError::MissingMetadata {
            meter_id: m.meter_id.clone(),
            building_id: m.building_id.clone(),
        })?;
        metas.push(meta);
        if mode == Mode::Proposed {
            let record = screening
                .get(m.meter_id.as_str())
                .ok_or_else(|| FeatureError::MissingScreening(m.meter_id.clone()))?;
            let topic = match &record.result {
                Some(r) => {
                    let series = trends
                        .get(&(r.best_topic_id.as_str(), r.geo.as_str()))
                        .filter(|t| t.standardized.is_some())
                        .ok_or_else(|| FeatureError::MissingTrend {
                            topic_id: r.best_topic_id.clone(),
                            geo: r.geo.clone(),
                        })?;
                    Some(*series)
                }
                None => None,
            };
            topics.push(topic);
        }
    }

    let n_numeric = schema.width() - 3;
    let per_meter: Vec<MeterRows> = meters
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            let meta = metas[k];
            let site_weather = weather.get(meta.site_id.as_str());
            let log_sqft = meta.square_feet.log10();
            let year_built = meta.year_built.map(f64::from).unwrap_or(f64::NAN);
            let mut rows = MeterRows {
                timestamps: Vec::new(),
                target: Vec::new(),
                numeric: vec![Vec::new(); n_numeric],
            };
            for (ts, reading) in m.valid_hours() {
                if inputs.range.is_some_and(|r| !r.contains_hour(ts)) {
                    continue;
                }
                rows.timestamps.push(ts);
                rows.target.push(reading.ln_1p());
                let mut values = vec![log_sqft, year_built];
                values.extend(
                    WEATHER_FEATURES
                        .iter()
                        .map(|v| site_weather.and_then(|w| w.value_at(*v, ts)).unwrap_or(f64::NAN)),
                );
                values.push(ts.hour() as f64);
                values.push(ts.weekday().num_days_from_monday() as f64);
                if mode == Mode::Proposed {
                    values.push(
                        topics[k]
                            .and_then(|t| t.standardized_at(ts.date()))
                            .unwrap_or(f64::NAN),
                    );
                }
                for (col, v) in rows.numeric.iter_mut().zip(values) {
                    col.push(v);
                }
            }
            rows
        })
        .collect();

    let mut building = LabelInterner::new();
    let mut meter_type = LabelInterner::new();
    let mut primary_use = LabelInterner::new();
    let mut cat_index: [Vec<u32>; 3] = Default::default();
    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); n_numeric];
    let mut timestamps = Vec::new();
    let mut target = Vec::new();
    let mut row_meter = Vec::new();
    for (k, rows) in per_meter.into_iter().enumerate() {
        let n = rows.timestamps.len();
        let codes = [
            building.intern(&meters[k].building_id),
            meter_type.intern(meters[k].meter_type.name()),
            primary_use.intern(&metas[k].primary_use),
        ];
        for (col, code) in cat_index.iter_mut().zip(codes) {
            col.extend(std::iter::repeat_n(code, n));
        }
        for (dst, src) in numeric.iter_mut().zip(rows.numeric) {
            dst.extend(src);
        }
        row_meter.extend(std::iter::repeat_n(k as u32, n));
        timestamps.extend(rows.timestamps);
        target.extend(rows.target);
    }

    let [bi, mi, pi] = cat_index;
    let mut columns = vec![
        Column::Labels {
            labels: building.labels,
            index: bi,
        },
        Column::Labels {
            labels: meter_type.labels,
            index: mi,
        },
        Column::Labels {
            labels: primary_use.labels,
            index: pi,
        },
    ];
    columns.extend(numeric.into_iter().map(Column::Numeric));

    Ok((
        FeatureMatrix {
            schema,
            meter_ids: meters.iter().map(|m| m.meter_id.clone()).collect(),
            row_meter,
            timestamps,
            columns,
        },
        TargetVector(target),
    ))
}

/// Per categorical feature, labels in code order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDictionary {
    pub features: BTreeMap<String, Vec<String>>,
}

impl CategoryDictionary {
    pub fn code(&self, feature: &str, label: &str) -> u32 {
        self.features
            .get(feature)
            .and_then(|labels| labels.iter().position(|l| l == label))
            .map(|p| p as u32)
            .unwrap_or(UNKNOWN_CATEGORY)
    }

    pub fn decode(&self, feature: &str, code: u32) -> Option<&str> {
        self.features
            .get(feature)
            .and_then(|labels| labels.get(code as usize))
            .map(String::as_str)
    }

    pub fn n_categories(&self, feature: &str) -> usize {
        self.features.get(feature).map_or(0, Vec::len)
    }
}

/// Replaces label columns by integer codes. Without a dictionary, codes are
/// assigned by first appearance in row order; with one, unseen labels map to
/// [`UNKNOWN_CATEGORY`].
pub fn encode_categoricals(
    matrix: &FeatureMatrix,
    dictionary: Option<&CategoryDictionary>,
) -> (FeatureMatrix, CategoryDictionary) {
    let mut dict = dictionary.cloned().unwrap_or_default();
    let mut columns = Vec::with_capacity(matrix.width());
    for (spec, col) in matrix.schema.features.iter().zip(&matrix.columns) {
        let Column::Labels { labels, index } = col else {
            columns.push(col.clone());
            continue;
        };
        let mut local = vec![None; labels.len()];
        let known = dict.features.entry(spec.name.clone()).or_default();
        let codes = index
            .iter()
            .map(|&i| {
                *local[i as usize].get_or_insert_with(|| {
                    let label = &labels[i as usize];
                    if label.is_empty() {
                        return UNKNOWN_CATEGORY;
                    }
                    match known.iter().position(|l| l == label) {
                        Some(p) => p as u32,
                        None if dictionary.is_none() => {
                            known.push(label.clone());
                            (known.len() - 1) as u32
                        }
                        None => UNKNOWN_CATEGORY,
                    }
                })
            })
            .collect();
        columns.push(Column::Categorical(codes));
    }
    (
        FeatureMatrix {
            columns,
            ..matrix.clone()
        },
        dict,
    )
}
