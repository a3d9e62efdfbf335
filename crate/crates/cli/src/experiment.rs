//! In-memory experiment stages. The CLI wraps these with caching and
//! manifests; tests call them directly.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use occutrend_core::calendar::{extract_calendar, CalendarSignal};
use occutrend_core::evaluation::{build_report, BenchmarkTable, EvalError, EvalReport, PredictionRecord};
use occutrend_core::features::{build_feature_matrix, encode_categoricals, FeatureInputs, FeatureMatrix, TargetVector};
use occutrend_core::gbdt::{self, GbdtParams, ModelBundle};
use occutrend_core::ingest::{
    clean_meter_series, impute_weather, load_building_metadata, load_daytype_calendar, load_meter_readings,
    load_weather, BuildingTable, CleaningReport, DateRange, DayTypeCalendar, MeterLoadOptions, MeterSeries,
    WeatherSeries,
};
use occutrend_core::screening::{screen_meter, screening_census, Census, CorrelationCategory, ScreeningRecord};
use occutrend_core::trends::{
    default_catalog, load_site_geo, load_topic_catalog, load_trend_csv, standardize_by_year, TrendSeries, TrendTopic,
};
use occutrend_core::Mode;
use serde::{Deserialize, Serialize};

use crate::config::{GroupBy, PipelineConfig};
use crate::error::CliError;

/// Cleaned, imputed and standardized inputs covering both years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub range: DateRange,
    pub meters: Vec<MeterSeries>,
    pub cleaning: Vec<CleaningReport>,
    pub buildings: BuildingTable,
    pub weather: Vec<WeatherSeries>,
    pub day_types: DayTypeCalendar,
    pub trends: Vec<TrendSeries>,
    pub topics: Vec<TrendTopic>,
    pub site_geo: BTreeMap<String, String>,
}

impl Dataset {
    pub fn site_of(&self, meter: &MeterSeries) -> Option<String> {
        meter
            .site_id
            .clone()
            .or_else(|| self.buildings.get(&meter.building_id).map(|b| b.site_id.clone()))
    }
}

pub fn study_range(cfg: &PipelineConfig) -> DateRange {
    let e = &cfg.experiment;
    DateRange::year(e.training_year).union(&DateRange::year(e.validation_year))
}

fn covers_year(meters: &[MeterSeries], year: i32) -> bool {
    let first = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
    let last = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year");
    let seen = |day: NaiveDate| {
        meters
            .iter()
            .any(|m| m.valid_hours().any(|(ts, _)| ts.date() == day))
    };
    seen(first) && seen(last)
}

/// Loads every input, cleans meters, imputes weather and standardizes trends.
pub fn ingest(cfg: &PipelineConfig) -> Result<Dataset, CliError> {
    let range = study_range(cfg);
    let allow_partial = cfg.experiment.allow_partial_year;
    let buildings = load_building_metadata(&cfg.data.metadata)?;
    let load = load_meter_readings(
        &cfg.data.meters,
        MeterLoadOptions {
            date_range: Some(range),
            buildings: Some(&buildings),
        },
    )?;
    if load.series.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no readings inside {}..={}",
            cfg.data.meters.display(),
            range.start,
            range.end
        )));
    }
    if !allow_partial {
        for year in [cfg.experiment.training_year, cfg.experiment.validation_year] {
            if !covers_year(&load.series, year) {
                return Err(CliError::Data(format!(
                    "meter readings do not cover all of {year} (set experiment.allow_partial_year to accept partial years)"
                )));
            }
        }
    }
    let (meters, cleaning): (Vec<MeterSeries>, Vec<CleaningReport>) = load
        .series
        .iter()
        .map(|s| clean_meter_series(s, &cfg.cleaning))
        .unzip();

    let weather = load_weather(&cfg.data.weather, Some(range))?
        .series
        .iter()
        .map(|w| impute_weather(w, &cfg.imputation))
        .collect::<Result<Vec<_>, _>>()?;
    let day_types = load_daytype_calendar(&cfg.data.day_types, &range)?;
    let topics = match &cfg.data.topics {
        Some(path) => load_topic_catalog(path)?,
        None => default_catalog(),
    };
    let site_geo = load_site_geo(&cfg.data.site_geo)?;

    let mut trends = Vec::new();
    for series in load_trend_csv(&cfg.data.trends)? {
        if !topics.iter().any(|t| t.topic_id == series.topic_id) {
            log::warn!("trend series `{}` is not in the topic catalog, ignored", series.topic_id);
            continue;
        }
        let in_range = clip_series(&series, &range);
        trends.push(standardize_by_year(&in_range, allow_partial)?);
    }
    if trends.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no series for catalog topics",
            cfg.data.trends.display()
        )));
    }
    Ok(Dataset {
        range,
        meters,
        cleaning,
        buildings,
        weather,
        day_types,
        trends,
        topics,
        site_geo,
    })
}

/// Days of `series` inside `range`.
fn clip_series(series: &TrendSeries, range: &DateRange) -> TrendSeries {
    let keep: Vec<usize> = (0..series.len()).filter(|&i| range.contains(series.date(i))).collect();
    let Some(&first) = keep.first() else {
        return TrendSeries {
            raw: Vec::new(),
            interpolated: Vec::new(),
            ..series.clone()
        };
    };
    TrendSeries {
        start: series.date(first),
        raw: keep.iter().map(|&i| series.raw[i]).collect(),
        interpolated: keep.iter().map(|&i| series.interpolated[i]).collect(),
        standardized: None,
        degenerate_years: Vec::new(),
        ..series.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screening {
    pub signals: Vec<CalendarSignal>,
    pub records: Vec<ScreeningRecord>,
    pub census: Census,
}

impl Screening {
    pub fn record(&self, meter_id: &str) -> Option<&ScreeningRecord> {
        self.records
            .binary_search_by(|r| r.meter_id.as_str().cmp(meter_id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn category_of(&self, meter_id: &str) -> CorrelationCategory {
        self.record(meter_id)
            .map(ScreeningRecord::category)
            .unwrap_or(CorrelationCategory::Poor)
    }
}

/// Calendar signal and best-fit topic of every meter in the training year.
pub fn screen(data: &Dataset, cfg: &PipelineConfig) -> Screening {
    let year = cfg.experiment.training_year;
    let mut signals = Vec::new();
    let mut records = Vec::new();
    for meter in &data.meters {
        let primary_use = data
            .buildings
            .get(&meter.building_id)
            .map(|b| b.primary_use.clone())
            .unwrap_or_default();
        let mut record = ScreeningRecord {
            meter_id: meter.meter_id.clone(),
            meter_type: meter.meter_type,
            primary_use,
            result: None,
            unscreenable_reason: None,
        };
        let geo = data.site_of(meter).and_then(|s| data.site_geo.get(&s).cloned());
        match (geo, extract_calendar(meter, year, &cfg.calendar)) {
            (None, _) => record.unscreenable_reason = Some("site has no geo mapping".into()),
            (_, Err(e)) => record.unscreenable_reason = Some(e.to_string()),
            (Some(geo), Ok(signal)) => {
                let candidates: Vec<TrendSeries> = data.trends.iter().filter(|t| t.geo == geo).cloned().collect();
                match screen_meter(&signal, &candidates, year, &cfg.screening) {
                    Ok(result) => record.result = Some(result),
                    Err(e) => record.unscreenable_reason = Some(e.to_string()),
                }
                signals.push(signal);
            }
        }
        if let Some(reason) = &record.unscreenable_reason {
            log::info!("{}: unscreenable ({reason})", meter.meter_id);
        }
        records.push(record);
    }
    records.sort_by(|a, b| a.meter_id.cmp(&b.meter_id));
    let census = screening_census(&records, &cfg.screening);
    Screening {
        signals,
        records,
        census,
    }
}

/// Feature matrix and log1p targets for one year.
pub fn build_split(
    data: &Dataset,
    screening: &Screening,
    mode: Mode,
    year: i32,
) -> Result<(FeatureMatrix, TargetVector), CliError> {
    let inputs = FeatureInputs {
        meters: &data.meters,
        buildings: &data.buildings,
        weather: &data.weather,
        trends: &data.trends,
        screening: &screening.records,
        range: Some(DateRange::year(year)),
    };
    let (x, y) = build_feature_matrix(&inputs, mode)?;
    if x.n_rows() == 0 {
        return Err(CliError::Data(format!("no valid meter readings in {year}")));
    }
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    /// `all`, or a correlation category name.
    pub group: String,
    pub bundle: ModelBundle,
}

fn row_groups(x: &FeatureMatrix, screening: &Screening, group_by: GroupBy) -> Vec<String> {
    let names: Vec<String> = x
        .meter_ids
        .iter()
        .map(|m| match group_by {
            GroupBy::None => "all".to_string(),
            GroupBy::Category => screening.category_of(m).name().to_string(),
        })
        .collect();
    x.row_meter.iter().map(|&m| names[m as usize].clone()).collect()
}

/// Encodes categoricals and trains one bundle per group.
pub fn fit(
    x: &FeatureMatrix,
    y: &TargetVector,
    screening: &Screening,
    params: &GbdtParams,
    group_by: GroupBy,
) -> Result<Vec<TrainedModel>, CliError> {
    let (encoded, dict) = encode_categoricals(x, None);
    let groups = row_groups(x, screening, group_by);
    let mut names: Vec<&String> = groups.iter().collect();
    names.sort();
    names.dedup();
    let mut models = Vec::new();
    for name in names {
        let (sub, rows) = encoded.filter_rows(|r| &groups[r] == name);
        let bundle = gbdt::train(&sub, &y.select(&rows), params)?.with_dictionary(dict.clone());
        log::info!("trained group `{name}` on {} rows", rows.len());
        models.push(TrainedModel {
            group: name.clone(),
            bundle,
        });
    }
    Ok(models)
}

/// Predicted readings (kWh) for every row of `x`.
pub fn predict_rows(
    models: &[TrainedModel],
    x: &FeatureMatrix,
    screening: &Screening,
    group_by: GroupBy,
) -> Result<Vec<f64>, CliError> {
    let groups = row_groups(x, screening, group_by);
    let mut out = vec![f64::NAN; x.n_rows()];
    for model in models {
        let (encoded, _) = encode_categoricals(x, Some(&model.bundle.dictionary));
        let (sub, rows) = encoded.filter_rows(|r| groups[r] == model.group);
        if rows.is_empty() {
            continue;
        }
        for (row, p) in rows.iter().zip(gbdt::predict(&model.bundle, &sub)?) {
            out[*row] = p;
        }
    }
    if let Some(row) = out.iter().position(|p| p.is_nan()) {
        return Err(CliError::Data(format!(
            "no model for group `{}` of meter {}",
            groups[row],
            x.meter_of(row)
        )));
    }
    Ok(out)
}

/// Joins predictions with actual readings, day types and screening labels.
pub fn prediction_records(
    data: &Dataset,
    screening: &Screening,
    x: &FeatureMatrix,
    predicted: &[f64],
) -> Result<Vec<PredictionRecord>, CliError> {
    let meters: HashMap<&str, &MeterSeries> = data.meters.iter().map(|m| (m.meter_id.as_str(), m)).collect();
    let mut out = Vec::with_capacity(x.n_rows());
    for (row, &p) in predicted.iter().enumerate() {
        let meter_id = x.meter_of(row);
        let meter = meters[meter_id];
        let ts = x.timestamps[row];
        let idx = meter.index_of(ts).expect("feature rows come from the meter's hours");
        let site_id = data.site_of(meter).unwrap_or_default();
        let day_type = data.day_types.get(&site_id, ts.date()).ok_or(EvalError::UnlabeledDate {
            site_id: site_id.clone(),
            date: ts.date(),
        })?;
        let record = screening.record(meter_id);
        let result = record.and_then(|r| r.result.as_ref());
        out.push(PredictionRecord {
            meter_id: meter_id.to_string(),
            timestamp: ts,
            actual: meter.readings[idx],
            predicted: p,
            day_type,
            category: screening.category_of(meter_id),
            meter_type: meter.meter_type,
            country: data.site_geo.get(&site_id).cloned(),
            topic_id: result.map(|r| r.best_topic_id.clone()),
            site_id,
        });
    }
    Ok(out)
}

/// Trains on the training year and predicts the validation year.
pub fn run_mode(
    data: &Dataset,
    screening: &Screening,
    cfg: &PipelineConfig,
    mode: Mode,
) -> Result<(Vec<TrainedModel>, Vec<PredictionRecord>), CliError> {
    let e = &cfg.experiment;
    let (x, y) = build_split(data, screening, mode, e.training_year)?;
    let models = fit(&x, &y, screening, &cfg.gbdt, e.group_by)?;
    let records = validate(data, screening, cfg, mode, &models)?;
    Ok((models, records))
}

/// Predicts the validation year with trained models.
pub fn validate(
    data: &Dataset,
    screening: &Screening,
    cfg: &PipelineConfig,
    mode: Mode,
    models: &[TrainedModel],
) -> Result<Vec<PredictionRecord>, CliError> {
    let (x, _) = build_split(data, screening, mode, cfg.experiment.validation_year)?;
    let predicted = predict_rows(models, &x, screening, cfg.experiment.group_by)?;
    prediction_records(data, screening, &x, &predicted)
}

pub fn report(
    screening: &Screening,
    cfg: &PipelineConfig,
    baseline: &[PredictionRecord],
    proposed: &[PredictionRecord],
    benchmark: &BenchmarkTable,
) -> Result<EvalReport, CliError> {
    Ok(build_report(
        baseline,
        proposed,
        DateRange::year(cfg.experiment.validation_year),
        Some(screening.census.clone()),
        benchmark,
        &cfg.evaluation,
    )?)
}

/// Tree count in the generated synthetic config; enough for the planted
/// effect to show and quick on one core.
pub const SYNTH_N_TREES: usize = 200;

/// Writes the synthetic corpus and a `config.toml` pointing at it into `dir`.
/// Returns the config path.
pub fn write_synthetic_project(
    dir: &std::path::Path,
    cfg: &occutrend_core::synth::SynthConfig,
) -> Result<std::path::PathBuf, CliError> {
    let files = occutrend_core::synth::generate(cfg).write(dir)?;
    let name = |p: &std::path::Path| p.file_name().expect("file").to_string_lossy().into_owned();
    let text = format!(
        "[data]\nmeters = \"{}\"\nmetadata = \"{}\"\nweather = \"{}\"\ntrends = \"{}\"\ntopics = \"{}\"\n\
         day_types = \"{}\"\nsite_geo = \"{}\"\n\n[experiment]\ntraining_year = {}\nvalidation_year = {}\n\
         output_dir = \"run\"\n\n[gbdt]\nn_trees = {SYNTH_N_TREES}\nseed = {}\n",
        name(&files.meters),
        name(&files.metadata),
        name(&files.weather),
        name(&files.trends),
        name(&files.topics),
        name(&files.day_types),
        name(&files.site_geo),
        cfg.first_year,
        cfg.first_year + 1,
        cfg.seed,
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).map_err(CliError::io(&path))?;
    Ok(path)
}
