use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use super::{benchmark_tier, change_rate, format_change_rate, BenchmarkTable, EvalError, PredictionRecord, Tier};
use crate::ingest::{DateRange, DayType, MeterType};
use crate::screening::{write_census_rows, Census, CorrelationCategory};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Groups with fewer meters print "-" instead of change rates.
    pub min_meters: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { min_meters: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScores {
    pub n_records: usize,
    pub baseline_rmsle: f64,
    pub proposed_rmsle: f64,
    /// Percent, from unrounded scores; absent when the baseline is zero.
    pub change_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub keys: BTreeMap<String, String>,
    pub n_meters: usize,
    pub low_support: bool,
    pub total: SegmentScores,
    /// Keyed by day-type name; day types without records are absent.
    pub by_day_type: BTreeMap<String, SegmentScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub category: CorrelationCategory,
    pub n_meters: usize,
    pub baseline_rmsle: f64,
    pub baseline_tier: Tier,
    pub proposed_rmsle: f64,
    pub proposed_tier: Tier,
    pub change_rate: Option<f64>,
    /// Top 5, Gold, Silver, Bronze averages.
    pub benchmark: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRow {
    pub group: String,
    pub iso_year: i32,
    pub iso_week: u32,
    pub week_start: NaiveDate,
    pub n_records: usize,
    pub baseline_rmsle: Option<f64>,
    pub proposed_rmsle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub evaluation_range: DateRange,
    pub n_records: usize,
    pub n_meters: usize,
    pub overall: GroupRow,
    /// Pooled day-type errors per meter type and correlation category.
    pub by_meter_type: Vec<GroupRow>,
    /// High-correlation meters per country and best-fit topic.
    pub by_topic: Vec<GroupRow>,
    pub benchmark: Vec<RunScores>,
    /// One row per ISO week of the evaluation range for every group.
    pub weekly: Vec<WeeklyRow>,
    pub census: Option<Census>,
    pub notes: Vec<String>,
}

#[derive(Default)]
struct Acc {
    base: f64,
    prop: f64,
    n: usize,
    meters: BTreeSet<String>,
    days: BTreeMap<DayType, (f64, f64, usize)>,
}

impl Acc {
    fn add(&mut self, r: &PredictionRecord, base_sq: f64, prop_sq: f64) {
        self.base += base_sq;
        self.prop += prop_sq;
        self.n += 1;
        if !self.meters.contains(&r.meter_id) {
            self.meters.insert(r.meter_id.clone());
        }
        let d = self.days.entry(r.day_type).or_default();
        d.0 += base_sq;
        d.1 += prop_sq;
        d.2 += 1;
    }

    fn scores(base: f64, prop: f64, n: usize) -> SegmentScores {
        let b = (base / n as f64).sqrt();
        let p = (prop / n as f64).sqrt();
        SegmentScores {
            n_records: n,
            baseline_rmsle: b,
            proposed_rmsle: p,
            change_rate: change_rate(b, p).ok(),
        }
    }

    fn row(&self, keys: BTreeMap<String, String>, min_meters: usize) -> GroupRow {
        GroupRow {
            keys,
            n_meters: self.meters.len(),
            low_support: self.meters.len() < min_meters,
            total: Self::scores(self.base, self.prop, self.n),
            by_day_type: self
                .days
                .iter()
                .map(|(t, (b, p, n))| (t.name().to_string(), Self::scores(*b, *p, *n)))
                .collect(),
        }
    }
}

fn keys(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn iso_weeks(range: &DateRange) -> Vec<(i32, u32)> {
    let mut weeks: Vec<(i32, u32)> = Vec::new();
    for d in range.days() {
        let w = d.iso_week();
        if weeks.last() != Some(&(w.year(), w.week())) {
            weeks.push((w.year(), w.week()));
        }
    }
    weeks
}

/// Compares two runs scored on the same rows. Records must be paired by
/// position: same meter, timestamp and actual reading.
pub fn build_report(
    baseline: &[PredictionRecord],
    proposed: &[PredictionRecord],
    range: DateRange,
    census: Option<Census>,
    benchmark: &BenchmarkTable,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if baseline.len() != proposed.len() {
        return Err(EvalError::RowSetMismatch(baseline.len().min(proposed.len())));
    }
    if baseline.is_empty() {
        return Err(EvalError::Empty);
    }
    for (i, (b, p)) in baseline.iter().zip(proposed).enumerate() {
        if b.meter_id != p.meter_id || b.timestamp != p.timestamp || b.actual != p.actual {
            return Err(EvalError::RowSetMismatch(i));
        }
        for v in [b.actual, b.predicted, p.predicted] {
            if !v.is_finite() {
                return Err(EvalError::NonFinite(i));
            }
            if v < 0.0 {
                return Err(EvalError::Negative { index: i, value: v });
            }
        }
    }

    let weeks = iso_weeks(&range);
    let week_index: BTreeMap<(i32, u32), usize> = weeks.iter().enumerate().map(|(i, w)| (*w, i)).collect();

    let mut overall = Acc::default();
    let mut by_type: BTreeMap<(MeterType, CorrelationCategory), Acc> = BTreeMap::new();
    let mut by_topic: BTreeMap<(String, String), Acc> = BTreeMap::new();
    let mut by_category: BTreeMap<CorrelationCategory, Acc> = BTreeMap::new();
    let mut weekly: BTreeMap<String, Vec<(f64, f64, usize)>> = BTreeMap::new();

    for (b, p) in baseline.iter().zip(proposed) {
        let db = b.predicted.ln_1p() - b.actual.ln_1p();
        let dp = p.predicted.ln_1p() - p.actual.ln_1p();
        let (bs, ps) = (db * db, dp * dp);
        overall.add(p, bs, ps);
        by_type.entry((p.meter_type, p.category)).or_default().add(p, bs, ps);
        by_category.entry(p.category).or_default().add(p, bs, ps);
        let mut groups = vec!["all".to_string(), format!("category:{}", p.category)];
        if let Some(topic) = &p.topic_id {
            let country = p.country.clone().unwrap_or_else(|| "unknown".into());
            if p.category == CorrelationCategory::High {
                by_topic
                    .entry((country.clone(), topic.clone()))
                    .or_default()
                    .add(p, bs, ps);
            }
            groups.push(format!("topic:{country}:{topic}"));
        }
        let w = p.timestamp.date().iso_week();
        if let Some(&wi) = week_index.get(&(w.year(), w.week())) {
            for g in groups {
                let series = weekly.entry(g).or_insert_with(|| vec![(0.0, 0.0, 0); weeks.len()]);
                series[wi].0 += bs;
                series[wi].1 += ps;
                series[wi].2 += 1;
            }
        }
    }

    let min = cfg.min_meters;
    let by_meter_type = by_type
        .iter()
        .map(|((t, c), acc)| acc.row(keys(&[("meter_type", t.name()), ("category", c.name())]), min))
        .collect();
    let by_topic_rows = by_topic
        .iter()
        .map(|((country, topic), acc)| acc.row(keys(&[("country", country), ("topic", topic)]), min))
        .collect();
    let mut bench_rows = Vec::new();
    for (c, acc) in &by_category {
        let Some(row) = benchmark.rows.get(c) else { continue };
        let s = Acc::scores(acc.base, acc.prop, acc.n);
        bench_rows.push(RunScores {
            category: *c,
            n_meters: acc.meters.len(),
            baseline_rmsle: s.baseline_rmsle,
            baseline_tier: benchmark_tier(s.baseline_rmsle, *c, benchmark)?,
            proposed_rmsle: s.proposed_rmsle,
            proposed_tier: benchmark_tier(s.proposed_rmsle, *c, benchmark)?,
            change_rate: s.change_rate,
            benchmark: *row,
        });
    }
    let weekly_rows = weekly
        .into_iter()
        .flat_map(|(group, series)| {
            weeks
                .iter()
                .zip(series)
                .map(move |(&(y, w), (b, p, n))| WeeklyRow {
                    group: group.clone(),
                    iso_year: y,
                    iso_week: w,
                    week_start: NaiveDate::from_isoywd_opt(y, w, Weekday::Mon).expect("valid ISO week"),
                    n_records: n,
                    baseline_rmsle: (n > 0).then(|| (b / n as f64).sqrt()),
                    proposed_rmsle: (n > 0).then(|| (p / n as f64).sqrt()),
                })
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        evaluation_range: range,
        n_records: overall.n,
        n_meters: overall.meters.len(),
        overall: overall.row(BTreeMap::new(), min),
        by_meter_type,
        by_topic: by_topic_rows,
        benchmark: bench_rows,
        weekly: weekly_rows,
        census,
        notes: vec![
            "RMSLE uses the natural logarithm: sqrt(mean((ln(p+1) - ln(a+1))^2)).".into(),
            "Day-type scores pool all records of a group; they are not averages of per-meter scores.".into(),
            "Change rates are 100*(proposed-baseline)/baseline on unrounded scores.".into(),
            format!("Groups with fewer than {min} meters print '-' for change rates."),
            "Predictions average the fold ensembles in log space.".into(),
            "Benchmark tier: the best tier whose average RMSLE is at least the score.".into(),
        ],
    })
}

fn change_cell(row: &GroupRow, day_type: Option<DayType>) -> String {
    if row.low_support {
        return "-".into();
    }
    let seg = match day_type {
        Some(t) => row.by_day_type.get(t.name()),
        None => Some(&row.total),
    };
    match seg.and_then(|s| s.change_rate) {
        Some(r) => format_change_rate(r),
        None => String::new(),
    }
}

fn write_error_table<W: std::io::Write>(rows: &[GroupRow], key_columns: [&str; 2], output: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(output);
    let mut header: Vec<&str> = key_columns.to_vec();
    header.extend([
        "baseline_rmsle",
        "proposed_rmsle",
        "regular",
        "public_holiday",
        "site_specific",
        "total",
        "n_meters",
    ]);
    w.write_record(&header)?;
    for row in rows {
        let mut record: Vec<String> = key_columns.iter().map(|k| row.keys[*k].clone()).collect();
        record.push(format!("{:.6}", row.total.baseline_rmsle));
        record.push(format!("{:.6}", row.total.proposed_rmsle));
        for t in DayType::ALL {
            record.push(change_cell(row, Some(t)));
        }
        record.push(change_cell(row, None));
        record.push(row.n_meters.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn write_benchmark<W: std::io::Write>(rows: &[RunScores], output: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record([
        "category",
        "baseline_rmsle",
        "baseline_tier",
        "proposed_rmsle",
        "proposed_tier",
        "change_rate",
        "top5",
        "gold",
        "silver",
        "bronze",
        "n_meters",
    ])?;
    for r in rows {
        w.write_record([
            r.category.to_string(),
            format!("{:.6}", r.baseline_rmsle),
            r.baseline_tier.to_string(),
            format!("{:.6}", r.proposed_rmsle),
            r.proposed_tier.to_string(),
            r.change_rate.map(format_change_rate).unwrap_or_default(),
            format!("{:.3}", r.benchmark[0]),
            format!("{:.3}", r.benchmark[1]),
            format!("{:.3}", r.benchmark[2]),
            format!("{:.3}", r.benchmark[3]),
            r.n_meters.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_weekly<W: std::io::Write>(rows: &[WeeklyRow], output: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record([
        "group",
        "iso_year",
        "iso_week",
        "week_start",
        "n_records",
        "baseline_rmsle",
        "proposed_rmsle",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.group.clone(),
            r.iso_year.to_string(),
            r.iso_week.to_string(),
            r.week_start.to_string(),
            r.n_records.to_string(),
            opt(r.baseline_rmsle),
            opt(r.proposed_rmsle),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` and the CSV tables into `dir`; returns the paths
/// written, in a fixed order.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let create = |name: &str| -> Result<(PathBuf, std::fs::File), EvalError> {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(io(&path))?;
        Ok((path, file))
    };
    let mut written = Vec::new();

    let (path, file) = create("report.json")?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), report)?;
    written.push(path);

    let (path, file) = create("error_by_meter_type.csv")?;
    write_error_table(&report.by_meter_type, ["meter_type", "category"], file)?;
    written.push(path);

    let (path, file) = create("error_by_topic.csv")?;
    write_error_table(&report.by_topic, ["country", "topic"], file)?;
    written.push(path);

    let (path, file) = create("benchmark_comparison.csv")?;
    write_benchmark(&report.benchmark, file)?;
    written.push(path);

    let (path, file) = create("weekly_error.csv")?;
    write_weekly(&report.weekly, file)?;
    written.push(path);

    if let Some(census) = &report.census {
        for (name, rows, first) in [
            ("census_by_meter_type.csv", &census.by_meter_type, "meter_type"),
            ("census_by_primary_use.csv", &census.by_primary_use, "primary_use"),
            ("census_by_topic.csv", &census.by_topic, "topic"),
        ] {
            let (path, file) = create(name)?;
            write_census_rows(rows, first, file)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn records(n_meters: usize, scale: f64) -> Vec<PredictionRecord> {
        let start = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut out = Vec::new();
        for m in 0..n_meters {
            for h in 0..(24 * 20) {
                let ts = start + Duration::hours(h);
                let day_type = match ts.date().day() % 5 {
                    0 => DayType::PublicHoliday,
                    1 => DayType::SiteSpecific,
                    _ => DayType::Regular,
                };
                let actual = 10.0 + (h % 24) as f64;
                out.push(PredictionRecord {
                    meter_id: format!("m{m}"),
                    timestamp: ts,
                    actual,
                    predicted: actual * (1.0 + scale * if day_type == DayType::Regular { 0.1 } else { 0.5 }),
                    day_type,
                    category: if m < 8 { CorrelationCategory::High } else { CorrelationCategory::Poor },
                    meter_type: if m < 8 { MeterType::Electricity } else { MeterType::ChilledWater },
                    site_id: "s".into(),
                    country: Some("US".into()),
                    topic_id: Some("education".into()),
                });
            }
        }
        out
    }

    fn range() -> DateRange {
        DateRange::new(
            NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2017, 1, 20).unwrap(),
        )
    }

    #[test]
    fn one_row_per_meter_type_and_category() {
        let base = records(10, 1.0);
        let prop = records(10, 0.5);
        let report = build_report(&base, &prop, range(), None, &BenchmarkTable::default(), &EvalConfig::default())
            .unwrap();
        assert_eq!(report.by_meter_type.len(), 2);
        let elec = &report.by_meter_type[0];
        assert_eq!(elec.keys["meter_type"], "electricity");
        assert_eq!(elec.n_meters, 8);
        assert!(!elec.low_support);
        assert!(elec.total.change_rate.unwrap() < 0.0);
        let cw = &report.by_meter_type[1];
        assert_eq!(cw.n_meters, 2);
        assert!(cw.low_support);
        assert_eq!(report.by_topic.len(), 1);
        assert_eq!(report.by_topic[0].n_meters, 8);
        assert_eq!(report.n_records, base.len());
    }

    #[test]
    fn weekly_series_covers_every_iso_week() {
        let base = records(3, 1.0);
        let report = build_report(&base, &base, range(), None, &BenchmarkTable::default(), &EvalConfig::default())
            .unwrap();
        // 2017-01-01 is a Sunday in ISO week 52 of 2016
        let all: Vec<&WeeklyRow> = report.weekly.iter().filter(|w| w.group == "all").collect();
        assert_eq!(all.len(), 4);
        assert_eq!((all[0].iso_year, all[0].iso_week), (2016, 52));
        assert_eq!(iso_weeks(&DateRange::year(2017)).len(), 53);
    }

    #[test]
    fn mismatched_rows_are_rejected() {
        let base = records(2, 1.0);
        let mut prop = records(2, 0.5);
        prop.pop();
        assert!(matches!(
            build_report(&base, &prop, range(), None, &BenchmarkTable::default(), &EvalConfig::default()),
            Err(EvalError::RowSetMismatch(_))
        ));
        let mut prop = records(2, 0.5);
        prop[5].timestamp += Duration::hours(1);
        assert!(matches!(
            build_report(&base, &prop, range(), None, &BenchmarkTable::default(), &EvalConfig::default()),
            Err(EvalError::RowSetMismatch(5))
        ));
    }

    #[test]
    fn emitted_tables() {
        let base = records(10, 1.0);
        let prop = records(10, 0.5);
        let report = build_report(&base, &prop, range(), None, &BenchmarkTable::default(), &EvalConfig::default())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        let table = std::fs::read_to_string(dir.path().join("error_by_meter_type.csv")).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("chilledwater,Poor,"));
        assert!(lines[2].contains(",-,-,-,-,2"));
        let back: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, report);
    }
}
