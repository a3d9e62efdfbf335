use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{format_timestamp, IngestError, MeterSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// Hours with |z| above this on log1p(reading) are masked.
    pub z_threshold: f64,
    /// Runs of at least this many identical consecutive valid readings are masked.
    pub min_constant_hours: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            z_threshold: 8.0,
            min_constant_hours: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub meter_id: String,
    pub removed_outlier_count: usize,
    pub removed_constant_run_count: usize,
    pub removed_constant_hours: usize,
    /// Every hour masked by cleaning, in time order.
    pub removed_hours: Vec<NaiveDateTime>,
    pub rules_applied: Vec<String>,
}

/// Masks constant runs, then log1p z-score outliers until no hour exceeds the
/// threshold. Re-cleaning the output removes nothing.
pub fn clean_meter_series(series: &MeterSeries, cfg: &CleaningConfig) -> (MeterSeries, CleaningReport) {
    let mut out = series.clone();
    let mut removed = vec![false; series.len()];

    let mut run_count = 0;
    let mut run_hours = 0;
    let mut i = 0;
    while i < out.len() {
        if !out.valid[i] {
            i += 1;
            continue;
        }
        let value = out.readings[i];
        let mut j = i + 1;
        while j < out.len() && out.valid[j] && out.readings[j] == value {
            j += 1;
        }
        if cfg.min_constant_hours > 0 && j - i >= cfg.min_constant_hours {
            run_count += 1;
            run_hours += j - i;
            for k in i..j {
                out.valid[k] = false;
                removed[k] = true;
            }
        }
        i = j;
    }

    let mut outlier_count = 0;
    loop {
        let logs: Vec<f64> = out
            .readings
            .iter()
            .zip(&out.valid)
            .filter(|(_, v)| **v)
            .map(|(r, _)| r.ln_1p())
            .collect();
        if logs.len() < 2 {
            break;
        }
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let std = (logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std == 0.0 || !std.is_finite() {
            break;
        }
        let mut flagged = 0;
        for k in 0..out.len() {
            if out.valid[k] && ((out.readings[k].ln_1p() - mean) / std).abs() > cfg.z_threshold {
                out.valid[k] = false;
                removed[k] = true;
                flagged += 1;
            }
        }
        if flagged == 0 {
            break;
        }
        outlier_count += flagged;
    }

    let removed_hours = removed
        .iter()
        .enumerate()
        .filter(|(_, r)| **r)
        .map(|(k, _)| series.timestamp(k))
        .collect();
    let report = CleaningReport {
        meter_id: series.meter_id.clone(),
        removed_outlier_count: outlier_count,
        removed_constant_run_count: run_count,
        removed_constant_hours: run_hours,
        removed_hours,
        rules_applied: vec![
            format!("constant_run>={}h", cfg.min_constant_hours),
            format!("abs_z_log1p>{}", cfg.z_threshold),
        ],
    };
    (out, report)
}

/// Writes one summary row per meter to `path` and, when `detail_path` is
/// given, one row per removed hour there.
pub fn write_cleaning_reports(
    reports: &[CleaningReport],
    path: &Path,
    detail_path: Option<&Path>,
) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| IngestError::csv(path, e))?;
    writer
        .write_record([
            "meter_id",
            "removed_outlier_count",
            "removed_constant_run_count",
            "removed_constant_hours",
            "removed_hours_total",
            "rules_applied",
        ])
        .map_err(|e| IngestError::csv(path, e))?;
    for r in reports {
        writer
            .write_record([
                r.meter_id.clone(),
                r.removed_outlier_count.to_string(),
                r.removed_constant_run_count.to_string(),
                r.removed_constant_hours.to_string(),
                r.removed_hours.len().to_string(),
                r.rules_applied.join(";"),
            ])
            .map_err(|e| IngestError::csv(path, e))?;
    }
    writer.flush().map_err(|e| IngestError::io(path, e))?;

    if let Some(detail) = detail_path {
        let mut writer = csv::Writer::from_path(detail).map_err(|e| IngestError::csv(detail, e))?;
        writer
            .write_record(["meter_id", "timestamp"])
            .map_err(|e| IngestError::csv(detail, e))?;
        for r in reports {
            for ts in &r.removed_hours {
                writer
                    .write_record([r.meter_id.as_str(), format_timestamp(*ts).as_str()])
                    .map_err(|e| IngestError::csv(detail, e))?;
            }
        }
        writer.flush().map_err(|e| IngestError::io(detail, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MeterType;
    use proptest::prelude::*;

    fn series(readings: Vec<f64>) -> MeterSeries {
        let valid = readings.iter().map(|r| r.is_finite() && *r >= 0.0).collect();
        MeterSeries {
            meter_id: "b1-electricity".into(),
            building_id: "b1".into(),
            site_id: Some("s0".into()),
            meter_type: MeterType::Electricity,
            start: chrono::NaiveDate::from_ymd_opt(2016, 1, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            readings,
            valid,
        }
    }

    fn reconciles(before: &MeterSeries, after: &MeterSeries, report: &CleaningReport) {
        let newly_masked = before
            .valid
            .iter()
            .zip(&after.valid)
            .filter(|(b, a)| **b && !**a)
            .count();
        assert_eq!(report.removed_hours.len(), newly_masked);
        assert_eq!(
            report.removed_hours.len(),
            report.removed_outlier_count + report.removed_constant_hours
        );
        assert!(after.valid_count() <= before.valid_count());
    }

    #[test]
    fn constant_run_of_72_is_removed_whole() {
        let s = series(vec![7.5; 72]);
        let (out, report) = clean_meter_series(&s, &CleaningConfig::default());
        assert_eq!(out.valid_count(), 0);
        assert_eq!(report.removed_constant_run_count, 1);
        assert_eq!(report.removed_hours.len(), 72);
        reconciles(&s, &out, &report);
    }

    #[test]
    fn distinct_well_behaved_series_is_untouched() {
        let s = series((0..500).map(|i| 10.0 + (i as f64 * 0.37).sin()).collect());
        let (out, report) = clean_meter_series(&s, &CleaningConfig::default());
        assert_eq!(out, s);
        assert!(report.removed_hours.is_empty());
    }

    #[test]
    fn huge_spike_is_masked_as_outlier() {
        let mut readings: Vec<f64> = (0..500).map(|i| 10.0 + (i as f64 * 0.37).sin()).collect();
        readings[250] = 1e6;
        // Independent z computation on log1p values.
        let logs: Vec<f64> = readings.iter().map(|r| (1.0 + r).ln()).collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let z = (logs[250] - mean) / var.sqrt();
        assert!(z > 8.0, "fixture z = {z}");

        let s = series(readings);
        let (out, report) = clean_meter_series(&s, &CleaningConfig::default());
        assert!(!out.valid[250]);
        assert_eq!(report.removed_outlier_count, 1);
        assert_eq!(out.valid_count(), 499);
        reconciles(&s, &out, &report);
    }

    #[test]
    fn masked_hour_breaks_a_constant_run() {
        let mut readings = vec![3.0; 60];
        readings[30] = f64::NAN;
        let s = series(readings);
        let (out, report) = clean_meter_series(&s, &CleaningConfig::default());
        assert_eq!(report.removed_constant_run_count, 0);
        assert_eq!(out.valid_count(), 59);
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent_and_reconciles(
            base in proptest::collection::vec(0.0f64..50.0, 50..400),
            spikes in proptest::collection::vec((0usize..400, 1e3f64..1e9), 0..5),
            flat in proptest::option::of((0usize..300, 40usize..100)),
        ) {
            let mut readings = base;
            let len = readings.len();
            for (i, v) in spikes {
                readings[i % len] = v;
            }
            if let Some((at, n)) = flat {
                for k in at..(at + n).min(len) {
                    readings[k] = 4.0;
                }
            }
            let s = series(readings);
            let cfg = CleaningConfig::default();
            let (once, report) = clean_meter_series(&s, &cfg);
            reconciles(&s, &once, &report);
            let (twice, second) = clean_meter_series(&once, &cfg);
            prop_assert_eq!(&twice, &once);
            prop_assert!(second.removed_hours.is_empty());
        }
    }
}
