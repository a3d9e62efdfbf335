//! Daily calendar signals from hourly meter data.
//!
//! A meter's year becomes a D×24 matrix (days as observations, hours as
//! features). The signal is the projection of each usable day onto the
//! leading eigenvector of the 24×24 hour covariance, oriented so that higher
//! scores go with higher daily energy.

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::ingest::{days_in_year, DateRange, MeterSeries};

pub const HOURS: usize = 24;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum CalendarError {
    #[error("{meter_id}: no usable days in {year}")]
    NoUsableDays { meter_id: String, year: i32 },
    #[error("{meter_id}: need at least 2 usable days for PCA, found {found}")]
    TooFewDays { meter_id: String, found: usize },
    #[error("{meter_id}: all usable days are identical, PCA is undefined")]
    ZeroVariance { meter_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalendarConfig {
    /// A day with fewer valid hours than this is unusable.
    pub min_valid_hours: usize,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        Self { min_valid_hours: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMatrix {
    pub meter_id: String,
    pub year: i32,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<[f64; HOURS]>,
    pub day_mask: Vec<bool>,
}

impl DayMatrix {
    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn usable_days(&self) -> usize {
        self.day_mask.iter().filter(|u| **u).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMethod {
    Pca,
    DailyTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalendarSignal {
    pub meter_id: String,
    pub year: i32,
    pub dates: Vec<NaiveDate>,
    /// `None` on unusable days.
    pub scores: Vec<Option<f64>>,
    /// λ₁ / Σλ of the hour covariance; unset for the daily-totals fallback.
    pub explained_variance_ratio: Option<f64>,
    /// Scores were negated to make them correlate non-negatively with daily energy.
    pub sign_convention_applied: bool,
    pub method: SignalMethod,
}

impl CalendarSignal {
    pub fn score_on(&self, date: NaiveDate) -> Option<f64> {
        let idx = self.dates.iter().position(|d| *d == date)?;
        self.scores[idx]
    }
}

/// Lays `year` out as one 24-hour row per calendar day. Invalid hours inside a
/// usable day take the mean of that day's valid hours.
pub fn resample_daily(series: &MeterSeries, year: i32, cfg: &CalendarConfig) -> Result<DayMatrix, CalendarError> {
    let range = DateRange::year(year);
    let mut dates = Vec::with_capacity(days_in_year(year));
    let mut values = Vec::with_capacity(days_in_year(year));
    let mut day_mask = Vec::with_capacity(days_in_year(year));
    for date in range.days() {
        let mut row = [f64::NAN; HOURS];
        let mut sum = 0.0;
        let mut n_valid = 0;
        for (h, cell) in row.iter_mut().enumerate() {
            let ts = date.and_time(NaiveTime::from_hms_opt(h as u32, 0, 0).expect("hour"));
            if let Some(i) = series.index_of(ts) {
                if series.valid[i] {
                    *cell = series.readings[i];
                    sum += series.readings[i];
                    n_valid += 1;
                }
            }
        }
        let usable = n_valid > 0 && n_valid >= cfg.min_valid_hours;
        if usable {
            let fill = sum / n_valid as f64;
            for cell in row.iter_mut().filter(|c| c.is_nan()) {
                *cell = fill;
            }
        }
        dates.push(date);
        values.push(row);
        day_mask.push(usable);
    }
    if !day_mask.iter().any(|u| *u) {
        return Err(CalendarError::NoUsableDays {
            meter_id: series.meter_id.clone(),
            year,
        });
    }
    Ok(DayMatrix {
        meter_id: series.meter_id.clone(),
        year,
        dates,
        values,
        day_mask,
    })
}

pub fn pca_first_component(m: &DayMatrix) -> Result<CalendarSignal, CalendarError> {
    let usable: Vec<usize> = (0..m.n_days()).filter(|&d| m.day_mask[d]).collect();
    if usable.len() < 2 {
        return Err(CalendarError::TooFewDays {
            meter_id: m.meter_id.clone(),
            found: usable.len(),
        });
    }
    let n = usable.len() as f64;
    let mut mean = [0.0; HOURS];
    for &d in &usable {
        for (acc, v) in mean.iter_mut().zip(&m.values[d]) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);

    let centered: Vec<[f64; HOURS]> = usable
        .iter()
        .map(|&d| {
            let mut row = m.values[d];
            row.iter_mut().zip(&mean).for_each(|(v, mu)| *v -= mu);
            row
        })
        .collect();
    let mut cov = vec![0.0; HOURS * HOURS];
    for row in &centered {
        for i in 0..HOURS {
            for j in i..HOURS {
                cov[i * HOURS + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..HOURS {
        for j in i..HOURS {
            cov[i * HOURS + j] /= n;
            cov[j * HOURS + i] = cov[i * HOURS + j];
        }
    }
    let trace: f64 = (0..HOURS).map(|i| cov[i * HOURS + i]).sum();
    let scale = mean.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if trace <= (scale * 1e-12).powi(2) * HOURS as f64 {
        return Err(CalendarError::ZeroVariance {
            meter_id: m.meter_id.clone(),
        });
    }

    let (eigenvalues, eigenvectors) = symmetric_eigen(&cov, HOURS);
    let top = (0..HOURS)
        .max_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]).then(b.cmp(&a)))
        .expect("non-empty spectrum");
    let axis: Vec<f64> = (0..HOURS).map(|i| eigenvectors[i * HOURS + top]).collect();

    let mut projected: Vec<f64> = centered
        .iter()
        .map(|row| row.iter().zip(&axis).map(|(a, b)| a * b).sum())
        .collect();
    let daily_mean: Vec<f64> = usable
        .iter()
        .map(|&d| m.values[d].iter().sum::<f64>() / HOURS as f64)
        .collect();
    let flipped = covariance(&projected, &daily_mean) < 0.0;
    if flipped {
        projected.iter_mut().for_each(|s| *s = -*s);
    }

    let mut scores = vec![None; m.n_days()];
    for (&d, s) in usable.iter().zip(projected) {
        scores[d] = Some(s);
    }
    let ratio = (eigenvalues[top].max(0.0) / trace).clamp(0.0, 1.0);
    Ok(CalendarSignal {
        meter_id: m.meter_id.clone(),
        year: m.year,
        dates: m.dates.clone(),
        scores,
        explained_variance_ratio: Some(ratio),
        sign_convention_applied: flipped,
        method: SignalMethod::Pca,
    })
}

/// Sum of valid readings per usable day.
pub fn daily_totals(series: &MeterSeries, year: i32, cfg: &CalendarConfig) -> Result<CalendarSignal, CalendarError> {
    let mut dates = Vec::new();
    let mut scores = Vec::new();
    for date in DateRange::year(year).days() {
        let (sum, n_valid) = (0..HOURS)
            .filter_map(|h| {
                let ts = date.and_time(NaiveTime::from_hms_opt(h as u32, 0, 0).expect("hour"));
                series.index_of(ts).filter(|&i| series.valid[i]).map(|i| series.readings[i])
            })
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        dates.push(date);
        scores.push((n_valid > 0 && n_valid >= cfg.min_valid_hours).then_some(sum));
    }
    if scores.iter().all(Option::is_none) {
        return Err(CalendarError::NoUsableDays {
            meter_id: series.meter_id.clone(),
            year,
        });
    }
    Ok(CalendarSignal {
        meter_id: series.meter_id.clone(),
        year,
        dates,
        scores,
        explained_variance_ratio: None,
        sign_convention_applied: false,
        method: SignalMethod::DailyTotals,
    })
}

/// PCA signal, falling back to daily totals when the matrix is degenerate.
pub fn extract_calendar(series: &MeterSeries, year: i32, cfg: &CalendarConfig) -> Result<CalendarSignal, CalendarError> {
    let matrix = resample_daily(series, year, cfg)?;
    match pca_first_component(&matrix) {
        Ok(signal) => Ok(signal),
        Err(CalendarError::ZeroVariance { .. } | CalendarError::TooFewDays { .. }) => {
            log::info!("{}: degenerate day matrix, using daily totals", series.meter_id);
            daily_totals(series, year, cfg)
        }
        Err(e) => Err(e),
    }
}

/// Writes `meter_id, date, score` rows (empty score on unusable days).
pub fn write_calendar_signals<W: std::io::Write>(signals: &[CalendarSignal], output: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(["meter_id", "date", "score"])?;
    for s in signals {
        for (d, score) in s.dates.iter().zip(&s.scores) {
            writer.write_record([
                s.meter_id.as_str(),
                d.format(crate::ingest::DATE_FORMAT).to_string().as_str(),
                score.map(|v| v.to_string()).unwrap_or_default().as_str(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum()
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n×n` row-major matrix.
/// Returns eigenvalues and the eigenvectors as columns of a row-major matrix.
pub(crate) fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        if off <= frob * 1e-32 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}
