//! Deterministic synthetic corpus: two US sites, ten meters over two years,
//! and eight search topics of which one follows the same latent occupancy
//! that drives the meters.
//!
//! Occupancy is high on weekdays, low on weekends, lowest on public holidays
//! and reduced on each site's own break days. The planted topic tracks the
//! national average of that occupancy, so it sees holidays fully and site
//! breaks only partly. The decoys carry seasonal, weekend-peaking or pure
//! noise patterns.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{
    write_meter_readings, write_weather, BuildingMeta, BuildingTable, DateRange, DayType, DayTypeCalendar,
    IngestError, MeterSeries, MeterType, WeatherField, WeatherSeries, WeatherVariable,
};
use crate::trends::{default_catalog, write_trend_csv, TrendSeries, TrendTopic};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub first_year: i32,
    pub last_year: i32,
    /// Std of the planted topic's daily noise, in volume points.
    pub topic_noise: f64,
    /// Std of the hourly multiplicative meter noise (log scale).
    pub meter_noise: f64,
    /// Std of the day-to-day multiplicative meter noise (log scale).
    pub daily_noise: f64,
    /// Std of each meter's level change from one year to the next (log scale).
    pub year_shift: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            first_year: 2016,
            last_year: 2017,
            topic_noise: 2.0,
            meter_noise: 0.20,
            daily_noise: 0.05,
            year_shift: 0.15,
        }
    }
}

pub const PLANTED_TOPIC: &str = "education";
pub const GEO: &str = "US";
const DECOYS: [&str; 7] = [
    "shopping_mall",
    "lodging",
    "health_care",
    "warehouse",
    "parking",
    "technology",
    "place_of_worship",
];

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub range: DateRange,
    pub meters: Vec<MeterSeries>,
    pub buildings: BuildingTable,
    pub weather: Vec<WeatherSeries>,
    pub calendar: DayTypeCalendar,
    pub trends: Vec<TrendSeries>,
    pub topics: Vec<TrendTopic>,
    pub site_geo: BTreeMap<String, String>,
}

/// Paths written by [`SynthCorpus::write`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFiles {
    pub meters: PathBuf,
    pub metadata: PathBuf,
    pub weather: PathBuf,
    pub day_types: PathBuf,
    pub trends: PathBuf,
    pub topics: PathBuf,
    pub site_geo: PathBuf,
}

/// US federal holidays observed by the synthetic sites.
pub fn us_holidays(year: i32) -> Vec<NaiveDate> {
    let nth = |month, weekday, n| NaiveDate::from_weekday_of_month_opt(year, month, weekday, n).expect("valid");
    let last_monday_may = {
        let mut d = NaiveDate::from_ymd_opt(year, 5, 31).expect("valid");
        while d.weekday() != Weekday::Mon {
            d = d.pred_opt().expect("valid");
        }
        d
    };
    let observed = |d: NaiveDate| match d.weekday() {
        Weekday::Sat => d - Duration::days(1),
        Weekday::Sun => d + Duration::days(1),
        _ => d,
    };
    let ymd = |m, d| NaiveDate::from_ymd_opt(year, m, d).expect("valid");
    let thanksgiving = nth(11, Weekday::Thu, 4);
    let mut days = vec![
        observed(ymd(1, 1)),
        nth(1, Weekday::Mon, 3),
        nth(2, Weekday::Mon, 3),
        last_monday_may,
        observed(ymd(7, 4)),
        nth(9, Weekday::Mon, 1),
        thanksgiving,
        thanksgiving + Duration::days(1),
        observed(ymd(12, 25)),
    ];
    days.retain(|d| d.year() == year);
    days.sort();
    days
}

/// Weekdays of a site's breaks: a spring week and an autumn week, one week
/// later at the second site.
fn site_break(site: usize, date: NaiveDate) -> bool {
    if matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
        return false;
    }
    let week = date.iso_week().week();
    week == 11 + site as u32 || week == 43 + site as u32
}

fn occupancy(date: NaiveDate, holiday: bool, on_break: bool) -> f64 {
    let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
    if holiday {
        0.4
    } else if weekend {
        0.35
    } else if on_break {
        0.6
    } else {
        1.0
    }
}

/// Share of the working day profile active at `hour`.
fn work_profile(hour: u32) -> f64 {
    match hour {
        0..=5 | 22..=23 => 0.0,
        6 => 0.3,
        7 => 0.7,
        8..=17 => 1.0,
        18 => 0.7,
        19 => 0.4,
        _ => 0.2,
    }
}

struct MeterSpec {
    building: &'static str,
    site: usize,
    meter_type: MeterType,
    primary_use: &'static str,
    square_feet: f64,
    year_built: Option<i32>,
    base: f64,
    /// Fraction of the peak load that is always on.
    floor: f64,
    /// Weight of the occupancy-driven part (0 for a residential-like meter).
    occupied: f64,
}

const METERS: [MeterSpec; 10] = [
    MeterSpec { building: "b01", site: 0, meter_type: MeterType::Electricity, primary_use: "Education", square_feet: 120_000.0, year_built: Some(1968), base: 420.0, floor: 0.30, occupied: 1.0 },
    MeterSpec { building: "b01", site: 0, meter_type: MeterType::ChilledWater, primary_use: "Education", square_feet: 120_000.0, year_built: Some(1968), base: 900.0, floor: 0.25, occupied: 0.8 },
    MeterSpec { building: "b02", site: 0, meter_type: MeterType::Electricity, primary_use: "Education", square_feet: 64_000.0, year_built: Some(1990), base: 210.0, floor: 0.35, occupied: 1.0 },
    MeterSpec { building: "b03", site: 0, meter_type: MeterType::Electricity, primary_use: "Office", square_feet: 45_000.0, year_built: None, base: 150.0, floor: 0.40, occupied: 0.9 },
    MeterSpec { building: "b04", site: 0, meter_type: MeterType::Electricity, primary_use: "Lodging/residential", square_feet: 80_000.0, year_built: Some(2001), base: 180.0, floor: 0.70, occupied: 0.0 },
    MeterSpec { building: "b05", site: 1, meter_type: MeterType::Electricity, primary_use: "Education", square_feet: 150_000.0, year_built: Some(1975), base: 520.0, floor: 0.30, occupied: 1.0 },
    MeterSpec { building: "b05", site: 1, meter_type: MeterType::ChilledWater, primary_use: "Education", square_feet: 150_000.0, year_built: Some(1975), base: 1100.0, floor: 0.25, occupied: 0.8 },
    MeterSpec { building: "b06", site: 1, meter_type: MeterType::Electricity, primary_use: "Education", square_feet: 38_000.0, year_built: Some(2010), base: 130.0, floor: 0.35, occupied: 1.0 },
    MeterSpec { building: "b07", site: 1, meter_type: MeterType::Electricity, primary_use: "Office", square_feet: 52_000.0, year_built: Some(1983), base: 170.0, floor: 0.40, occupied: 0.9 },
    MeterSpec { building: "b08", site: 1, meter_type: MeterType::Electricity, primary_use: "Education", square_feet: 90_000.0, year_built: Some(1959), base: 300.0, floor: 0.30, occupied: 1.0 },
];

const SITES: [&str; 2] = ["s1", "s2"];

struct Weather {
    temp: Vec<f64>,
    dew: Vec<f64>,
    cloud: Vec<f64>,
    precip: Vec<f64>,
    pressure: Vec<f64>,
    wind_speed: Vec<f64>,
    wind_dir: Vec<f64>,
}

fn gen_weather(rng: &mut ChaCha8Rng, range: &DateRange, site: usize) -> Weather {
    let n = range.n_hours();
    let start = range.first_hour();
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let mut w = Weather {
        temp: Vec::with_capacity(n),
        dew: Vec::with_capacity(n),
        cloud: Vec::with_capacity(n),
        precip: Vec::with_capacity(n),
        pressure: Vec::with_capacity(n),
        wind_speed: Vec::with_capacity(n),
        wind_dir: Vec::with_capacity(n),
    };
    let (mut ar, mut cloud, mut press) = (0.0f64, 4.0f64, 0.0f64);
    for i in 0..n {
        let ts = start + Duration::hours(i as i64);
        let doy = ts.ordinal() as f64;
        let hour = ts.hour() as f64;
        ar = 0.97 * ar + 0.5 * unit.sample(rng);
        let t = 13.0 + 2.0 * site as f64 + 11.0 * (2.0 * PI * (doy - 110.0) / 365.25).sin()
            + 5.0 * (2.0 * PI * (hour - 9.0) / 24.0).sin()
            + ar;
        cloud = (cloud + 0.4 * unit.sample(rng)).clamp(0.0, 9.0);
        press = 0.99 * press + 0.3 * unit.sample(rng);
        let rain = cloud > 6.5 && rng.random::<f64>() < 0.3;
        w.temp.push(round1(t));
        w.dew.push(round1(t - 3.0 - 3.0 * unit.sample(rng).abs()));
        w.cloud.push(cloud.round());
        w.precip.push(if rain { (rng.random::<f64>() * 8.0).round() } else { 0.0 });
        w.pressure.push(round1(1015.0 + 4.0 * press));
        w.wind_speed.push(round1((2.0 * unit.sample(rng)).abs() + 1.0));
        w.wind_dir.push((rng.random::<f64>() * 36.0).floor() * 10.0);
    }
    w
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn weather_series(site_id: &str, range: &DateRange, w: &Weather, gaps: &[(usize, usize)]) -> WeatherSeries {
    let n = range.n_hours();
    let mut fields: Vec<WeatherField> = WeatherVariable::ALL
        .iter()
        .map(|v| {
            let values = match v {
                WeatherVariable::AirTemperature => &w.temp,
                WeatherVariable::CloudCoverage => &w.cloud,
                WeatherVariable::DewTemperature => &w.dew,
                WeatherVariable::PrecipDepth => &w.precip,
                WeatherVariable::SeaLevelPressure => &w.pressure,
                WeatherVariable::WindSpeed => &w.wind_speed,
                WeatherVariable::WindDirection => &w.wind_dir,
            };
            WeatherField {
                values: values.clone(),
                present: vec![true; n],
                imputed: vec![false; n],
            }
        })
        .collect();
    for &(start, len) in gaps {
        for f in &mut fields {
            for i in start..(start + len).min(n) {
                f.present[i] = false;
            }
        }
    }
    WeatherSeries {
        site_id: site_id.to_string(),
        start: range.first_hour(),
        fields,
    }
}

fn topic(id: &str) -> TrendTopic {
    default_catalog()
        .into_iter()
        .find(|t| t.topic_id == id)
        .expect("synthetic topics come from the shipped catalog")
}

fn volume(v: f64) -> u8 {
    v.round().clamp(0.0, 100.0) as u8
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let range = DateRange::new(
        NaiveDate::from_ymd_opt(cfg.first_year, 1, 1).expect("valid year"),
        NaiveDate::from_ymd_opt(cfg.last_year, 12, 31).expect("valid year"),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let days: Vec<NaiveDate> = range.days().collect();
    let holidays: Vec<NaiveDate> = (cfg.first_year..=cfg.last_year).flat_map(us_holidays).collect();
    let is_holiday = |d: &NaiveDate| holidays.binary_search(d).is_ok();

    let mut calendar = DayTypeCalendar::default();
    let mut site_occ = vec![Vec::with_capacity(days.len()); SITES.len()];
    for (s, site) in SITES.iter().enumerate() {
        for d in &days {
            let holiday = is_holiday(d);
            let on_break = !holiday && site_break(s, *d);
            let day_type = if holiday {
                DayType::PublicHoliday
            } else if on_break {
                DayType::SiteSpecific
            } else {
                DayType::Regular
            };
            calendar.insert(site, *d, day_type);
            site_occ[s].push(occupancy(*d, holiday, on_break));
        }
    }

    // national search interest follows average occupancy
    let national: Vec<f64> = (0..days.len())
        .map(|i| site_occ.iter().map(|o| o[i]).sum::<f64>() / SITES.len() as f64)
        .collect();
    let topic_noise = Normal::new(0.0, cfg.topic_noise).expect("valid std");
    let mut trends = Vec::new();
    let planted: Vec<u8> = national
        .iter()
        .map(|o| volume(15.0 + 70.0 * o + topic_noise.sample(&mut rng)))
        .collect();
    trends.push((PLANTED_TOPIC, planted));
    let mut ar = 0.0f64;
    for (k, id) in DECOYS.iter().enumerate() {
        let series: Vec<u8> = days
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let noise = unit.sample(&mut rng);
                let weekend = matches!(d.weekday(), Weekday::Sat | Weekday::Sun);
                let season = (2.0 * PI * d.ordinal() as f64 / 365.25).sin();
                let v = match k {
                    0 => 45.0 + if weekend { 12.0 } else { 0.0 } + 10.0 * noise,
                    1 => 50.0 + 25.0 * season + 6.0 * noise,
                    2 => {
                        ar = 0.9 * ar + 4.0 * noise;
                        50.0 + ar
                    }
                    3 => 30.0 + 40.0 * i as f64 / days.len() as f64 + 6.0 * noise,
                    4 => 50.0 + 15.0 * noise,
                    5 => 55.0 + if weekend { -4.0 } else { 0.0 } + 12.0 * noise,
                    _ => 30.0 + if d.weekday() == Weekday::Sun { 35.0 } else { 0.0 } + 5.0 * noise,
                };
                volume(v)
            })
            .collect();
        trends.push((id, series));
    }
    trends.sort_by_key(|(id, _)| *id);
    let trends: Vec<TrendSeries> = trends
        .into_iter()
        .map(|(id, raw)| TrendSeries {
            topic_id: id.to_string(),
            geo: GEO.to_string(),
            start: range.start,
            interpolated: vec![false; raw.len()],
            raw,
            standardized: None,
            degenerate_years: Vec::new(),
        })
        .collect();
    let topics = std::iter::once(PLANTED_TOPIC).chain(DECOYS).map(topic).collect();

    let weather: Vec<Weather> = (0..SITES.len()).map(|s| gen_weather(&mut rng, &range, s)).collect();
    let n_hours = range.n_hours();
    let weather_series = SITES
        .iter()
        .enumerate()
        .map(|(s, id)| {
            let gaps: Vec<(usize, usize)> = (0..6)
                .map(|_| (rng.random_range(0..n_hours - 8), rng.random_range(1..=5)))
                .collect();
            weather_series(id, &range, &weather[s], &gaps)
        })
        .collect();

    let mut buildings = BuildingTable::default();
    let mut meters = Vec::new();
    for (m, spec) in METERS.iter().enumerate() {
        buildings.insert(BuildingMeta {
            building_id: spec.building.to_string(),
            site_id: SITES[spec.site].to_string(),
            primary_use: spec.primary_use.to_string(),
            square_feet: spec.square_feet,
            year_built: spec.year_built,
            floor_count: None,
        });
        let noise = Normal::new(0.0, cfg.meter_noise).expect("valid std");
        let mut readings = Vec::with_capacity(n_hours);
        let mut daily = 0.0;
        let shifts: Vec<f64> = (cfg.first_year..=cfg.last_year)
            .map(|_| cfg.year_shift * unit.sample(&mut rng))
            .collect();
        for i in 0..n_hours {
            let ts = range.first_hour() + Duration::hours(i as i64);
            let day = i / 24;
            let hour = ts.hour();
            if hour == 0 {
                daily = cfg.daily_noise * unit.sample(&mut rng) + shifts[(ts.year() - cfg.first_year) as usize];
            }
            let occ = site_occ[spec.site][day];
            let active = spec.occupied * occ * work_profile(hour);
            let shape = match spec.meter_type {
                MeterType::ChilledWater => {
                    let cooling = ((weather[spec.site].temp[i] - 12.0) / 15.0).clamp(0.05, 1.5);
                    cooling * (spec.floor + (1.0 - spec.floor) * active)
                }
                _ if spec.occupied == 0.0 => {
                    let evening = if (17..=23).contains(&hour) || hour <= 1 { 0.3 } else { 0.0 };
                    spec.floor + evening
                }
                _ => spec.floor + (1.0 - spec.floor) * active,
            };
            let v = spec.base * shape * (daily + noise.sample(&mut rng)).exp();
            readings.push((v * 1000.0).round() / 1000.0);
        }
        let mut valid = vec![true; n_hours];
        if m == 2 {
            // a stuck logger in the training year
            let at = 24 * 200;
            let stuck = readings[at];
            for r in &mut readings[at..at + 60] {
                *r = stuck;
            }
        }
        if m == 7 {
            for v in &mut valid[24 * 400..24 * 400 + 30] {
                *v = false;
            }
        }
        meters.push(MeterSeries {
            meter_id: MeterSeries::meter_id_for(spec.building, spec.meter_type),
            building_id: spec.building.to_string(),
            site_id: Some(SITES[spec.site].to_string()),
            meter_type: spec.meter_type,
            start: range.first_hour(),
            readings,
            valid,
        });
    }
    meters.sort_by(|a, b| a.meter_id.cmp(&b.meter_id));

    SynthCorpus {
        range,
        meters,
        buildings,
        weather: weather_series,
        calendar,
        trends,
        topics,
        site_geo: SITES.iter().map(|s| (s.to_string(), GEO.to_string())).collect(),
    }
}

impl SynthCorpus {
    /// Writes every input in the loaders' CSV schemas.
    pub fn write(&self, dir: &Path) -> Result<SynthFiles, SynthError> {
        std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let files = SynthFiles {
            meters: dir.join("meters.csv"),
            metadata: dir.join("metadata.csv"),
            weather: dir.join("weather.csv"),
            day_types: dir.join("day_types.csv"),
            trends: dir.join("trends.csv"),
            topics: dir.join("topics.csv"),
            site_geo: dir.join("site_geo.csv"),
        };
        write_meter_readings(&self.meters, &files.meters)?;
        write_weather(&self.weather, &files.weather)?;

        let open = |path: &Path| {
            csv::Writer::from_path(path).map_err(|source| SynthError::Csv {
                path: path.to_path_buf(),
                source,
            })
        };
        let csv_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Csv {
                path: path.clone(),
                source,
            }
        };

        let mut w = open(&files.metadata)?;
        let err = csv_err(&files.metadata);
        w.write_record(["building_id", "site_id", "primary_use", "square_feet", "year_built", "floor_count"])
            .map_err(&err)?;
        for b in self.buildings.iter() {
            w.write_record([
                b.building_id.clone(),
                b.site_id.clone(),
                b.primary_use.clone(),
                b.square_feet.to_string(),
                b.year_built.map(|y| y.to_string()).unwrap_or_default(),
                b.floor_count.map(|f| f.to_string()).unwrap_or_default(),
            ])
            .map_err(&err)?;
        }
        w.flush().map_err(|e| err(e.into()))?;

        let mut w = open(&files.day_types)?;
        let err = csv_err(&files.day_types);
        w.write_record(["site_id", "date", "day_type"]).map_err(&err)?;
        for site in self.calendar.sites() {
            for d in self.range.days() {
                let t = self.calendar.get(site, d).expect("calendar is total");
                w.write_record([site, &d.to_string(), t.name()]).map_err(&err)?;
            }
        }
        w.flush().map_err(|e| err(e.into()))?;

        let file = std::fs::File::create(&files.trends).map_err(|source| SynthError::Io {
            path: files.trends.clone(),
            source,
        })?;
        write_trend_csv(&self.trends, file).map_err(csv_err(&files.trends))?;

        let mut w = open(&files.topics)?;
        let err = csv_err(&files.topics);
        w.write_record(["topic_id", "display_name", "category"]).map_err(&err)?;
        for t in &self.topics {
            let category = serde_json::to_value(t.category)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            w.write_record([t.topic_id.as_str(), t.display_name.as_str(), category.as_str()])
                .map_err(&err)?;
        }
        w.flush().map_err(|e| err(e.into()))?;

        let mut w = open(&files.site_geo)?;
        let err = csv_err(&files.site_geo);
        w.write_record(["site_id", "geo"]).map_err(&err)?;
        for (site, geo) in &self.site_geo {
            w.write_record([site, geo]).map_err(&err)?;
        }
        w.flush().map_err(|e| err(e.into()))?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holidays_2017() {
        let h = us_holidays(2017);
        let expect = ["2017-01-02", "2017-01-16", "2017-02-20", "2017-05-29", "2017-07-04", "2017-09-04", "2017-11-23", "2017-11-24", "2017-12-25"];
        let got: Vec<String> = h.iter().map(|d| d.to_string()).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&SynthConfig::default());
        let b = generate(&SynthConfig::default());
        assert_eq!(a.meters, b.meters);
        assert_eq!(a.trends, b.trends);
        assert_eq!(a.weather, b.weather);
        let c = generate(&SynthConfig {
            seed: 8,
            ..SynthConfig::default()
        });
        assert_ne!(a.meters, c.meters);
    }

    #[test]
    fn corpus_shape() {
        let c = generate(&SynthConfig::default());
        assert_eq!(c.meters.len(), 10);
        assert_eq!(c.trends.len(), 8);
        assert_eq!(c.topics.len(), 8);
        assert_eq!(c.weather.len(), 2);
        assert!(c.calendar.ensure_total(&c.range).is_ok());
        let n_types = |t: MeterType| c.meters.iter().filter(|m| m.meter_type == t).count();
        assert_eq!(n_types(MeterType::Electricity), 8);
        assert_eq!(n_types(MeterType::ChilledWater), 2);
        let counts = |t: DayType| c.range.days().filter(|d| c.calendar.get("s1", *d) == Some(t)).count();
        assert_eq!(counts(DayType::PublicHoliday), 18);
        // one spring and one autumn break week per year
        assert_eq!(counts(DayType::SiteSpecific), 20);
    }

    #[test]
    fn written_files_load_back() {
        let c = generate(&SynthConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let files = c.write(dir.path()).unwrap();
        let trends = crate::trends::load_trend_csv(&files.trends).unwrap();
        assert_eq!(trends, c.trends);
        let topics = crate::trends::load_topic_catalog(&files.topics).unwrap();
        assert_eq!(topics, c.topics);
        let cal = crate::ingest::load_daytype_calendar(&files.day_types, &c.range).unwrap();
        assert_eq!(cal, c.calendar);
        let meta = crate::ingest::load_building_metadata(&files.metadata).unwrap();
        assert_eq!(meta, c.buildings);
    }
}
