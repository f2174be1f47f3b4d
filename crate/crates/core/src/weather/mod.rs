//! Paired measurement/forecast weather series and forecast-error samples.
//!
//! A series holds hourly measured records. Forecasts either come from a
//! separate issuance table (one row per issuance and lead time) or, when no
//! table is loaded, from the `*_forecast` columns of the measurement file,
//! which are then treated as a single forecast trace valid for every lead.
//!
//! Timestamps label the end of their interval: the record at `t` describes
//! the hour `[t - dt, t]`, and the lead-`k` forecast issued at `t` is valid at
//! `t + k dt`.

pub mod solar;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, SecondsFormat};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRUTH_COLUMNS: [&str; 5] = [
    "timestamp_utc",
    "temp_measured_c",
    "temp_forecast_c",
    "cloud_okta_forecast",
    "solar_measured_wm2",
];
/// Optional extra column used to derive measured solar when no pyranometer
/// reading is available.
pub const CLOUD_MEASURED_COLUMN: &str = "cloud_okta_measured";
pub const FORECAST_COLUMNS: [&str; 4] = [
    "issued_at",
    "timestamp_utc",
    "temp_forecast_c",
    "cloud_okta_forecast",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Site {
    pub latitude: f64,
    /// East positive.
    pub longitude: f64,
}

impl Default for Site {
    fn default() -> Self {
        // Brooklyn, NY
        Site {
            latitude: 40.68,
            longitude: -73.94,
        }
    }
}

/// Unit of the cloud columns in an input file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudUnits {
    #[default]
    Okta,
    /// Cover fraction in [0, 1]; multiplied by 8 on ingestion.
    Fraction,
}

impl CloudUnits {
    fn to_okta(self, value: f64) -> f64 {
        match self {
            CloudUnits::Okta => value,
            CloudUnits::Fraction => value * 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub timestamp: i64,
    pub temp_measured: f64,
    pub temp_forecast: Option<f64>,
    pub cloud_okta_forecast: Option<f64>,
    pub solar_measured: Option<f64>,
    pub cloud_okta_measured: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub valid_at: i64,
    pub temp_c: f64,
    pub cloud_okta: f64,
}

/// Measured or forecast weather over one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalWeather {
    pub solar: f64,
    pub temp: f64,
}

#[derive(Debug, Clone)]
pub struct WeatherSeries {
    pub site: Site,
    /// Sampling interval in seconds.
    pub dt: i64,
    pub records: Vec<WeatherRecord>,
    /// Issuance time -> forecast points ordered by valid time.
    pub forecasts: Option<BTreeMap<i64, Vec<ForecastPoint>>>,
    by_time: HashMap<i64, usize>,
}

impl WeatherSeries {
    pub fn new(site: Site, dt: i64, records: Vec<WeatherRecord>) -> Result<Self> {
        if dt <= 0 {
            return Err(Error::Data(format!("sampling interval must be positive, got {dt}")));
        }
        for pair in records.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::Data(format!(
                    "timestamps not strictly increasing at {}",
                    format_timestamp(pair[1].timestamp)
                )));
            }
        }
        for r in &records {
            for okta in [r.cloud_okta_forecast, r.cloud_okta_measured].into_iter().flatten() {
                if !(0.0..=8.0).contains(&okta) {
                    return Err(Error::Data(format!(
                        "cloud cover {okta} outside [0, 8] oktas at {}",
                        format_timestamp(r.timestamp)
                    )));
                }
            }
        }
        let by_time = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.timestamp, i))
            .collect();
        Ok(WeatherSeries {
            site,
            dt,
            records,
            forecasts: None,
            by_time,
        })
    }

    pub fn with_forecasts(mut self, table: BTreeMap<i64, Vec<ForecastPoint>>) -> Result<Self> {
        for (issued, points) in &table {
            for p in points {
                if p.valid_at <= *issued {
                    return Err(Error::Data(format!(
                        "forecast issued at {} is valid at a non-future time",
                        format_timestamp(*issued)
                    )));
                }
                if !(0.0..=8.0).contains(&p.cloud_okta) {
                    return Err(Error::Data(format!("forecast cloud cover {} outside [0, 8]", p.cloud_okta)));
                }
            }
        }
        self.forecasts = Some(table);
        Ok(self)
    }

    pub fn record_at(&self, timestamp: i64) -> Option<&WeatherRecord> {
        self.by_time.get(&timestamp).map(|&i| &self.records[i])
    }

    pub fn start(&self) -> Option<i64> {
        self.records.first().map(|r| r.timestamp)
    }

    pub fn end(&self) -> Option<i64> {
        self.records.last().map(|r| r.timestamp)
    }

    /// Measured weather over the interval ending at `timestamp`.
    pub fn measured(&self, timestamp: i64) -> Option<IntervalWeather> {
        let r = self.record_at(timestamp)?;
        if !r.temp_measured.is_finite() {
            return None;
        }
        let solar = match (r.solar_measured, r.cloud_okta_measured) {
            (Some(s), _) if s.is_finite() => s,
            (_, Some(okta)) => self.solar_from_okta(timestamp, okta)?,
            _ => return None,
        };
        Some(IntervalWeather {
            solar,
            temp: r.temp_measured,
        })
    }

    /// Forecast issued at `issued_at` for lead `lead >= 1`.
    pub fn forecast(&self, issued_at: i64, lead: usize) -> Option<IntervalWeather> {
        let valid_at = issued_at + lead as i64 * self.dt;
        let (temp, okta) = match &self.forecasts {
            Some(table) => {
                let points = table.get(&issued_at)?;
                let p = points.iter().find(|p| p.valid_at == valid_at)?;
                (p.temp_c, p.cloud_okta)
            }
            None => {
                let r = self.record_at(valid_at)?;
                (r.temp_forecast?, r.cloud_okta_forecast?)
            }
        };
        if !temp.is_finite() {
            return None;
        }
        Some(IntervalWeather {
            solar: self.solar_from_okta(valid_at, okta)?,
            temp,
        })
    }

    /// Leads `1..=horizon` of the forecast issued at `issued_at`.
    pub fn forecast_window(&self, issued_at: i64, horizon: usize) -> Option<Vec<IntervalWeather>> {
        (1..=horizon).map(|k| self.forecast(issued_at, k)).collect()
    }

    /// Measured weather for the `horizon` intervals following `t`.
    pub fn measured_window(&self, t: i64, horizon: usize) -> Option<Vec<IntervalWeather>> {
        (1..=horizon)
            .map(|k| self.measured(t + k as i64 * self.dt))
            .collect()
    }

    fn solar_from_okta(&self, end: i64, okta: f64) -> Option<f64> {
        solar::interval_solar(end, self.dt, self.site.latitude, self.site.longitude, okta).ok()
    }

    /// Candidate issuance times: the forecast table keys when present,
    /// otherwise every record timestamp.
    fn issuance_times(&self) -> Vec<i64> {
        match &self.forecasts {
            Some(table) => table.keys().copied().collect(),
            None => self.records.iter().map(|r| r.timestamp).collect(),
        }
    }

    /// Restrict to records in `[start, end]` (and forecasts issued there).
    pub fn slice(&self, start: i64, end: i64) -> Result<Self> {
        let records = self
            .records
            .iter()
            .filter(|r| r.timestamp >= start && r.timestamp <= end)
            .cloned()
            .collect();
        let mut out = WeatherSeries::new(self.site, self.dt, records)?;
        if let Some(table) = &self.forecasts {
            out.forecasts = Some(table.range(start..=end).map(|(k, v)| (*k, v.clone())).collect());
        }
        Ok(out)
    }
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| ts.to_string())
}

/// RFC 3339 or integer UTC seconds.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.timestamp())
        .map_err(|e| Error::Data(format!("bad timestamp `{s}`: {e}")))
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("nan") || f.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    f.parse::<f64>()
        .map(Some)
        .map_err(|e| Error::Data(format!("bad number `{f}`: {e}")))
}

fn column_positions(headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Data(format!("missing required column `{name}`")))
        })
        .collect()
}

/// Parse the measurement CSV.
pub fn parse_weather_csv(
    data: &str,
    site: Site,
    dt: i64,
    cloud_units: CloudUnits,
) -> Result<WeatherSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(data.as_bytes());
    let headers = reader.headers()?.clone();
    let cols = column_positions(&headers, &TRUTH_COLUMNS)?;
    let cloud_measured = headers.iter().position(|h| h == CLOUD_MEASURED_COLUMN);
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let temp_measured = parse_opt(&row[cols[1]])?.unwrap_or(f64::NAN);
        records.push(WeatherRecord {
            timestamp: parse_timestamp(&row[cols[0]])?,
            temp_measured,
            temp_forecast: parse_opt(&row[cols[2]])?,
            cloud_okta_forecast: parse_opt(&row[cols[3]])?.map(|c| cloud_units.to_okta(c)),
            solar_measured: parse_opt(&row[cols[4]])?,
            cloud_okta_measured: match cloud_measured {
                Some(i) => parse_opt(&row[i])?.map(|c| cloud_units.to_okta(c)),
                None => None,
            },
        });
    }
    WeatherSeries::new(site, dt, records)
}

/// Parse the forecast issuance CSV (one row per issuance and lead).
pub fn parse_forecast_csv(data: &str, cloud_units: CloudUnits) -> Result<BTreeMap<i64, Vec<ForecastPoint>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(data.as_bytes());
    let headers = reader.headers()?.clone();
    let cols = column_positions(&headers, &FORECAST_COLUMNS)?;
    let mut table: BTreeMap<i64, Vec<ForecastPoint>> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let issued = parse_timestamp(&row[cols[0]])?;
        let valid_at = parse_timestamp(&row[cols[1]])?;
        let (Some(temp_c), Some(cloud)) = (parse_opt(&row[cols[2]])?, parse_opt(&row[cols[3]])?) else {
            // Missing values surface as gaps during extraction.
            continue;
        };
        table.entry(issued).or_default().push(ForecastPoint {
            valid_at,
            temp_c,
            cloud_okta: cloud_units.to_okta(cloud),
        });
    }
    for points in table.values_mut() {
        points.sort_by_key(|p| p.valid_at);
    }
    Ok(table)
}

pub fn read_weather(
    truth: &Path,
    forecasts: Option<&Path>,
    site: Site,
    dt: i64,
    cloud_units: CloudUnits,
) -> Result<WeatherSeries> {
    let data = std::fs::read_to_string(truth).map_err(|e| Error::io(truth, e))?;
    let series = parse_weather_csv(&data, site, dt, cloud_units)?;
    match forecasts {
        Some(path) => {
            let data = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            series.with_forecasts(parse_forecast_csv(&data, cloud_units)?)
        }
        None => Ok(series),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn weather_to_csv(series: &WeatherSeries) -> String {
    let mut out = TRUTH_COLUMNS.join(",");
    out.push(',');
    out.push_str(CLOUD_MEASURED_COLUMN);
    out.push('\n');
    for r in &series.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            format_timestamp(r.timestamp),
            r.temp_measured,
            fmt_opt(r.temp_forecast),
            fmt_opt(r.cloud_okta_forecast),
            fmt_opt(r.solar_measured),
            fmt_opt(r.cloud_okta_measured),
        );
    }
    out
}

pub fn forecasts_to_csv(table: &BTreeMap<i64, Vec<ForecastPoint>>) -> String {
    let mut out = FORECAST_COLUMNS.join(",");
    out.push('\n');
    for (issued, points) in table {
        for p in points {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                format_timestamp(*issued),
                format_timestamp(p.valid_at),
                p.temp_c,
                p.cloud_okta
            );
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorField {
    Temperature,
    Solar,
}

impl ErrorField {
    pub fn name(self) -> &'static str {
        match self {
            ErrorField::Temperature => "temperature",
            ErrorField::Solar => "solar",
        }
    }

    fn pick(self, w: &IntervalWeather) -> f64 {
        match self {
            ErrorField::Temperature => w.temp,
            ErrorField::Solar => w.solar,
        }
    }
}

/// Lead-1..H forecast errors `measured - forecast` from one issuance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub issued_at: i64,
    pub lead_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub field: ErrorField,
    pub horizon: usize,
    pub windows_considered: usize,
    pub windows_used: usize,
    pub windows_skipped: usize,
    pub skipped_issuances: Vec<String>,
}

/// One error sample per issuance whose full horizon window is present.
/// Windows with any missing measurement or forecast are dropped.
pub fn extract_errors(
    series: &WeatherSeries,
    horizon: usize,
    field: ErrorField,
) -> Result<(Vec<ErrorSample>, GapReport)> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let (Some(_), Some(last)) = (series.start(), series.end()) else {
        return Err(Error::Data("weather series is empty".into()));
    };
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let mut considered = 0;
    for t in series.issuance_times() {
        if t + horizon as i64 * series.dt > last {
            continue;
        }
        considered += 1;
        let lead_errors: Option<Vec<f64>> = (1..=horizon)
            .map(|k| {
                let measured = series.measured(t + k as i64 * series.dt)?;
                let forecast = series.forecast(t, k)?;
                Some(field.pick(&measured) - field.pick(&forecast))
            })
            .collect();
        match lead_errors {
            Some(lead_errors) => samples.push(ErrorSample {
                issued_at: t,
                lead_errors,
            }),
            None => skipped.push(format_timestamp(t)),
        }
    }
    if considered == 0 {
        return Err(Error::Data(format!(
            "series too short for a single {horizon}-step forecast window"
        )));
    }
    let report = GapReport {
        field,
        horizon,
        windows_considered: considered,
        windows_used: samples.len(),
        windows_skipped: skipped.len(),
        skipped_issuances: skipped,
    };
    Ok((samples, report))
}

/// Smallest calibration size meeting the (eps, beta) guarantee:
/// `ceil(ln beta / ln(1 - eps))`.
pub fn required_calibration_size(eps: f64, beta: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) || !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps and beta must lie in (0, 1), got eps={eps}, beta={beta}"
        )));
    }
    let bound = beta.ln() / (1.0 - eps).ln();
    // Absorb round-off when the ratio is an exact integer.
    Ok((bound - 1e-9).ceil().max(1.0) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub training: Vec<ErrorSample>,
    pub calibration: Vec<ErrorSample>,
}

/// Seeded shuffle, then the last `n_calib` samples go to calibration.
pub fn split_samples(samples: &[ErrorSample], n_calib: usize, seed: u64) -> Result<SampleSplit> {
    if samples.len() <= n_calib {
        return Err(Error::Data(format!(
            "{} samples cannot be split with {n_calib} held out for calibration",
            samples.len()
        )));
    }
    let mut shuffled = samples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let calibration = shuffled.split_off(shuffled.len() - n_calib);
    Ok(SampleSplit {
        training: shuffled,
        calibration,
    })
}

/// Split with a calibration set large enough for the (eps, beta) guarantee.
/// `n_calib` defaults to the minimum; a smaller explicit request is rejected.
pub fn split_for_guarantee(
    samples: &[ErrorSample],
    eps: f64,
    beta: f64,
    n_calib: Option<usize>,
    seed: u64,
) -> Result<SampleSplit> {
    let required = required_calibration_size(eps, beta)?;
    let n_calib = n_calib.unwrap_or(required);
    if n_calib < required {
        return Err(Error::InsufficientCalibration {
            required,
            got: n_calib,
            eps,
            beta,
        });
    }
    if samples.len() <= n_calib {
        return Err(Error::InsufficientCalibration {
            required,
            got: samples.len().saturating_sub(1),
            eps,
            beta,
        });
    }
    split_samples(samples, n_calib, seed)
}
