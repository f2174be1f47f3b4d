//! Experiment configuration: one JSON file, every field defaulted and
//! overridable with dotted `key=value` assignments.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control::{ControllerConfig, ControllerKind};
use crate::error::{Error, Result};
use crate::sim::{months_between, Period};
use crate::thermal::{RcNetwork, ThermalModel};
use crate::uncertainty::{LearnOptions, UncertaintySet};
use crate::weather::synthetic::SyntheticWeather;
use crate::weather::{parse_timestamp, read_weather, CloudUnits, ErrorField, Site, WeatherSeries};

/// Where a weather series comes from: CSV files or the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherSource {
    pub truth_csv: Option<PathBuf>,
    pub forecasts_csv: Option<PathBuf>,
    pub cloud_units: CloudUnits,
    pub site: Site,
    /// Used when `truth_csv` is unset. Its `seed` and `dt` are replaced by the
    /// experiment's.
    pub synthetic: Option<SyntheticWeather>,
}

impl Default for WeatherSource {
    fn default() -> Self {
        WeatherSource {
            truth_csv: None,
            forecasts_csv: None,
            cloud_units: CloudUnits::Okta,
            site: Site::default(),
            synthetic: Some(SyntheticWeather::default()),
        }
    }
}

impl WeatherSource {
    pub fn synthetic(block: SyntheticWeather) -> Self {
        WeatherSource {
            site: block.site,
            synthetic: Some(block),
            ..Default::default()
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        match (&self.truth_csv, &self.synthetic) {
            (None, None) => Err(Error::Config(format!(
                "{what}: set either truth_csv or a synthetic block"
            ))),
            (None, Some(_)) if self.forecasts_csv.is_some() => Err(Error::Config(format!(
                "{what}: forecasts_csv needs truth_csv"
            ))),
            _ => Ok(()),
        }
    }

    /// Relative CSV paths resolve against `base`.
    pub fn load(&self, base: &Path, dt: i64, seed: u64) -> Result<WeatherSeries> {
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        match (&self.truth_csv, &self.synthetic) {
            (Some(truth), _) => read_weather(
                &resolve(truth),
                self.forecasts_csv.as_ref().map(resolve).as_deref(),
                self.site,
                dt,
                self.cloud_units,
            ),
            (None, Some(block)) => SyntheticWeather {
                seed,
                dt,
                ..block.clone()
            }
            .generate(),
            (None, None) => Err(Error::Config("no weather source configured".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub eps: f64,
    pub beta: f64,
    pub nu: f64,
    /// Calibration size; the guarantee minimum when unset.
    pub n_calib: Option<usize>,
    /// Channels learned from data. Channels left out get a zero-error set.
    pub fields: Vec<ErrorField>,
    /// Historical weather used for learning; the simulation weather when unset.
    pub training: Option<WeatherSource>,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        let learn = LearnOptions::default();
        UncertaintyConfig {
            eps: learn.eps,
            beta: learn.beta,
            nu: learn.nu,
            n_calib: learn.n_calib,
            fields: vec![ErrorField::Temperature, ErrorField::Solar],
            training: Some(WeatherSource::synthetic(SyntheticWeather {
                start: "2017-12-01T05:00:00Z".into(),
                days: 11,
                ..Default::default()
            })),
        }
    }
}

/// Simulation window; unset ends default to the span of the weather series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodConfig {
    /// RFC 3339, first decision time.
    pub start: Option<String>,
    /// RFC 3339, exclusive.
    pub end: Option<String>,
    /// Report per calendar month (local time) instead of one window.
    pub split_months: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub models_dir: PathBuf,
    pub reports_dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            models_dir: "models".into(),
            reports_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pb,
    Rbc,
    Cempc,
    Ddrmpc,
    /// One run per entry of `omegas`.
    Rmpc,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::Config(format!("unknown strategy {s:?} (pb, rbc, cempc, ddrmpc, rmpc)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of all randomness: simulation weather uses `seed`, training
    /// weather `seed + 1`, the calibration split `seed + 2`.
    pub seed: u64,
    /// Sampling interval, s.
    pub dt: i64,
    pub network: RcNetwork,
    pub weather: WeatherSource,
    pub uncertainty: UncertaintyConfig,
    pub controller: ControllerConfig,
    /// Per-node initial temperatures; every node at the night bound when unset.
    pub initial_state: Option<Vec<f64>>,
    pub period: PeriodConfig,
    pub strategies: Vec<Strategy>,
    pub omegas: Vec<f64>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dt: 3600,
            network: RcNetwork::reference_greenhouse(),
            weather: WeatherSource::default(),
            uncertainty: UncertaintyConfig::default(),
            controller: ControllerConfig::default(),
            initial_state: None,
            period: PeriodConfig::default(),
            strategies: vec![
                Strategy::Pb,
                Strategy::Rbc,
                Strategy::Cempc,
                Strategy::Ddrmpc,
                Strategy::Rmpc,
            ],
            omegas: vec![6.0],
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Apply `key.path=value` assignments. Values are parsed as JSON and fall
    /// back to plain strings, so `weather.truth_csv=data/jan.csv` works
    /// unquoted.
    pub fn with_overrides<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for a in assignments {
            let a = a.as_ref();
            let (key, raw) = a
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {a:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key.trim(), value)?;
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("after overrides: {e}")))?;
        // Fields unknown to a lenient section vanish on the round trip.
        let resolved = serde_json::to_value(&cfg)?;
        for a in assignments {
            let key = a.as_ref().split_once('=').map_or("", |(k, _)| k.trim());
            if get_path(&resolved, key).is_none() {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0 {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        self.network
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.controller.validate()?;
        self.weather.validate("weather")?;
        if let Some(t) = &self.uncertainty.training {
            t.validate("uncertainty.training")?;
        }
        let u = &self.uncertainty;
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(u.eps) || !unit(u.beta) {
            return Err(Error::Config(format!(
                "eps and beta must lie in (0, 1), got eps={}, beta={}",
                u.eps, u.beta
            )));
        }
        if !(u.nu > 0.0 && u.nu <= 1.0) {
            return Err(Error::Config(format!("nu must lie in (0, 1], got {}", u.nu)));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        if self.strategies.contains(&Strategy::Rmpc) && self.omegas.is_empty() {
            return Err(Error::Config("rmpc selected but omegas is empty".into()));
        }
        if let Some(bad) = self.omegas.iter().find(|o| !(**o >= 0.0) || !o.is_finite()) {
            return Err(Error::Config(format!("omega must be finite and nonnegative, got {bad}")));
        }
        if let Some(x0) = &self.initial_state {
            if x0.len() != self.network.nodes.len() {
                return Err(Error::Config(format!(
                    "initial_state has {} entries for {} nodes",
                    x0.len(),
                    self.network.nodes.len()
                )));
            }
        }
        for s in [&self.period.start, &self.period.end].into_iter().flatten() {
            parse_timestamp(s).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn learn_options(&self) -> LearnOptions {
        LearnOptions {
            eps: self.uncertainty.eps,
            beta: self.uncertainty.beta,
            nu: self.uncertainty.nu,
            n_calib: self.uncertainty.n_calib,
            seed: self.seed.wrapping_add(2),
        }
    }

    pub fn simulation_weather(&self, base: &Path) -> Result<WeatherSeries> {
        self.weather.load(base, self.dt, self.seed)
    }

    pub fn training_weather(&self, base: &Path) -> Result<WeatherSeries> {
        match &self.uncertainty.training {
            Some(src) => src.load(base, self.dt, self.seed.wrapping_add(1)),
            None => self.simulation_weather(base),
        }
    }

    pub fn build_model(&self) -> Result<ThermalModel> {
        crate::thermal::build_rc_model(&self.network, self.dt as f64)
    }

    pub fn initial_state(&self) -> DVector<f64> {
        match &self.initial_state {
            Some(x) => DVector::from_column_slice(x),
            None => DVector::from_element(self.network.nodes.len(), self.controller.schedule.night_min),
        }
    }

    /// Simulation windows inside `series`, leaving room for the last forecast.
    pub fn periods(&self, series: &WeatherSeries) -> Result<Vec<Period>> {
        let (Some(first), Some(last)) = (series.start(), series.end()) else {
            return Err(Error::Data("weather series is empty".into()));
        };
        let lead = self.controller.horizon as i64 * series.dt;
        let start = match &self.period.start {
            Some(s) => parse_timestamp(s)?,
            // the first record closes an interval, so decisions start there
            None => first,
        };
        let end = match &self.period.end {
            Some(s) => parse_timestamp(s)?,
            None => match (&self.weather.truth_csv, &self.weather.synthetic) {
                // the generator pads past its nominal span for the last forecasts
                (None, Some(block)) => parse_timestamp(&block.start)? + block.days as i64 * 86_400,
                _ => {
                    let span = last - lead + series.dt - start;
                    start + span.div_euclid(series.dt) * series.dt
                }
            },
        };
        if end <= start {
            return Err(Error::Data("simulation period is empty".into()));
        }
        if start < first {
            return Err(Error::Data("simulation period starts before the weather series".into()));
        }
        if end - series.dt + lead > last {
            return Err(Error::Data(format!(
                "weather ends before the period end plus {} forecast leads",
                self.controller.horizon
            )));
        }
        if !self.period.split_months {
            return Ok(vec![Period::new(start, end)]);
        }
        let offset = self.controller.schedule.utc_offset_hours;
        Ok(months_between(start, end, offset)?
            .into_iter()
            .filter_map(|m| {
                let (s, e) = (m.start.max(start), m.end.min(end));
                (e > s).then(|| Period {
                    label: if (s, e) == (m.start, m.end) {
                        m.label.clone()
                    } else {
                        Period::new(s, e).label
                    },
                    start: s,
                    end: e,
                })
            })
            .collect())
    }

    /// Controllers to run, in configuration order; DDRMPC needs `sets`.
    pub fn controller_kinds(&self, sets: Option<&[UncertaintySet]>) -> Result<Vec<ControllerKind>> {
        let mut kinds = Vec::new();
        for s in &self.strategies {
            match s {
                Strategy::Pb => kinds.push(ControllerKind::Pb),
                Strategy::Rbc => kinds.push(ControllerKind::Rbc),
                Strategy::Cempc => kinds.push(ControllerKind::Cempc),
                Strategy::Rmpc => kinds.extend(self.omegas.iter().map(|&omega| ControllerKind::Rmpc { omega })),
                Strategy::Ddrmpc => {
                    let sets = sets.ok_or_else(|| Error::Data("ddrmpc requires learned uncertainty sets".into()))?;
                    kinds.push(ControllerKind::Ddrmpc { sets: sets.to_vec() });
                }
            }
        }
        Ok(kinds)
    }
}

fn get_path<'a>(tree: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(tree, |node, part| match node {
        Value::Object(map) => map.get(part),
        Value::Array(items) => items.get(part.parse::<usize>().ok()?),
        _ => None,
    })
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                // a new leaf is left for deny_unknown_fields to reject
                if !map.contains_key(*part) && !last {
                    return Err(Error::Config(format!("unknown config key {key:?}")));
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("{key:?}: {part:?} is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("{key:?}: index {idx} out of range ({len})")))?
            }
            _ => return Err(Error::Config(format!("{key:?}: cannot descend into a scalar"))),
        };
    }
    *node = value;
    Ok(())
}
