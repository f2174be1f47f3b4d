//! Closed-loop replay: controllers see forecasts, the plant sees measurements.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{rbc_step, ComfortSchedule, Controller, ControllerConfig, StepContext};
use crate::error::{Error, Result};
use crate::thermal::ThermalModel;
use crate::weather::{format_timestamp, WeatherSeries};

/// Violations smaller than this are LP round-off, K.
pub const VIOLATION_TOL: f64 = 1e-6;

/// Half-open simulation window `[start, end)` of decision times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: i64,
    pub end: i64,
    pub label: String,
}

impl Period {
    pub fn new(start: i64, end: i64) -> Self {
        let fmt = |t: i64| {
            DateTime::from_timestamp(t, 0)
                .map(|d| d.format("%Y%m%dT%H%M").to_string())
                .unwrap_or_else(|| t.to_string())
        };
        Period {
            start,
            end,
            label: format!("{}-{}", fmt(start), fmt(end)),
        }
    }

    /// Calendar month in local time.
    pub fn calendar_month(year: i32, month: u32, utc_offset_hours: f64) -> Result<Self> {
        let first = NaiveDate::from_ymd_opt(year, month, 1)
            .ok_or_else(|| Error::InvalidArgument(format!("no such month {year}-{month}")))?;
        let next = if month == 12 {
            NaiveDate::from_ymd_opt(year + 1, 1, 1)
        } else {
            NaiveDate::from_ymd_opt(year, month + 1, 1)
        }
        .expect("valid successor month");
        let offset = Duration::seconds((utc_offset_hours * 3600.0).round() as i64);
        let to_utc = |d: NaiveDate| Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).unwrap()) - offset;
        Ok(Period {
            start: to_utc(first).timestamp(),
            end: to_utc(next).timestamp(),
            label: format!("{year}-{month:02}"),
        })
    }

    pub fn steps(&self, dt: i64) -> usize {
        ((self.end - self.start).max(0) / dt) as usize
    }
}

pub struct ScenarioRun<'a> {
    pub strategy: String,
    pub controller: Box<dyn Controller + 'a>,
    pub config: ControllerConfig,
    pub weather: &'a WeatherSeries,
    pub model: ThermalModel,
    pub x0: DVector<f64>,
    pub period: Period,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// End of the control interval; the state is the one reached then.
    pub timestamp: i64,
    pub states: Vec<f64>,
    /// Heating applied over the interval, W.
    pub u: f64,
    /// Realized solar, ambient and ground temperature.
    pub v: [f64; 3],
    /// Comfort bound at `timestamp`.
    pub bound: f64,
    pub violation: f64,
    pub soft: bool,
    /// Controller failed; the rule-based input was applied instead.
    pub fallback: bool,
    pub lp_iterations: usize,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: usize,
    pub energy_mwh: f64,
    pub violation_percentage: f64,
    pub violation_kh: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub soft_steps: usize,
    pub fallback_steps: usize,
    pub mean_solve_seconds: f64,
    pub total_lp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub strategy: String,
    pub period: Period,
    pub dt: i64,
    pub oracle: bool,
    pub records: Vec<StepRecord>,
    pub metrics: Metrics,
    pub solver: SolverStats,
    /// Period in steps of the air-temperature tail, when it settles into a cycle.
    pub air_temp_period: Option<usize>,
}

/// Energy and comfort aggregates over the step records.
pub fn compute_metrics(records: &[StepRecord], dt: i64) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no step records".into()));
    }
    let dt_h = dt as f64 / 3600.0;
    let mut energy = 0.0;
    let mut count = 0usize;
    let mut kh = 0.0;
    let mut worst = 0.0f64;
    for r in records {
        energy += r.u * dt_h;
        let short = r.bound - r.states[0];
        // round-off below the tolerance counts toward neither indicator
        if short > VIOLATION_TOL {
            count += 1;
            kh += short * dt_h;
        }
        worst = worst.max(short);
    }
    Ok(Metrics {
        steps: records.len(),
        energy_mwh: energy / 1e6,
        violation_percentage: 100.0 * count as f64 / records.len() as f64,
        violation_kh: kh,
        max_violation: worst,
    })
}

fn solver_stats(records: &[StepRecord]) -> SolverStats {
    let n = records.len().max(1) as f64;
    SolverStats {
        soft_steps: records.iter().filter(|r| r.soft).count(),
        fallback_steps: records.iter().filter(|r| r.fallback).count(),
        mean_solve_seconds: records.iter().map(|r| r.solve_seconds).sum::<f64>() / n,
        total_lp_iterations: records.iter().map(|r| r.lp_iterations).sum(),
    }
}

/// Smallest `p <= max_period` with `|s[i] - s[i - p]| <= tol` over the last
/// `3 * max_period` samples, or `None`.
pub fn detect_period(series: &[f64], max_period: usize, tol: f64) -> Option<usize> {
    let window = 3 * max_period;
    if series.len() < window + max_period {
        return None;
    }
    let from = series.len() - window;
    (1..=max_period).find(|&p| (from..series.len()).all(|i| (series[i] - series[i - p]).abs() <= tol))
}

fn air_index(model: &ThermalModel) -> usize {
    model.state_index("air").unwrap_or(0)
}

/// Run the receding-horizon loop over `scenario.period`.
pub fn run_closed_loop(mut scenario: ScenarioRun<'_>) -> Result<SimulationReport> {
    let weather = scenario.weather;
    let dt = weather.dt;
    let h = scenario.config.horizon;
    if (scenario.model.dt - dt as f64).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "model interval {} s differs from weather interval {dt} s",
            scenario.model.dt
        )));
    }
    if scenario.x0.len() != scenario.model.n_states() {
        return Err(Error::Dimension {
            what: "initial state",
            expected: scenario.model.n_states(),
            got: scenario.x0.len(),
        });
    }
    let steps = scenario.period.steps(dt);
    if steps == 0 {
        return Err(Error::InvalidArgument("empty simulation period".into()));
    }
    let air = air_index(&scenario.model);
    let schedule: ComfortSchedule = scenario.config.schedule;
    let mut x = scenario.x0.clone();
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = scenario.period.start + k as i64 * dt;
        let forecast = weather.forecast_window(t, h).ok_or_else(|| {
            Error::Data(format!("no complete {h}-step forecast issued at {}", format_timestamp(t)))
        })?;
        let truth = weather
            .measured_window(t, h)
            .ok_or_else(|| Error::Data(format!("measured weather missing after {}", format_timestamp(t))))?;
        let ctx = StepContext {
            timestamp: t,
            state: &x,
            forecast: &forecast,
            truth: &truth,
        };
        let (u, soft, fallback, iters, secs) = match scenario.controller.decide(&ctx) {
            Ok(d) => (d.u, d.soft, false, d.lp_iterations, d.solve_seconds),
            Err(e) => {
                log::warn!("{} failed at {}: {e}; applying rule-based input", scenario.strategy, format_timestamp(t));
                (rbc_step(x[air], t, &scenario.config), false, true, 0, 0.0)
            }
        };
        let u = u.clamp(0.0, scenario.config.u_max);
        let v = [truth[0].solar, truth[0].temp, scenario.config.ground_temp];
        let vv = DVector::from_row_slice(&v);
        x = &scenario.model.a * &x + &scenario.model.b_u * u + &scenario.model.b_v * vv;
        let ts = t + dt;
        let bound = schedule.bound_at(ts);
        let mut states: Vec<f64> = x.iter().copied().collect();
        // air first in records
        states.swap(0, air);
        records.push(StepRecord {
            timestamp: ts,
            violation: (bound - x[air]).max(0.0),
            states,
            u,
            v,
            bound,
            soft,
            fallback,
            lp_iterations: iters,
            solve_seconds: secs,
        });
    }
    let metrics = compute_metrics(&records, dt)?;
    let air_series: Vec<f64> = records.iter().map(|r| r.states[0]).collect();
    Ok(SimulationReport {
        strategy: scenario.strategy,
        period: scenario.period,
        dt,
        oracle: scenario.controller.is_oracle(),
        metrics,
        solver: solver_stats(&records),
        air_temp_period: detect_period(&air_series, 48.min(air_series.len() / 4), 1e-6),
        records,
    })
}

impl SimulationReport {
    /// Copy with wall-clock timings zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.records.iter_mut().for_each(|s| s.solve_seconds = 0.0);
        r.solver.mean_solve_seconds = 0.0;
        r
    }

    /// Join a report with the one covering the immediately following period.
    pub fn concat(&self, next: &SimulationReport) -> Result<SimulationReport> {
        if self.period.end != next.period.start || self.dt != next.dt || self.strategy != next.strategy {
            return Err(Error::InvalidArgument("reports are not contiguous runs of one strategy".into()));
        }
        let mut records = self.records.clone();
        records.extend(next.records.iter().cloned());
        Ok(SimulationReport {
            strategy: self.strategy.clone(),
            period: Period::new(self.period.start, next.period.end),
            dt: self.dt,
            oracle: self.oracle,
            metrics: compute_metrics(&records, self.dt)?,
            solver: solver_stats(&records),
            air_temp_period: next.air_temp_period,
            records,
        })
    }

    pub fn file_stem(&self) -> String {
        format!("report_{}_{}", self.strategy, self.period.label)
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("timestamp_utc,air_temp_c");
        let n = self.records.first().map_or(0, |r| r.states.len());
        for i in 1..n {
            let _ = write!(out, ",state{i}_c");
        }
        out.push_str(",heating_w,solar_wm2,ambient_c,ground_c,bound_c,violation_k,soft,fallback\n");
        for r in &self.records {
            out.push_str(&format_timestamp(r.timestamp));
            for s in &r.states {
                let _ = write!(out, ",{s}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{},{},{}",
                r.u, r.v[0], r.v[1], r.v[2], r.bound, r.violation, r.soft, r.fallback
            );
        }
        out
    }

    /// Write `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let stem = self.file_stem();
        let json = dir.as_ref().join(format!("{stem}.json"));
        let csv = dir.as_ref().join(format!("{stem}.csv"));
        crate::io::write_json(&json, self)?;
        crate::io::write_atomic(&csv, self.records_csv().as_bytes())?;
        Ok((json, csv))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub strategy: String,
    pub energy_mwh: f64,
    pub extra_energy_pct: f64,
    pub violation_percentage: f64,
    pub violation_kh: f64,
    pub soft_steps: usize,
    pub fallback_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffTable {
    pub period: Period,
    pub rows: Vec<TradeoffRow>,
}

impl TradeoffTable {
    pub fn row(&self, strategy: &str) -> Option<&TradeoffRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "strategy,energy_mwh,extra_energy_pct,violation_percentage,violation_kh,soft_steps,fallback_steps\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.strategy,
                r.energy_mwh,
                r.extra_energy_pct,
                r.violation_percentage,
                r.violation_kh,
                r.soft_steps,
                r.fallback_steps
            );
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(dir.as_ref().join("tradeoff.csv"), self.to_csv().as_bytes())?;
        crate::io::write_json(dir.as_ref().join("tradeoff.json"), self)
    }
}

/// Extra energy of each report relative to the perfect-forecast bound.
pub fn compare_strategies(reports: &[SimulationReport], pb: &SimulationReport) -> Result<TradeoffTable> {
    let base = pb.metrics.energy_mwh;
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        if r.period.start != pb.period.start || r.period.end != pb.period.end || r.dt != pb.dt {
            return Err(Error::InvalidArgument(format!(
                "report {} covers a different period than the bound",
                r.strategy
            )));
        }
        rows.push(TradeoffRow {
            strategy: r.strategy.clone(),
            energy_mwh: r.metrics.energy_mwh,
            extra_energy_pct: if base > 0.0 {
                100.0 * (r.metrics.energy_mwh - base) / base
            } else {
                0.0
            },
            violation_percentage: r.metrics.violation_percentage,
            violation_kh: r.metrics.violation_kh,
            soft_steps: r.solver.soft_steps,
            fallback_steps: r.solver.fallback_steps,
        });
    }
    Ok(TradeoffTable {
        period: pb.period.clone(),
        rows,
    })
}

/// Calendar months (local time) overlapping `[start, end)`.
pub fn months_between(start: i64, end: i64, utc_offset_hours: f64) -> Result<Vec<Period>> {
    let local = |t: i64| {
        DateTime::from_timestamp(t + (utc_offset_hours * 3600.0).round() as i64, 0)
            .ok_or_else(|| Error::InvalidArgument(format!("timestamp {t} out of range")))
    };
    let (s, e) = (local(start)?, local(end - 1)?);
    let mut out = Vec::new();
    let (mut y, mut m) = (s.year(), s.month());
    while (y, m) <= (e.year(), e.month()) {
        out.push(Period::calendar_month(y, m, utc_offset_hours)?);
        if m == 12 {
            y += 1;
            m = 1;
        } else {
            m += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(bound: f64, air: f64, u: f64) -> StepRecord {
        StepRecord {
            timestamp: 0,
            states: vec![air],
            u,
            v: [0.0; 3],
            bound,
            violation: (bound - air).max(0.0),
            soft: false,
            fallback: false,
            lp_iterations: 0,
            solve_seconds: 0.0,
        }
    }

    #[test]
    fn metrics_by_hand() {
        let none: Vec<StepRecord> = (0..10).map(|_| rec(18.0, 19.0, 0.0)).collect();
        let m = compute_metrics(&none, 3600).unwrap();
        assert_eq!((m.violation_percentage, m.violation_kh), (0.0, 0.0));

        let mut some: Vec<StepRecord> = (0..100).map(|_| rec(18.0, 18.0, 0.0)).collect();
        for r in some.iter_mut().take(3) {
            *r = rec(18.0, 16.0, 0.0);
        }
        let m = compute_metrics(&some, 3600).unwrap();
        assert!((m.violation_percentage - 3.0).abs() < 1e-12);
        assert!((m.violation_kh - 6.0).abs() < 1e-12);

        let on: Vec<StepRecord> = (0..720).map(|_| rec(18.0, 20.0, 60_000.0)).collect();
        assert!((compute_metrics(&on, 3600).unwrap().energy_mwh - 43.2).abs() < 1e-9);
        assert!(compute_metrics(&[], 3600).is_err());
    }

    #[test]
    fn violation_tolerance_absorbs_roundoff() {
        let r = vec![rec(18.0, 18.0 - 1e-9, 0.0)];
        assert_eq!(compute_metrics(&r, 3600).unwrap().violation_percentage, 0.0);
    }

    #[test]
    fn calendar_month_in_local_time() {
        let p = Period::calendar_month(2018, 1, -5.0).unwrap();
        assert_eq!(format_timestamp(p.start), "2018-01-01T05:00:00Z");
        assert_eq!(format_timestamp(p.end), "2018-02-01T05:00:00Z");
        assert_eq!(p.steps(3600), 744);
        assert_eq!(p.label, "2018-01");
        let months = months_between(p.start, p.end + 3600, -5.0).unwrap();
        assert_eq!(months.len(), 2);
        assert_eq!(Period::calendar_month(2018, 12, 0.0).unwrap().steps(3600), 744);
    }

    #[test]
    fn period_detection() {
        let square: Vec<f64> = (0..200).map(|i| if i % 4 < 2 { 1.0 } else { 0.0 }).collect();
        assert_eq!(detect_period(&square, 10, 1e-9), Some(4));
        let flat = vec![3.0; 100];
        assert_eq!(detect_period(&flat, 10, 1e-9), Some(1));
        let ramp: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(detect_period(&ramp, 10, 1e-9), None);
    }

    #[test]
    fn tradeoff_rejects_mismatched_periods() {
        let mk = |name: &str, start: i64, u: f64| SimulationReport {
            strategy: name.into(),
            period: Period::new(start, start + 7200),
            dt: 3600,
            oracle: false,
            records: vec![rec(18.0, 18.0, u), rec(18.0, 18.0, u)],
            metrics: compute_metrics(&[rec(18.0, 18.0, u), rec(18.0, 18.0, u)], 3600).unwrap(),
            solver: solver_stats(&[]),
            air_temp_period: None,
        };
        let pb = mk("pb", 0, 100.0);
        let t = compare_strategies(&[pb.clone(), mk("x", 0, 150.0)], &pb).unwrap();
        assert_eq!(t.row("pb").unwrap().extra_energy_pct, 0.0);
        assert!((t.row("x").unwrap().extra_energy_pct - 50.0).abs() < 1e-12);
        assert!(t.to_csv().starts_with("strategy,energy_mwh,extra_energy_pct"));
        assert!(compare_strategies(&[mk("y", 3600, 1.0)], &pb).is_err());
    }
}
