//! Synthetic hourly weather with AR(1) forecast errors.
//!
//! Truth is a diurnal sinusoid on top of a day-to-day AR(1) offset, with an
//! hourly AR(1) cloud process. Every hour a forecast is issued for leads
//! `1..=max_lead`; its temperature error vector over the leads is a
//! stationary AR(1) sequence with covariance `sigma² phi^|i-j|` plus a mean
//! offset, so `measured - forecast` has known statistics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{parse_timestamp, solar, ForecastPoint, Site, WeatherRecord, WeatherSeries};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWeather {
    /// First record (RFC 3339, UTC).
    pub start: String,
    pub days: u32,
    /// Records appended past `days` so forecast windows near the end are complete.
    pub padding_hours: u32,
    pub dt: i64,
    pub site: Site,
    pub utc_offset_hours: f64,

    pub temp_mean_c: f64,
    pub temp_amplitude_c: f64,
    pub peak_hour_local: f64,
    pub day_offset_sd_c: f64,
    pub day_offset_phi: f64,

    pub cloud_mean_okta: f64,
    pub cloud_sd_okta: f64,
    pub cloud_phi: f64,

    /// Stationary standard deviation of each lead's temperature error.
    pub temp_error_sd_c: f64,
    /// Lag-one correlation of the error across consecutive leads.
    pub temp_error_phi: f64,
    /// Mean of `measured - forecast`.
    pub temp_error_mean_c: f64,
    /// Rescale each issuance's temperature error vector into this L1 ball.
    pub temp_error_l1_bound: Option<f64>,
    /// Noise on forecast cloud cover (oktas); zero makes solar forecasts exact.
    pub cloud_error_sd_okta: f64,

    pub max_lead: usize,
    pub seed: u64,
}

impl Default for SyntheticWeather {
    fn default() -> Self {
        SyntheticWeather {
            start: "2018-01-01T05:00:00Z".into(),
            days: 31,
            padding_hours: 24,
            dt: 3600,
            site: Site::default(),
            utc_offset_hours: -5.0,
            temp_mean_c: 0.0,
            temp_amplitude_c: 4.0,
            peak_hour_local: 15.0,
            day_offset_sd_c: 2.5,
            day_offset_phi: 0.7,
            cloud_mean_okta: 4.5,
            cloud_sd_okta: 2.5,
            cloud_phi: 0.9,
            temp_error_sd_c: 1.0,
            temp_error_phi: 0.7,
            temp_error_mean_c: 0.0,
            temp_error_l1_bound: None,
            cloud_error_sd_okta: 1.0,
            max_lead: 5,
            seed: 0,
        }
    }
}

impl SyntheticWeather {
    /// Analytic covariance of the lead-error vector before any L1 rescaling.
    pub fn temp_error_covariance(&self, horizon: usize) -> Vec<Vec<f64>> {
        let s2 = self.temp_error_sd_c * self.temp_error_sd_c;
        (0..horizon)
            .map(|i| {
                (0..horizon)
                    .map(|j| s2 * self.temp_error_phi.powi((i as i32 - j as i32).abs()))
                    .collect()
            })
            .collect()
    }

    fn draw_error_vector(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let phi = self.temp_error_phi;
        let innovation = self.temp_error_sd_c * (1.0 - phi * phi).max(0.0).sqrt();
        let mut e = Vec::with_capacity(self.max_lead);
        let mut prev = self.temp_error_sd_c * rng.sample::<f64, _>(StandardNormal);
        e.push(prev);
        for _ in 1..self.max_lead {
            prev = phi * prev + innovation * rng.sample::<f64, _>(StandardNormal);
            e.push(prev);
        }
        for x in &mut e {
            *x += self.temp_error_mean_c;
        }
        if let Some(bound) = self.temp_error_l1_bound {
            let l1: f64 = e.iter().map(|x| x.abs()).sum();
            if l1 > bound {
                let scale = bound / l1;
                e.iter_mut().for_each(|x| *x *= scale);
            }
        }
        e
    }

    pub fn generate(&self) -> Result<WeatherSeries> {
        let start = parse_timestamp(&self.start)?;
        let n = (self.days as usize) * 24 * 3600 / self.dt as usize + self.padding_hours as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);

        let mut temps = Vec::with_capacity(n);
        let mut clouds = Vec::with_capacity(n);
        let mut day_offset = self.day_offset_sd_c * normal(&mut rng);
        let mut cloud_dev = self.cloud_sd_okta * normal(&mut rng);
        let mut last_day = None;
        for i in 0..n {
            let t = start + i as i64 * self.dt;
            let local_h = ((t as f64 / 3600.0 + self.utc_offset_hours) % 24.0 + 24.0) % 24.0;
            let day = ((t as f64 / 3600.0 + self.utc_offset_hours) / 24.0).floor() as i64;
            if last_day.is_some_and(|d| d != day) {
                let phi = self.day_offset_phi;
                day_offset = phi * day_offset
                    + self.day_offset_sd_c * (1.0 - phi * phi).max(0.0).sqrt() * normal(&mut rng);
            }
            last_day = Some(day);
            let diurnal = self.temp_amplitude_c
                * (2.0 * std::f64::consts::PI * (local_h - self.peak_hour_local) / 24.0).cos();
            temps.push(self.temp_mean_c + day_offset + diurnal);

            let phi = self.cloud_phi;
            cloud_dev = phi * cloud_dev + self.cloud_sd_okta * (1.0 - phi * phi).max(0.0).sqrt() * normal(&mut rng);
            clouds.push((self.cloud_mean_okta + cloud_dev).clamp(0.0, 8.0));
        }

        let mut table: BTreeMap<i64, Vec<ForecastPoint>> = BTreeMap::new();
        for i in 0..n {
            let issued = start + i as i64 * self.dt;
            let errors = self.draw_error_vector(&mut rng);
            let mut points = Vec::with_capacity(self.max_lead);
            for (k, err) in errors.iter().enumerate() {
                let j = i + k + 1;
                let cloud_noise = self.cloud_error_sd_okta * normal(&mut rng);
                if j >= n {
                    continue;
                }
                points.push(ForecastPoint {
                    valid_at: issued + (k as i64 + 1) * self.dt,
                    temp_c: temps[j] - err,
                    cloud_okta: (clouds[j] + cloud_noise).clamp(0.0, 8.0),
                });
            }
            if !points.is_empty() {
                table.insert(issued, points);
            }
        }

        let records = (0..n)
            .map(|i| {
                let t = start + i as i64 * self.dt;
                // lead-1 forecast valid at t, when one was issued
                let lead1 = table
                    .get(&(t - self.dt))
                    .and_then(|pts| pts.first())
                    .filter(|p| p.valid_at == t);
                WeatherRecord {
                    timestamp: t,
                    temp_measured: temps[i],
                    temp_forecast: lead1.map(|p| p.temp_c),
                    cloud_okta_forecast: lead1.map(|p| p.cloud_okta),
                    solar_measured: Some(
                        solar::interval_solar(t, self.dt, self.site.latitude, self.site.longitude, clouds[i])
                            .expect("cloud clamped to [0, 8]"),
                    ),
                    cloud_okta_measured: Some(clouds[i]),
                }
            })
            .collect();
        WeatherSeries::new(self.site, self.dt, records)?.with_forecasts(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weather::{extract_errors, ErrorField};

    #[test]
    fn deterministic_by_seed() {
        let cfg = SyntheticWeather { days: 2, ..Default::default() };
        let a = cfg.generate().unwrap();
        let b = cfg.generate().unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.forecasts, b.forecasts);
        let c = SyntheticWeather { seed: 1, ..cfg }.generate().unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn l1_bound_is_respected() {
        let cfg = SyntheticWeather {
            days: 5,
            temp_error_l1_bound: Some(2.0),
            cloud_error_sd_okta: 0.0,
            ..Default::default()
        };
        let series = cfg.generate().unwrap();
        let (temp, _) = extract_errors(&series, 5, ErrorField::Temperature).unwrap();
        for s in &temp {
            let l1: f64 = s.lead_errors.iter().map(|x| x.abs()).sum();
            assert!(l1 <= 2.0 + 1e-9);
        }
        let (sol, _) = extract_errors(&series, 5, ErrorField::Solar).unwrap();
        assert!(sol.iter().all(|s| s.lead_errors.iter().all(|x| x.abs() < 1e-9)));
    }

    /// Sample covariance of extracted errors against the AR(1) covariance.
    #[test]
    fn extracted_error_covariance_matches_generator() {
        let cfg = SyntheticWeather {
            days: 209, // 5016 hourly issuances
            seed: 11,
            ..Default::default()
        };
        let series = cfg.generate().unwrap();
        let (samples, _) = extract_errors(&series, 5, ErrorField::Temperature).unwrap();
        assert!(samples.len() >= 5000);
        let n = samples.len() as f64;
        let d = 5;
        let mean: Vec<f64> = (0..d)
            .map(|k| samples.iter().map(|s| s.lead_errors[k]).sum::<f64>() / n)
            .collect();
        let analytic = cfg.temp_error_covariance(d);
        for i in 0..d {
            for j in 0..d {
                let c = samples
                    .iter()
                    .map(|s| (s.lead_errors[i] - mean[i]) * (s.lead_errors[j] - mean[j]))
                    .sum::<f64>()
                    / (n - 1.0);
                let rel = (c - analytic[i][j]).abs() / analytic[i][j];
                assert!(rel < 0.10, "cov[{i}][{j}] = {c} vs {}", analytic[i][j]);
            }
        }
    }
}
