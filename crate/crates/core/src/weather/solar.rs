//! Solar geometry and the cloud-cover irradiance model.

use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Timelike};

use crate::error::{Error, Result};

/// Geometric solar elevation in degrees at a UTC timestamp.
///
/// Low-precision NOAA formulation: Spencer's Fourier series for declination
/// and equation of time, then the hour angle from true solar time. Good to a
/// few tenths of a degree, no refraction correction. Longitude is east
/// positive.
pub fn solar_elevation(timestamp: i64, latitude: f64, longitude: f64) -> f64 {
    let dt = DateTime::from_timestamp(timestamp, 0).unwrap_or_default();
    let year_days = if is_leap(dt.year()) { 366.0 } else { 365.0 };
    let hours = dt.hour() as f64 + dt.minute() as f64 / 60.0 + dt.second() as f64 / 3600.0;
    let gamma = 2.0 * PI / year_days * (dt.ordinal0() as f64 + (hours - 12.0) / 24.0);

    let eq_time_min = 229.18
        * (0.000075 + 0.001868 * gamma.cos()
            - 0.032077 * gamma.sin()
            - 0.014615 * (2.0 * gamma).cos()
            - 0.040849 * (2.0 * gamma).sin());
    let decl = 0.006918 - 0.399912 * gamma.cos() + 0.070257 * gamma.sin()
        - 0.006758 * (2.0 * gamma).cos()
        + 0.000907 * (2.0 * gamma).sin()
        - 0.002697 * (3.0 * gamma).cos()
        + 0.00148 * (3.0 * gamma).sin();

    let true_solar_min = hours * 60.0 + eq_time_min + 4.0 * longitude;
    let hour_angle = (true_solar_min / 4.0 - 180.0).to_radians();
    let lat = latitude.to_radians();
    let cos_zenith = (lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos()).clamp(-1.0, 1.0);
    90.0 - cos_zenith.acos().to_degrees()
}

fn is_leap(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

/// Clear-sky insolation in W/m² from the solar elevation (degrees) at the
/// start and end of an interval: `max(0, 990 sin(mean elevation) - 30)`.
pub fn clear_sky_insolation(elev_begin: f64, elev_end: f64) -> f64 {
    let mid = 0.5 * (elev_begin + elev_end);
    if mid <= 0.0 {
        return 0.0;
    }
    (990.0 * mid.to_radians().sin() - 30.0).max(0.0)
}

/// Cloud-attenuated irradiance `R0 (1 - 0.75 (n/8)^3.4)` for `n` oktas.
pub fn solar_from_cloud(clear_sky: f64, okta: f64) -> Result<f64> {
    if !(0.0..=8.0).contains(&okta) {
        return Err(Error::InvalidArgument(format!("cloud cover {okta} outside [0, 8] oktas")));
    }
    Ok(clear_sky * (1.0 - 0.75 * (okta / 8.0).powf(3.4)))
}

/// Mean irradiance over the interval `[end - dt, end]` under `okta` cloud cover.
pub fn interval_solar(end: i64, dt: i64, latitude: f64, longitude: f64, okta: f64) -> Result<f64> {
    let begin = solar_elevation(end - dt, latitude, longitude);
    let finish = solar_elevation(end, latitude, longitude);
    solar_from_cloud(clear_sky_insolation(begin, finish), okta)
}
