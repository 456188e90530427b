//! Solar and wind production for one-hour steps.
//!
//! Production is reported in kWh per hour, which equals the average power in
//! kW over the step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableParams {
    pub eta_solar: f64,
    /// m^2 per cell
    pub a_cell: f64,
    /// cells per panel
    pub n_cpp: f64,
    pub n_pan: f64,
    pub eta_wind: f64,
    /// air density, kg/m^3
    pub rho: f64,
    /// rotor swept area, m^2
    pub a_tur: f64,
    pub n_tur: f64,
    /// cut-in speed, m/s
    pub w_in: f64,
    /// cut-out speed, m/s
    pub w_out: f64,
    /// 3 for the kinetic-energy law, 1 for the linear variant.
    #[serde(default = "default_exponent")]
    pub wind_exponent: u8,
}

fn default_exponent() -> u8 {
    3
}

impl RenewableParams {
    pub fn validate(&self) -> Result<()> {
        let key = |f: &str| format!("planning.renewables.{f}");
        for (name, v) in [("eta_solar", self.eta_solar), ("eta_wind", self.eta_wind)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invariant(key(name), "efficiency must lie in (0, 1]"));
            }
        }
        for (name, v) in [
            ("a_cell", self.a_cell),
            ("n_cpp", self.n_cpp),
            ("n_pan", self.n_pan),
            ("rho", self.rho),
            ("a_tur", self.a_tur),
            ("n_tur", self.n_tur),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invariant(key(name), "must be > 0"));
            }
        }
        if !(self.w_in >= 0.0 && self.w_in < self.w_out) {
            return Err(Error::invariant(key("w_in"), "cut-in speed must be below cut-out speed"));
        }
        if self.wind_exponent != 1 && self.wind_exponent != 3 {
            return Err(Error::invariant(key("wind_exponent"), "must be 1 or 3"));
        }
        Ok(())
    }
}

/// Photovoltaic output for irradiance in kW/m^2.
pub fn solar_power(irradiance: f64, p: &RenewableParams) -> Result<f64> {
    if !(irradiance >= 0.0) {
        return Err(Error::Domain(format!("negative irradiance {irradiance}")));
    }
    Ok(p.eta_solar * p.a_cell * p.n_cpp * p.n_pan * irradiance)
}

/// Wind-farm output for a hub-height speed in m/s. Zero outside the open
/// interval `(w_in, w_out)`.
pub fn wind_power(speed: f64, p: &RenewableParams) -> Result<f64> {
    if !(speed >= 0.0) {
        return Err(Error::Domain(format!("negative wind speed {speed}")));
    }
    if speed <= p.w_in || speed >= p.w_out {
        return Ok(0.0);
    }
    // W -> kW
    Ok(0.5 * p.eta_wind * p.rho * p.a_tur * p.n_tur * speed.powi(p.wind_exponent as i32) / 1000.0)
}
