//! Annuity amortization of storage purchases.

use crate::error::{Error, Result};

/// Equal annual payment that amortizes `principal` over `lifetime` years at
/// annual `rate`: `P r (1+r)^L / ((1+r)^L - 1)`. A zero rate uses the limit
/// `P / L`.
pub fn annuity(principal: f64, rate: f64, lifetime: u32) -> Result<f64> {
    if lifetime < 1 {
        return Err(Error::Domain("lifetime must be at least one year".into()));
    }
    if !(principal >= 0.0) || !(rate >= 0.0) {
        return Err(Error::Domain(format!(
            "principal and rate must be non-negative, got {principal} and {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(principal / lifetime as f64);
    }
    // r (1+r) / ((1+r) - 1) reduces to 1+r; (1+r) - 1 is not exactly r in f64.
    if lifetime == 1 {
        return Ok(principal * (1.0 + rate));
    }
    let growth = (1.0 + rate).powi(lifetime as i32);
    Ok(principal * rate * growth / (growth - 1.0))
}

/// One purchase and its payment stream.
#[derive(Debug, Clone, PartialEq)]
pub struct InvestmentRecord {
    pub unit: usize,
    pub level_kwh: u32,
    pub period: usize,
    pub principal: f64,
    pub annual_payment: f64,
}

impl InvestmentRecord {
    /// Buys `level_kwh` of `unit` at `price` $/kWh in `period`, amortized over
    /// `lifetime` years.
    pub fn new(unit: usize, level_kwh: u32, period: usize, price: f64, rate: f64, lifetime: u32) -> Result<Self> {
        let principal = level_kwh as f64 * price;
        Ok(InvestmentRecord {
            unit,
            level_kwh,
            period,
            principal,
            annual_payment: annuity(principal, rate, lifetime)?,
        })
    }

    /// Payments from the purchase period to the end of the horizon. Payments
    /// continue past the unit lifetime (the unit is never retired).
    pub fn horizon_cost(&self, horizon_periods: usize, years_per_period: usize) -> f64 {
        let remaining = (horizon_periods + 1 - self.period) * years_per_period;
        remaining as f64 * self.annual_payment
    }
}
