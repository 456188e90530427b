//! Proportional multi-unit storage dispatch during grid outages and the
//! priority-ordered lost-load indicator.
//!
//! Charging and discharging are split across units with fixed proportions
//!
//! ```text
//! p_c[i] = (B[i] DoD[i] / e[i]) / sum_j (B[j] DoD[j] / e[j])
//! p_d[i] = (B[i] DoD[i] e[i])   / sum_j (B[j] DoD[j] e[j])
//! ```
//!
//! A charge input `E` adds `p_c[i] e[i] E` to unit `i`; delivering `E` to the
//! load draws `p_d[i] E / e[i]` from it. Both changes are proportional to
//! `B[i] DoD[i]`, so every unit's usable state of charge stays equal and all
//! units hit their limits together.
//!
//! Each hour, renewable output serves load first. The deepest prefix of
//! facilities (by priority) whose net deficit the fleet can cover without any
//! unit dropping below `B_min = B (1 - DoD)` is served; the remaining
//! facilities lose their critical load for that hour. Surplus renewable energy
//! charges the fleet and anything above full capacity is spilled.

use serde::Serialize;

use crate::config::{Config, FacilityClass, SiteData, HOURS_PER_YEAR};
use crate::error::{Error, Result};
use crate::outage::Outage;
use crate::renewables::{solar_power, wind_power};

const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StorageUnit {
    /// Installed capacity B, kWh.
    pub capacity: f64,
    pub dod: f64,
    pub efficiency: f64,
    /// Stored energy Q, kWh.
    pub energy: f64,
}

impl StorageUnit {
    pub fn full(capacity: f64, dod: f64, efficiency: f64) -> Self {
        StorageUnit {
            capacity,
            dod,
            efficiency,
            energy: capacity,
        }
    }

    pub fn min_energy(&self) -> f64 {
        self.capacity * (1.0 - self.dod)
    }

    pub fn usable_span(&self) -> f64 {
        self.capacity * self.dod
    }

    fn active(&self) -> bool {
        self.capacity > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proportions {
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StorageFleet {
    pub units: Vec<StorageUnit>,
}

impl StorageFleet {
    pub fn new(units: Vec<StorageUnit>) -> Self {
        StorageFleet { units }
    }

    /// Fully charged fleet with the characteristics of decision `period`.
    pub fn for_period(config: &Config, period: usize, capacities: &[f64]) -> Self {
        let units = config
            .storage
            .iter()
            .zip(capacities)
            .map(|(tech, &cap)| StorageUnit::full(cap, tech.dod(period), tech.efficiency(period)))
            .collect();
        StorageFleet { units }
    }

    pub fn is_empty(&self) -> bool {
        !self.units.iter().any(StorageUnit::active)
    }

    pub fn recharge_full(&mut self) {
        for u in &mut self.units {
            u.energy = u.capacity;
        }
    }

    /// Charge/discharge split. Units without capacity get zero share.
    pub fn proportions(&self) -> Result<Proportions> {
        let charge_w: Vec<f64> = self
            .units
            .iter()
            .map(|u| if u.active() { u.usable_span() / u.efficiency } else { 0.0 })
            .collect();
        let discharge_w: Vec<f64> = self
            .units
            .iter()
            .map(|u| if u.active() { u.usable_span() * u.efficiency } else { 0.0 })
            .collect();
        let cs: f64 = charge_w.iter().sum();
        let ds: f64 = discharge_w.iter().sum();
        if !(cs > 0.0 && ds > 0.0) {
            return Err(Error::Domain("fleet has no installed capacity".into()));
        }
        Ok(Proportions {
            charge: charge_w.iter().map(|w| w / cs).collect(),
            discharge: discharge_w.iter().map(|w| w / ds).collect(),
        })
    }

    /// Energy the fleet can still deliver to the load.
    pub fn deliverable(&self) -> f64 {
        self.units
            .iter()
            .map(|u| (u.energy - u.min_energy()).max(0.0) * u.efficiency)
            .sum()
    }

    fn can_deliver(&self, p: &Proportions, delivered: f64) -> bool {
        self.units.iter().zip(&p.discharge).all(|(u, &share)| {
            !u.active()
                || u.energy - share * delivered / u.efficiency
                    >= u.min_energy() - FEASIBILITY_TOL * u.capacity.max(1.0)
        })
    }

    fn deliver(&mut self, p: &Proportions, delivered: f64) {
        for (u, &share) in self.units.iter_mut().zip(&p.discharge) {
            if u.active() {
                u.energy = (u.energy - share * delivered / u.efficiency).max(u.min_energy());
            }
        }
    }

    /// Stores `input` kWh of charging energy; overflow is spilled.
    pub fn absorb(&mut self, p: &Proportions, input: f64) {
        for (u, &share) in self.units.iter_mut().zip(&p.charge) {
            if u.active() {
                u.energy = (u.energy + share * u.efficiency * input).min(u.capacity);
            }
        }
    }

    /// Delivers `delivered` kWh if every unit stays at or above its minimum.
    pub fn try_deliver(&mut self, delivered: f64) -> Result<bool> {
        let p = self.proportions()?;
        if self.can_deliver(&p, delivered) {
            self.deliver(&p, delivered);
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

pub fn proportions(fleet: &StorageFleet) -> Result<Proportions> {
    fleet.proportions()
}

#[derive(Debug, Clone)]
struct FacilityLoad {
    name: String,
    voll: f64,
    critical_factor: f64,
    count: f64,
    profile: Vec<f64>,
}

/// Everything the hourly outage simulation needs: facilities in priority
/// order, renewable production for each hour of the year and load growth.
#[derive(Debug, Clone)]
pub struct Microgrid {
    facilities: Vec<FacilityLoad>,
    renewable: Vec<f64>,
    growth: f64,
}

impl Microgrid {
    pub fn new(config: &Config, site: &SiteData) -> Result<Self> {
        let p = &config.planning.renewables;
        let renewable = (0..HOURS_PER_YEAR)
            .map(|h| Ok(solar_power(site.irradiance.at(h), p)? + wind_power(site.wind.at(h), p)?))
            .collect::<Result<Vec<_>>>()?;
        let facilities = config
            .facilities_by_priority()
            .into_iter()
            .map(|f| {
                let profile = site.demand.get(&f.unit_profile_id).ok_or_else(|| {
                    Error::schema("series.demand", format!("missing profile `{}`", f.unit_profile_id))
                })?;
                Ok(FacilityLoad::new(&f, profile.values().to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Microgrid {
            facilities,
            renewable,
            growth: config.planning.demand_growth_rate,
        })
    }

    /// Builds a grid from explicit hourly vectors (one year each).
    pub fn from_parts(
        facilities: &[(FacilityClass, Vec<f64>)],
        renewable: Vec<f64>,
        growth: f64,
    ) -> Result<Self> {
        if renewable.len() != HOURS_PER_YEAR {
            return Err(Error::invariant("renewable", "expected one year of hourly values"));
        }
        let mut facilities: Vec<_> = facilities.to_vec();
        facilities.sort_by_key(|(f, _)| f.priority_rank);
        let facilities = facilities
            .into_iter()
            .map(|(f, profile)| {
                if profile.len() != HOURS_PER_YEAR {
                    return Err(Error::invariant("profile", "expected one year of hourly values"));
                }
                Ok(FacilityLoad::new(&f, profile))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Microgrid {
            facilities,
            renewable,
            growth,
        })
    }

    pub fn facility_count(&self) -> usize {
        self.facilities.len()
    }

    pub fn facility_name(&self, g: usize) -> &str {
        &self.facilities[g].name
    }

    pub fn voll(&self, g: usize) -> f64 {
        self.facilities[g].voll
    }

    /// Total demand D(t, g) of priority slot `g` (0 = most critical).
    pub fn demand(&self, g: usize, hour: usize) -> f64 {
        let f = &self.facilities[g];
        let year = (hour / HOURS_PER_YEAR) as i32;
        f.count * f.profile[hour % HOURS_PER_YEAR] * (1.0 + self.growth).powi(year)
    }

    /// C_p(g) D(t, g).
    pub fn critical_demand(&self, g: usize, hour: usize) -> f64 {
        self.facilities[g].critical_factor * self.demand(g, hour)
    }

    pub fn renewable(&self, hour: usize) -> f64 {
        self.renewable[hour % HOURS_PER_YEAR]
    }

    /// Replaces the renewable production with zeros.
    pub fn without_renewables(mut self) -> Self {
        self.renewable.iter_mut().for_each(|r| *r = 0.0);
        self
    }
}

impl FacilityLoad {
    fn new(f: &FacilityClass, profile: Vec<f64>) -> Self {
        FacilityLoad {
            name: f.name.clone(),
            voll: f.voll,
            critical_factor: f.critical_factor,
            count: f.count as f64,
            profile,
        }
    }
}

/// Service outcome for one outage hour.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HourService {
    pub hour: usize,
    /// Facilities `0..served_depth` (priority order) were served.
    pub served_depth: usize,
    /// Critical energy lost per facility, kWh (zero where served).
    pub lost_kwh: Vec<f64>,
}

impl HourService {
    pub fn served(&self, g: usize) -> bool {
        g < self.served_depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutageServiceResult {
    pub hours: Vec<HourService>,
    pub final_fleet: StorageFleet,
}

impl OutageServiceResult {
    pub fn lost_cost(&self, grid: &Microgrid) -> f64 {
        self.hours
            .iter()
            .flat_map(|h| h.lost_kwh.iter().enumerate())
            .map(|(g, kwh)| grid.voll(g) * kwh)
            .sum()
    }
}

/// Hourly recursion shared by the recording and the cost-only paths.
fn run_outage(
    fleet: &mut StorageFleet,
    outage: &Outage,
    grid: &Microgrid,
    mut on_hour: impl FnMut(usize, usize),
) {
    let props = fleet.proportions().ok();
    let n = grid.facility_count();
    let mut cumulative = vec![0.0; n + 1];
    for hour in outage.hours() {
        let renewable = grid.renewable(hour);
        for g in 0..n {
            cumulative[g + 1] = cumulative[g] + grid.critical_demand(g, hour);
        }
        let feasible = |fleet: &StorageFleet, depth: usize| {
            let deficit = cumulative[depth] - renewable;
            deficit <= 0.0 || props.as_ref().is_some_and(|p| fleet.can_deliver(p, deficit))
        };
        // Feasibility is monotone in depth since demand only accumulates.
        let depth = (0..=n).rev().find(|&d| feasible(fleet, d)).unwrap_or(0);
        let net = renewable - cumulative[depth];
        if let Some(p) = &props {
            if net >= 0.0 {
                fleet.absorb(p, net);
            } else {
                fleet.deliver(p, -net);
            }
        }
        on_hour(hour, depth);
    }
}

/// Simulates one outage starting from `fleet` (normally fully charged) and
/// records per-hour service.
pub fn simulate_outage(fleet: &StorageFleet, outage: &Outage, grid: &Microgrid) -> OutageServiceResult {
    let mut state = fleet.clone();
    let mut hours = Vec::with_capacity(outage.duration_hours);
    run_outage(&mut state, outage, grid, |hour, depth| {
        let lost_kwh = (0..grid.facility_count())
            .map(|g| if g < depth { 0.0 } else { grid.critical_demand(g, hour) })
            .collect();
        hours.push(HourService {
            hour,
            served_depth: depth,
            lost_kwh,
        });
    });
    OutageServiceResult {
        hours,
        final_fleet: state,
    }
}

/// Lost-load cost of a single outage without building the hourly record.
pub fn outage_cost(fleet: &StorageFleet, outage: &Outage, grid: &Microgrid) -> f64 {
    let mut state = fleet.clone();
    let mut cost = 0.0;
    run_outage(&mut state, outage, grid, |hour, depth| {
        for g in depth..grid.facility_count() {
            cost += grid.voll(g) * grid.critical_demand(g, hour);
        }
    });
    cost
}

/// Sum over facilities and lost hours of `VOLL * C_p * D`.
pub fn lost_load_cost(results: &[OutageServiceResult], grid: &Microgrid) -> f64 {
    results.iter().map(|r| r.lost_cost(grid)).sum()
}

/// Lost-load cost of a sequence of outages, resetting the fleet to full
/// charge before each one.
pub fn trace_cost<'a>(fleet: &StorageFleet, outages: impl IntoIterator<Item = &'a Outage>, grid: &Microgrid) -> f64 {
    let mut full = fleet.clone();
    full.recharge_full();
    outages.into_iter().map(|o| outage_cost(&full, o, grid)).sum()
}

/// Per-outage service log rows: `outage_id,hour,facility,served,lost_kwh`.
pub fn service_log_csv(results: &[OutageServiceResult], grid: &Microgrid) -> String {
    let mut out = String::from("outage_id,hour,facility,served,lost_kwh\n");
    for (id, r) in results.iter().enumerate() {
        for h in &r.hours {
            for (g, lost) in h.lost_kwh.iter().enumerate() {
                out.push_str(&format!(
                    "{id},{},{},{},{lost}\n",
                    h.hour,
                    grid.facility_name(g),
                    u8::from(h.served(g))
                ));
            }
        }
    }
    out
}
