//! Planning configuration, storage and facility definitions, and hourly
//! time-series ingestion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::renewables::RenewableParams;
use crate::rng;

pub const HOURS_PER_YEAR: usize = 8760;

/// One storage technology with its per-period characteristic schedules.
///
/// All schedules are indexed by decision period (entry 0 is period 1). The
/// price schedule holds the states of the price chain, the remaining
/// schedules are deterministic functions of the period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageTechnology {
    pub name: String,
    /// $/kWh
    pub price_schedule: Vec<f64>,
    pub advance_prob_schedule: Vec<f64>,
    /// years
    pub lifetime_schedule: Vec<u32>,
    pub efficiency_schedule: Vec<f64>,
    pub dod_schedule: Vec<f64>,
}

impl StorageTechnology {
    /// Price of price state `idx` (1-based).
    pub fn price(&self, idx: usize) -> f64 {
        self.price_schedule[idx - 1]
    }

    /// Probability that the price advances at the end of `period` (1-based).
    pub fn advance_prob(&self, period: usize) -> f64 {
        self.advance_prob_schedule[period - 1]
    }

    pub fn lifetime(&self, period: usize) -> u32 {
        self.lifetime_schedule[period - 1]
    }

    pub fn efficiency(&self, period: usize) -> f64 {
        self.efficiency_schedule[period - 1]
    }

    pub fn dod(&self, period: usize) -> f64 {
        self.dod_schedule[period - 1]
    }

    fn validate(&self, index: usize, periods: usize) -> Result<()> {
        let key = |field: &str| format!("storage[{index}].{field}");
        let lengths = [
            ("price_schedule", self.price_schedule.len()),
            ("advance_prob_schedule", self.advance_prob_schedule.len()),
            ("lifetime_schedule", self.lifetime_schedule.len()),
            ("efficiency_schedule", self.efficiency_schedule.len()),
            ("dod_schedule", self.dod_schedule.len()),
        ];
        for (field, len) in lengths {
            if len != periods {
                return Err(Error::schema(
                    key(field),
                    format!("expected {periods} entries (one per period), found {len}"),
                ));
            }
        }
        for (j, &p) in self.price_schedule.iter().enumerate() {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::invariant(key("price_schedule"), format!("entry {j} must be > 0")));
            }
            if j > 0 && p > self.price_schedule[j - 1] {
                return Err(Error::invariant(
                    key("price_schedule"),
                    "prices must be non-increasing along the schedule",
                ));
            }
        }
        for &p in &self.advance_prob_schedule {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invariant(key("advance_prob_schedule"), "probabilities must lie in [0, 1]"));
            }
        }
        if self.advance_prob_schedule[periods - 1] != 0.0 {
            return Err(Error::invariant(
                key("advance_prob_schedule"),
                "the final-period advance probability must be 0",
            ));
        }
        if self.lifetime_schedule.iter().any(|&l| l < 1) {
            return Err(Error::invariant(key("lifetime_schedule"), "lifetimes must be >= 1 year"));
        }
        if self.efficiency_schedule.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::invariant(key("efficiency_schedule"), "efficiencies must lie in (0, 1]"));
        }
        if self.dod_schedule.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
            return Err(Error::invariant(key("dod_schedule"), "depth of discharge must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// A prioritized class of identical facilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacilityClass {
    pub name: String,
    pub count: u32,
    /// $/kWh
    pub voll: f64,
    pub critical_factor: f64,
    /// 1 is the most critical class.
    pub priority_rank: u32,
    /// Key into `series.demand`.
    pub unit_profile_id: String,
}

/// Two-point linear decay bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayRange {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlParams {
    pub gamma: f64,
    pub episodes: u64,
    pub alpha: DecayRange,
    pub epsilon: DecayRange,
}

/// How dataset rows pick installed capacities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacitySampling {
    /// Draw a purchase count `m` uniformly from `0..=k`, then `m` uniform
    /// (unit, level) purchases. Matches the post-action capacities the
    /// decision process can reach at period `k`.
    Joint,
    /// Each unit independently and uniformly from its per-unit reachable
    /// capacity values.
    PerUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetamodelParams {
    pub observations: usize,
    pub trials: usize,
    pub trees: usize,
    pub train_fraction: f64,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` means ceil(d / 3).
    #[serde(default)]
    pub max_features: Option<usize>,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    #[serde(default = "default_sampling")]
    pub capacity_sampling: CapacitySampling,
}

fn default_min_leaf() -> usize {
    2
}

fn default_true() -> bool {
    true
}

fn default_sampling() -> CapacitySampling {
    CapacitySampling::Joint
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningConfig {
    pub horizon_periods: usize,
    pub years_per_period: usize,
    pub interest_rate: f64,
    pub demand_growth_rate: f64,
    /// hours per interruption
    pub caidi: f64,
    /// interruptions per year
    pub saifi: f64,
    pub renewables: RenewableParams,
    /// kWh, strictly increasing.
    pub expansion_levels: Vec<u32>,
}

impl PlanningConfig {
    pub fn horizon_years(&self) -> usize {
        self.horizon_periods * self.years_per_period
    }

    pub fn horizon_hours(&self) -> usize {
        self.horizon_years() * HOURS_PER_YEAR
    }

    /// First absolute hour of `period` (1-based).
    pub fn period_start_hour(&self, period: usize) -> usize {
        (period - 1) * self.years_per_period * HOURS_PER_YEAR
    }
}

/// Synthetic-profile parameters used when no data file is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeriesSource {
    File(String),
    Synthetic { synthetic: SynthSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSources {
    pub demand: BTreeMap<String, SeriesSource>,
    pub irradiance: SeriesSource,
    pub wind: SeriesSource,
}

/// The complete, validated configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub planning: PlanningConfig,
    pub storage: Vec<StorageTechnology>,
    pub facilities: Vec<FacilityClass>,
    pub series: SeriesSources,
    pub rl: RlParams,
    pub metamodel: MetamodelParams,
    pub seed: u64,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Config = serde_json::from_str(text).map_err(classify_json_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn units(&self) -> usize {
        self.storage.len()
    }

    pub fn levels(&self) -> &[u32] {
        &self.planning.expansion_levels
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Facilities sorted by priority, most critical first.
    pub fn facilities_by_priority(&self) -> Vec<FacilityClass> {
        let mut out = self.facilities.clone();
        out.sort_by_key(|f| f.priority_rank);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.planning;
        if p.horizon_periods < 1 {
            return Err(Error::invariant("planning.horizon_periods", "must be >= 1"));
        }
        if p.years_per_period < 1 {
            return Err(Error::invariant("planning.years_per_period", "must be >= 1"));
        }
        if !(p.interest_rate >= 0.0 && p.interest_rate.is_finite()) {
            return Err(Error::invariant("planning.interest_rate", "must be >= 0"));
        }
        if !(p.demand_growth_rate > -1.0 && p.demand_growth_rate.is_finite()) {
            return Err(Error::invariant("planning.demand_growth_rate", "must be > -1"));
        }
        if !(p.caidi > 1.0) {
            return Err(Error::invariant("planning.caidi", "must exceed 1 hour"));
        }
        if !(p.saifi > 0.0) {
            return Err(Error::invariant("planning.saifi", "must be > 0"));
        }
        p.renewables.validate()?;
        if p.expansion_levels.is_empty() {
            return Err(Error::schema("planning.expansion_levels", "at least one level is required"));
        }
        if p.expansion_levels[0] == 0 || p.expansion_levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invariant(
                "planning.expansion_levels",
                "levels must be positive and strictly increasing",
            ));
        }

        if self.storage.is_empty() {
            return Err(Error::schema("storage", "at least one storage technology is required"));
        }
        for (i, s) in self.storage.iter().enumerate() {
            s.validate(i, p.horizon_periods)?;
        }

        if self.facilities.is_empty() {
            return Err(Error::schema("facilities", "at least one facility class is required"));
        }
        let mut ranks: Vec<u32> = self.facilities.iter().map(|f| f.priority_rank).collect();
        ranks.sort_unstable();
        if ranks.iter().enumerate().any(|(i, &r)| r as usize != i + 1) {
            return Err(Error::invariant(
                "facilities.priority_rank",
                "ranks must be a permutation of 1..=|facilities|",
            ));
        }
        for (i, f) in self.facilities.iter().enumerate() {
            if f.count == 0 {
                return Err(Error::invariant(format!("facilities[{i}].count"), "must be positive"));
            }
            if !(f.voll > 0.0) {
                return Err(Error::invariant(format!("facilities[{i}].voll"), "must be > 0"));
            }
            if !(f.critical_factor > 0.0 && f.critical_factor <= 1.0) {
                return Err(Error::invariant(
                    format!("facilities[{i}].critical_factor"),
                    "must lie in (0, 1]",
                ));
            }
            if !self.series.demand.contains_key(&f.unit_profile_id) {
                return Err(Error::schema(
                    format!("facilities[{i}].unit_profile_id"),
                    format!("no demand series named `{}`", f.unit_profile_id),
                ));
            }
        }

        let rl = &self.rl;
        if !(rl.gamma > 0.0 && rl.gamma <= 1.0) {
            return Err(Error::invariant("rl.gamma", "must lie in (0, 1]"));
        }
        for (key, range) in [("rl.alpha", rl.alpha), ("rl.epsilon", rl.epsilon)] {
            if !(0.0..=1.0).contains(&range.start) || !(0.0..=1.0).contains(&range.end) {
                return Err(Error::invariant(key, "bounds must lie in [0, 1]"));
            }
        }

        let m = &self.metamodel;
        if m.observations < 1 || m.trials < 1 || m.trees < 1 {
            return Err(Error::invariant(
                "metamodel",
                "observations, trials and trees must all be >= 1",
            ));
        }
        if !(m.train_fraction > 0.0 && m.train_fraction < 1.0) {
            return Err(Error::invariant("metamodel.train_fraction", "must lie in (0, 1)"));
        }
        if m.min_leaf < 1 {
            return Err(Error::invariant("metamodel.min_leaf", "must be >= 1"));
        }
        Ok(())
    }

    /// The case-study configuration with synthetic weather and load.
    pub fn case_study() -> Self {
        Config::from_json(CASE_STUDY_JSON).expect("built-in case study is valid")
    }
}

/// Built-in copy of `configs/case_study.json`.
pub const CASE_STUDY_JSON: &str = include_str!("../../../configs/case_study.json");

fn classify_json_error(e: serde_json::Error) -> Error {
    let msg = e.to_string();
    let quoted = msg.split('`').nth(1).map(str::to_owned);
    if msg.contains("unknown field") || msg.contains("missing field") || msg.contains("unknown variant") {
        Error::schema(quoted.unwrap_or_default(), msg)
    } else if e.is_data() {
        Error::schema("", msg)
    } else {
        Error::Parse(msg)
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Config::from_json(&text)
}

pub fn save_config(config: &Config, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, config.to_json()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Demand,
    Irradiance,
    Wind,
}

impl SeriesKind {
    fn tag(self) -> &'static str {
        match self {
            SeriesKind::Demand => "synth-demand",
            SeriesKind::Irradiance => "synth-irradiance",
            SeriesKind::Wind => "synth-wind",
        }
    }
}

/// One non-leap year of hourly samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    kind: SeriesKind,
    values: Vec<f64>,
}

impl HourlySeries {
    pub fn new(kind: SeriesKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != HOURS_PER_YEAR {
            return Err(Error::invariant(
                "series",
                format!("expected {HOURS_PER_YEAR} hourly values, found {}", values.len()),
            ));
        }
        if let Some(h) = values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invariant("series", format!("hour {h}: value must be finite and >= 0")));
        }
        Ok(HourlySeries { kind, values })
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at an absolute hour, wrapping by year.
    pub fn at(&self, hour: usize) -> f64 {
        self.values[hour % HOURS_PER_YEAR]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / HOURS_PER_YEAR as f64
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for v in &mut self.values {
            *v *= factor;
        }
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("hour,value\n");
        for (h, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{h},{v}\n"));
        }
        out
    }
}

/// Reads a `hour,value` CSV with exactly 8760 data rows.
pub fn load_series(path: impl AsRef<Path>, kind: SeriesKind) -> Result<HourlySeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series(&text, kind)
}

pub fn parse_series(text: &str, kind: SeriesKind) -> Result<HourlySeries> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(str::trim) {
        Some("hour,value") => {}
        other => {
            return Err(Error::schema(
                "header",
                format!("expected `hour,value`, found {:?}", other.unwrap_or("")),
            ))
        }
    }
    let mut values = Vec::with_capacity(HOURS_PER_YEAR);
    for (row, line) in lines.enumerate() {
        let (hour, value) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("row {row}: expected two columns")))?;
        let hour: usize = hour
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {row}: bad hour `{hour}`")))?;
        if hour != row {
            return Err(Error::schema("hour", format!("row {row} has hour {hour}")));
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {row}: bad value `{value}`")))?;
        values.push(value);
    }
    HourlySeries::new(kind, values)
}

/// Deterministic synthetic year: seasonal and diurnal sinusoids with bounded
/// noise. Demand has unit mean (approximately), irradiance peaks near
/// 0.95 kW/m^2 and is zero at night, wind averages about 6 m/s.
pub fn synth_profile(kind: SeriesKind, seed: u64) -> HourlySeries {
    use std::f64::consts::PI;
    let mut rng = rng::stream(seed, kind.tag(), 0);
    let mut ar = 0.0_f64;
    let values = (0..HOURS_PER_YEAR)
        .map(|h| {
            let day = (h / 24) as f64;
            let hod = (h % 24) as f64;
            let season = 2.0 * PI * day / 365.0;
            match kind {
                SeriesKind::Demand => {
                    let diurnal = 0.3 * (2.0 * PI * (hod - 8.0) / 24.0).sin();
                    let seasonal = 0.15 * (season - 2.0 * PI * 200.0 / 365.0).cos();
                    let noise = rng.random_range(-0.1..=0.1);
                    (1.0 + diurnal + seasonal + noise).max(0.0)
                }
                SeriesKind::Irradiance => {
                    // Day length swings 9h..15h around the equinoxes.
                    let shift = (season - 2.0 * PI * 80.0 / 365.0).sin();
                    let day_length = 12.0 + 3.0 * shift;
                    let sunrise = 12.0 - day_length / 2.0;
                    let t = hod + 0.5 - sunrise;
                    let cloud = rng.random_range(0.5..=1.0);
                    if t > 0.0 && t < day_length {
                        let peak = 0.75 + 0.2 * shift;
                        peak * (PI * t / day_length).sin() * cloud
                    } else {
                        0.0
                    }
                }
                SeriesKind::Wind => {
                    ar = 0.8 * ar + rng.random_range(-0.5..=0.5);
                    let seasonal = 1.5 * (season - 2.0 * PI * 15.0 / 365.0).cos();
                    let diurnal = 0.8 * (2.0 * PI * (hod - 14.0) / 24.0).sin();
                    (6.0 + seasonal + diurnal + ar).max(0.0)
                }
            }
        })
        .collect();
    HourlySeries { kind, values }
}

/// Demand of a whole facility class at absolute hour `hour`:
/// `count * unit_profile[hour mod 8760] * (1 + growth)^year`.
pub fn demand_at(
    facility: &FacilityClass,
    unit_profile: &HourlySeries,
    hour: usize,
    growth: f64,
    horizon_hours: usize,
) -> Result<f64> {
    if hour >= horizon_hours {
        return Err(Error::Domain(format!(
            "hour {hour} is outside the {horizon_hours}-hour horizon"
        )));
    }
    let year = (hour / HOURS_PER_YEAR) as i32;
    Ok(facility.count as f64 * unit_profile.at(hour) * (1.0 + growth).powi(year))
}

/// Hourly inputs resolved from the `series` section.
#[derive(Debug, Clone)]
pub struct SiteData {
    pub irradiance: HourlySeries,
    pub wind: HourlySeries,
    pub demand: BTreeMap<String, HourlySeries>,
}

impl SiteData {
    /// Loads files relative to `base_dir` and synthesizes the rest.
    pub fn resolve(sources: &SeriesSources, base_dir: &Path) -> Result<Self> {
        let get = |source: &SeriesSource, kind: SeriesKind| -> Result<HourlySeries> {
            match source {
                SeriesSource::File(p) => {
                    let path = PathBuf::from(p);
                    let path = if path.is_absolute() { path } else { base_dir.join(path) };
                    load_series(path, kind)
                }
                SeriesSource::Synthetic { synthetic } => {
                    Ok(synth_profile(kind, synthetic.seed).scaled(synthetic.scale))
                }
            }
        };
        let demand = sources
            .demand
            .iter()
            .map(|(id, src)| Ok((id.clone(), get(src, SeriesKind::Demand)?)))
            .collect::<Result<_>>()?;
        Ok(SiteData {
            irradiance: get(&sources.irradiance, SeriesKind::Irradiance)?,
            wind: get(&sources.wind, SeriesKind::Wind)?,
            demand,
        })
    }

    /// Synthetic-only resolution; file sources are an error.
    pub fn synthetic(sources: &SeriesSources) -> Result<Self> {
        Self::resolve(sources, Path::new("."))
    }
}
