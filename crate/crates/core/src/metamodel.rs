//! Synthetic outage-cost dataset and the random-forest surrogate trained on
//! it.
//!
//! Each observation picks a decision period and installed capacities, runs
//! `trials` independent simulations of that period (fresh outage trace per
//! trial, fleet reset to full charge before every outage) and stores the
//! mean lost-load cost.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CapacitySampling, Config, MetamodelParams};
use crate::dispatch::{trace_cost, Microgrid, StorageFleet};
use crate::error::{Error, Result};
use crate::forest::{r_squared, train_test_split, ForestMeta, RegressionForest, TreeParams};
use crate::outage::{OutageModel, OutageTrace};
use crate::rng::{self, tag};

/// Expected lost-load cost of one decision period given installed
/// capacities (kWh per unit, in configuration order).
pub trait OutageCostModel: Send + Sync {
    fn outage_cost(&self, period: usize, capacities: &[f64]) -> f64;
}

impl OutageCostModel for RegressionForest {
    fn outage_cost(&self, period: usize, capacities: &[f64]) -> f64 {
        let mut x = Vec::with_capacity(capacities.len() + 1);
        x.push(period as f64);
        x.extend_from_slice(capacities);
        self.predict(&x)
    }
}

/// Same value everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantCost(pub f64);

impl OutageCostModel for ConstantCost {
    fn outage_cost(&self, _period: usize, _capacities: &[f64]) -> f64 {
        self.0
    }
}

/// Explicit lookup table keyed by `(period, capacities in whole kWh)`,
/// with a fallback for missing keys.
#[derive(Debug, Clone, Default)]
pub struct CostTable {
    entries: HashMap<(usize, Vec<u64>), f64>,
    pub fallback: f64,
}

impl CostTable {
    pub fn new(fallback: f64) -> Self {
        CostTable {
            entries: HashMap::new(),
            fallback,
        }
    }

    pub fn insert(&mut self, period: usize, capacities: &[f64], cost: f64) {
        self.entries.insert((period, Self::key(capacities)), cost);
    }

    fn key(capacities: &[f64]) -> Vec<u64> {
        capacities.iter().map(|c| c.round() as u64).collect()
    }
}

impl OutageCostModel for CostTable {
    fn outage_cost(&self, period: usize, capacities: &[f64]) -> f64 {
        self.entries
            .get(&(period, Self::key(capacities)))
            .copied()
            .unwrap_or(self.fallback)
    }
}

impl<F> OutageCostModel for F
where
    F: Fn(usize, &[f64]) -> f64 + Send + Sync,
{
    fn outage_cost(&self, period: usize, capacities: &[f64]) -> f64 {
        self(period, capacities)
    }
}

pub fn predict_outage_cost(model: &dyn OutageCostModel, period: usize, capacities: &[f64]) -> f64 {
    model.outage_cost(period, capacities)
}

/// Predicted cost at each of `capacities` for `unit`, every other unit empty.
pub fn capacity_sweep(
    model: &dyn OutageCostModel,
    period: usize,
    unit: usize,
    units: usize,
    capacities: &[f64],
) -> Vec<f64> {
    capacities
        .iter()
        .map(|&c| {
            let mut caps = vec![0.0; units];
            caps[unit] = c;
            model.outage_cost(period, &caps)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub period: usize,
    pub capacities: Vec<f64>,
    pub cost: f64,
}

impl DatasetRow {
    pub fn features(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.capacities.len() + 1);
        x.push(self.period as f64);
        x.extend_from_slice(&self.capacities);
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub trials: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub rows: Vec<DatasetRow>,
    pub units: usize,
    pub meta: DatasetMeta,
}

impl SyntheticDataset {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k");
        for i in 1..=self.units {
            write!(out, ",cap_{i}").unwrap();
        }
        out.push_str(",cost\n");
        for row in &self.rows {
            write!(out, "{}", row.period).unwrap();
            for c in &row.capacities {
                write!(out, ",{c}").unwrap();
            }
            writeln!(out, ",{}", row.cost).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str, meta: DatasetMeta) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset".into()))?
            .split(',')
            .collect();
        let units = header.len().saturating_sub(2);
        let expected: Vec<String> = std::iter::once("k".to_string())
            .chain((1..=units).map(|i| format!("cap_{i}")))
            .chain(std::iter::once("cost".to_string()))
            .collect();
        if units == 0 || header != expected {
            return Err(Error::schema("dataset header", format!("expected {}", expected.join(","))));
        }
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != units + 2 {
                    return Err(Error::Parse(format!("dataset row {i}: wrong column count")));
                }
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("dataset row {i}: bad number `{s}`")))
                };
                let period = fields[0]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("dataset row {i}: bad period")))?;
                Ok(DatasetRow {
                    period,
                    capacities: fields[1..=units].iter().map(|s| num(s)).collect::<Result<_>>()?,
                    cost: num(fields[units + 1])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SyntheticDataset { rows, units, meta })
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(DatasetRow::features).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cost).collect()
    }
}

/// Capacity values one unit can hold after at most `max_purchases` buys.
pub fn per_unit_reachable(levels: &[u32], max_purchases: usize) -> Vec<u32> {
    let mut reach: BTreeSet<u32> = BTreeSet::from([0]);
    for _ in 0..max_purchases {
        let next: Vec<u32> = reach.iter().flat_map(|&c| levels.iter().map(move |&l| c + l)).collect();
        reach.extend(next);
    }
    reach.into_iter().collect()
}

fn sample_capacities<R: Rng + ?Sized>(config: &Config, period: usize, rng: &mut R) -> Vec<f64> {
    let levels = config.levels();
    let units = config.units();
    match config.metamodel.capacity_sampling {
        CapacitySampling::Joint => {
            let mut caps = vec![0.0; units];
            let purchases = rng.random_range(0..=period);
            for _ in 0..purchases {
                let unit = rng.random_range(0..units);
                caps[unit] += levels[rng.random_range(0..levels.len())] as f64;
            }
            caps
        }
        CapacitySampling::PerUnit => {
            let values = per_unit_reachable(levels, config.planning.horizon_periods - 1);
            (0..units)
                .map(|_| values[rng.random_range(0..values.len())] as f64)
                .collect()
        }
    }
}

/// Lost-load cost of one period for one outage trace. The trace covers the
/// period's years and is placed on the absolute clock internally.
pub fn period_cost(config: &Config, grid: &Microgrid, period: usize, capacities: &[f64], trace: &OutageTrace) -> f64 {
    let fleet = StorageFleet::for_period(config, period, capacities);
    let offset = config.planning.period_start_hour(period);
    let shifted: Vec<_> = trace
        .outages
        .iter()
        .map(|o| crate::outage::Outage {
            start_hour: o.start_hour + offset,
            duration_hours: o.duration_hours,
        })
        .collect();
    trace_cost(&fleet, &shifted, grid)
}

/// Mean period cost over `trials` traces drawn from streams `(row, trial)`.
pub fn mean_period_cost(
    config: &Config,
    grid: &Microgrid,
    period: usize,
    capacities: &[f64],
    trials: usize,
    seed: u64,
    row: u64,
) -> Result<f64> {
    let p = &config.planning;
    let model = OutageModel::new(p.saifi, p.caidi, p.years_per_period)?;
    let total: f64 = (0..trials)
        .map(|t| {
            let trace = model.sample(&mut rng::stream2(seed, tag::DATASET_TRIAL, row, t as u64));
            period_cost(config, grid, period, capacities, &trace)
        })
        .sum();
    Ok(total / trials as f64)
}

/// Builds an `observations`-row dataset. Rows are generated in parallel;
/// each row and trial owns its stream so the output is order-independent.
pub fn generate_dataset(
    config: &Config,
    grid: &Microgrid,
    observations: usize,
    trials: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if observations < 1 || trials < 1 {
        return Err(Error::Domain("observations and trials must be >= 1".into()));
    }
    let horizon = config.planning.horizon_periods;
    let rows = (0..observations as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, tag::DATASET_ROW, r);
            let period = rng.random_range(1..=horizon);
            let capacities = sample_capacities(config, period, &mut rng);
            let cost = mean_period_cost(config, grid, period, &capacities, trials, seed, r)?;
            Ok(DatasetRow {
                period,
                capacities,
                cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        rows,
        units: config.units(),
        meta: DatasetMeta {
            trials,
            seed,
            config_hash: config.hash(),
        },
    })
}

impl From<&MetamodelParams> for TreeParams {
    fn from(m: &MetamodelParams) -> Self {
        TreeParams {
            max_depth: m.max_depth,
            min_leaf: m.min_leaf,
            max_features: m.max_features,
            bootstrap: m.bootstrap,
        }
    }
}

/// Splits the dataset, grows the forest on the training part and records
/// the held-out R^2.
pub fn train_forest(
    dataset: &SyntheticDataset,
    num_trees: usize,
    train_fraction: f64,
    params: TreeParams,
    seed: u64,
) -> Result<RegressionForest> {
    if dataset.rows.len() < 10 {
        return Err(Error::Domain(format!(
            "need at least 10 observations to train, got {}",
            dataset.rows.len()
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain("train fraction must lie in (0, 1)".into()));
    }
    let x = dataset.features();
    let y = dataset.targets();
    let (train, test) = train_test_split(x.len(), train_fraction, seed);
    let trees = RegressionForest::fit(&x, &y, &train, num_trees, params, seed)?;
    let train_targets = train.iter().map(|&i| y[i]);
    let target_min = train_targets.clone().fold(f64::INFINITY, f64::min);
    let target_max = train_targets.fold(f64::NEG_INFINITY, f64::max);
    let mut forest = RegressionForest {
        meta: ForestMeta {
            config_hash: dataset.meta.config_hash.clone(),
            seed,
            n_features: dataset.units + 1,
            feature_names: std::iter::once("k".to_string())
                .chain((1..=dataset.units).map(|i| format!("cap_{i}")))
                .collect(),
            params,
            train_rows: train.len(),
            test_rows: test.len(),
            test_r2: None,
            target_min,
            target_max,
        },
        trees,
    };
    let actual: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    let predicted: Vec<f64> = test.iter().map(|&i| forest.predict(&x[i])).collect();
    forest.meta.test_r2 = r_squared(&actual, &predicted);
    Ok(forest)
}

pub fn save_forest(forest: &RegressionForest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, forest.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_forest(path: impl AsRef<Path>) -> Result<RegressionForest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RegressionForest::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reachable_per_unit_values() {
        assert_eq!(per_unit_reachable(&[300, 1000, 3000], 1), vec![0, 300, 1000, 3000]);
        let three = per_unit_reachable(&[300, 1000, 3000], 3);
        assert_eq!(three.len(), 19);
        assert_eq!(*three.last().unwrap(), 9000);
        assert!(three.contains(&2300) && three.contains(&7000));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let ds = SyntheticDataset {
            rows: vec![
                DatasetRow { period: 1, capacities: vec![0.0, 300.0], cost: 1_234.567_890_123 },
                DatasetRow { period: 4, capacities: vec![3000.0, 0.0], cost: 0.1 + 0.2 },
            ],
            units: 2,
            meta: DatasetMeta { trials: 3, seed: 1, config_hash: "x".into() },
        };
        let csv = ds.to_csv();
        assert!(csv.starts_with("k,cap_1,cap_2,cost\n"));
        assert_eq!(SyntheticDataset::from_csv(&csv, ds.meta.clone()).unwrap(), ds);
        assert!(SyntheticDataset::from_csv("k,cost\n1,2\n", ds.meta.clone()).is_err());
    }

    #[test]
    fn cost_table_falls_back() {
        let mut t = CostTable::new(-1.0);
        t.insert(2, &[300.0], 5.0);
        assert_eq!(t.outage_cost(2, &[300.0]), 5.0);
        assert_eq!(t.outage_cost(3, &[300.0]), -1.0);
    }

    #[test]
    fn too_small_dataset_is_rejected() {
        let ds = SyntheticDataset {
            rows: vec![DatasetRow { period: 1, capacities: vec![0.0], cost: 1.0 }; 5],
            units: 1,
            meta: DatasetMeta { trials: 1, seed: 1, config_hash: String::new() },
        };
        assert!(train_forest(&ds, 3, 0.8, TreeParams::default(), 1).is_err());
    }
}
