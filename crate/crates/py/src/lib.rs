//! Python bindings: configs, outage simulation, the surrogate pipeline,
//! Q-learning, policy extraction and evaluation.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use storex_core::config::{load_config, Config, SiteData};
use storex_core::dispatch::Microgrid;
use storex_core::forest::RegressionForest;
use storex_core::mdp::{count_states_paper as paper_count, MdpEnv, MdpState};
use storex_core::metamodel::{self, DatasetMeta, OutageCostModel, SyntheticDataset};
use storex_core::outage::OutageModel;
use storex_core::policy::{self as pol, Policy, PolicyReport};
use storex_core::qlearn::{self, QTable, TrainParams};
use storex_core::rng::{self, tag};
use storex_core::{finance, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Validated planner configuration.
#[pyclass(name = "Config", module = "storex", frozen)]
pub struct PyConfig {
    inner: Config,
    base: PathBuf,
}

impl PyConfig {
    fn grid(&self) -> PyResult<Microgrid> {
        let site = SiteData::resolve(&self.inner.series, &self.base).map_err(to_py)?;
        Microgrid::new(&self.inner, &site).map_err(to_py)
    }

    fn env(&self) -> PyResult<MdpEnv> {
        MdpEnv::new(&self.inner).map_err(to_py)
    }
}

#[pymethods]
impl PyConfig {
    /// The bundled case-study configuration.
    #[staticmethod]
    fn case_study() -> Self {
        PyConfig {
            inner: Config::case_study(),
            base: PathBuf::from("."),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = load_config(&path).map_err(to_py)?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok(PyConfig { inner, base })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: Config::from_json(text).map_err(to_py)?,
            base: PathBuf::from("."),
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn units(&self) -> Vec<String> {
        self.inner.storage.iter().map(|t| t.name.clone()).collect()
    }

    #[getter]
    fn levels(&self) -> Vec<u32> {
        self.inner.levels().to_vec()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.planning.horizon_periods
    }

    fn __repr__(&self) -> String {
        format!("Config(units={:?}, seed={}, hash={})", self.units(), self.inner.seed, &self.inner.hash()[..12])
    }
}

/// Annual payment amortizing `principal` over `lifetime` years.
#[pyfunction]
fn annuity(principal: f64, rate: f64, lifetime: u32) -> PyResult<f64> {
    finance::annuity(principal, rate, lifetime).map_err(to_py)
}

/// One outage trace as `(start_hour, duration_hours)` pairs.
#[pyfunction]
#[pyo3(signature = (saifi, caidi, years, seed, index=0))]
fn simulate_outages(saifi: f64, caidi: f64, years: usize, seed: u64, index: u64) -> PyResult<Vec<(usize, usize)>> {
    let model = OutageModel::new(saifi, caidi, years).map_err(to_py)?;
    let trace = model.sample(&mut rng::stream(seed, tag::OUTAGE_CHECK, index));
    Ok(trace.outages.iter().map(|o| (o.start_hour, o.duration_hours)).collect())
}

/// State count with every price index up to the period and every capacity sum allowed.
#[pyfunction]
fn count_states_paper(horizon: usize, units: usize, levels: usize) -> u64 {
    paper_count(horizon, units, levels)
}

#[pyclass(name = "Dataset", module = "storex", frozen)]
pub struct PyDataset {
    inner: SyntheticDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_csv(text: &str, trials: usize, seed: u64, config_hash: String) -> PyResult<Self> {
        let meta = DatasetMeta {
            trials,
            seed,
            config_hash,
        };
        Ok(PyDataset {
            inner: SyntheticDataset::from_csv(text, meta).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    /// `(period, capacities, cost)` per row.
    fn rows(&self) -> Vec<(usize, Vec<f64>, f64)> {
        self.inner
            .rows
            .iter()
            .map(|r| (r.period, r.capacities.clone(), r.cost))
            .collect()
    }
}

/// Simulated outage-cost observations over sampled fleets.
#[pyfunction]
#[pyo3(signature = (config, observations=None, trials=None, seed=None))]
fn generate_dataset(
    py: Python<'_>,
    config: &PyConfig,
    observations: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
) -> PyResult<PyDataset> {
    let c = &config.inner;
    let grid = config.grid()?;
    let observations = observations.unwrap_or(c.metamodel.observations);
    let trials = trials.unwrap_or(c.metamodel.trials);
    let seed = seed.unwrap_or(c.seed);
    let inner = py
        .detach(|| metamodel::generate_dataset(c, &grid, observations, trials, seed))
        .map_err(to_py)?;
    Ok(PyDataset { inner })
}

/// Regression-forest surrogate of the per-period outage cost.
#[pyclass(name = "Forest", module = "storex", frozen)]
pub struct PyForest {
    inner: RegressionForest,
}

#[pymethods]
impl PyForest {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyForest {
            inner: RegressionForest::from_json(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyForest {
            inner: metamodel::load_forest(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        metamodel::save_forest(&self.inner, path).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn predict(&self, period: usize, capacities: Vec<f64>) -> PyResult<f64> {
        if capacities.len() + 1 != self.inner.meta.n_features {
            return Err(PyValueError::new_err(format!(
                "expected {} capacities",
                self.inner.meta.n_features - 1
            )));
        }
        Ok(self.inner.outage_cost(period, &capacities))
    }

    /// Predicted cost as one unit's capacity varies, the others empty.
    fn sweep(&self, period: usize, unit: usize, capacities: Vec<f64>) -> PyResult<Vec<f64>> {
        let units = self.inner.meta.n_features - 1;
        if unit >= units {
            return Err(PyValueError::new_err(format!("unit must be below {units}")));
        }
        Ok(metamodel::capacity_sweep(&self.inner, period, unit, units, &capacities))
    }

    #[getter]
    fn test_r2(&self) -> Option<f64> {
        self.inner.meta.test_r2
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.meta.config_hash.clone()
    }

    #[getter]
    fn num_trees(&self) -> usize {
        self.inner.trees.len()
    }
}

#[pyfunction]
#[pyo3(signature = (dataset, config, trees=None, train_fraction=None, seed=None))]
fn train_forest(
    py: Python<'_>,
    dataset: &PyDataset,
    config: &PyConfig,
    trees: Option<usize>,
    train_fraction: Option<f64>,
    seed: Option<u64>,
) -> PyResult<PyForest> {
    let m = &config.inner.metamodel;
    let trees = trees.unwrap_or(m.trees);
    let fraction = train_fraction.unwrap_or(m.train_fraction);
    let seed = seed.unwrap_or(dataset.inner.meta.seed);
    let inner = py
        .detach(|| metamodel::train_forest(&dataset.inner, trees, fraction, m.into(), seed))
        .map_err(to_py)?;
    Ok(PyForest { inner })
}

/// The expansion decision process. States are `"k,p1..,c1.."` keys.
#[pyclass(name = "Env", module = "storex", frozen)]
pub struct PyEnv {
    inner: MdpEnv,
}

impl PyEnv {
    fn state(&self, key: &str) -> PyResult<MdpState> {
        let s = MdpState::decode(key, self.inner.units()).map_err(to_py)?;
        self.inner.check_state(&s).map_err(to_py)?;
        Ok(s)
    }
}

#[pymethods]
impl PyEnv {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(PyEnv { inner: config.env()? })
    }

    fn initial_state(&self) -> String {
        self.inner.initial_state().encode()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    /// `(unit, level_index)` for a purchase, `None` for the no-op.
    fn action(&self, index: usize) -> PyResult<Option<(usize, usize)>> {
        Ok(match self.inner.action(index).map_err(to_py)? {
            storex_core::mdp::MdpAction::NoOp => None,
            storex_core::mdp::MdpAction::Buy { unit, level } => Some((unit, level)),
        })
    }

    fn investment_cost(&self, state: &str, action: usize) -> PyResult<f64> {
        let s = self.state(state)?;
        let a = self.inner.action(action).map_err(to_py)?;
        Ok(self.inner.investment_cost(&s, a))
    }

    fn reward(&self, state: &str, action: usize, forest: &PyForest) -> PyResult<f64> {
        let s = self.state(state)?;
        let a = self.inner.action(action).map_err(to_py)?;
        self.inner.reward(&s, a, &forest.inner).map_err(to_py)
    }

    /// Next state given one advance flag per unit.
    fn transition(&self, state: &str, action: usize, advances: Vec<bool>) -> PyResult<String> {
        let s = self.state(state)?;
        let a = self.inner.action(action).map_err(to_py)?;
        Ok(self.inner.transition_with(&s, a, &advances).map_err(to_py)?.encode())
    }

    fn count_states_paper(&self) -> u64 {
        self.inner.count_states_paper()
    }

    fn count_states_reachable(&self) -> u64 {
        self.inner.count_states_reachable()
    }
}

#[pyclass(name = "QTable", module = "storex", frozen)]
pub struct PyQTable {
    inner: QTable,
}

#[pymethods]
impl PyQTable {
    /// Loads a table and the config stored in its header.
    #[staticmethod]
    #[pyo3(signature = (path, expected_hash=None))]
    fn load(path: PathBuf, expected_hash: Option<String>) -> PyResult<(PyQTable, PyConfig)> {
        let (inner, config) = QTable::load(&path, expected_hash.as_deref()).map_err(to_py)?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok((PyQTable { inner }, PyConfig { inner: config, base }))
    }

    fn save(&self, path: PathBuf, config: &PyConfig) -> PyResult<()> {
        self.inner.save(&config.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn episodes(&self) -> u64 {
        self.inner.meta.episodes
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.meta.config_hash.clone()
    }

    fn q_values(&self, state: &str) -> PyResult<Option<Vec<f64>>> {
        let units = self.inner.states().next().map_or(0, |(s, _)| s.capacity.len());
        let s = MdpState::decode(state, units).map_err(to_py)?;
        Ok(self.inner.get(&s).map(|e| e.q.clone()))
    }

    fn visits(&self, state: &str) -> PyResult<Option<Vec<u64>>> {
        let units = self.inner.states().next().map_or(0, |(s, _)| s.capacity.len());
        let s = MdpState::decode(state, units).map_err(to_py)?;
        Ok(self.inner.get(&s).map(|e| e.visits.clone()))
    }
}

/// Runs Q-learning; returns the table and the 100 batch means of the
/// learning curve.
#[pyfunction]
#[pyo3(signature = (config, forest, episodes=None, gamma=None, seed=None))]
fn train(
    py: Python<'_>,
    config: &PyConfig,
    forest: &PyForest,
    episodes: Option<u64>,
    gamma: Option<f64>,
    seed: Option<u64>,
) -> PyResult<(PyQTable, Vec<f64>)> {
    if forest.inner.meta.config_hash != config.inner.hash() {
        return Err(PyValueError::new_err("forest was trained for a different config"));
    }
    let env = config.env()?;
    let mut params = TrainParams::from_config(&config.inner);
    params.episodes = episodes.unwrap_or(params.episodes);
    params.gamma = gamma.unwrap_or(params.gamma);
    params.seed = seed.unwrap_or(params.seed);
    let (inner, curve) = py.detach(|| qlearn::train(&env, &forest.inner, params)).map_err(to_py)?;
    Ok((PyQTable { inner }, curve.batch_means))
}

#[pyclass(name = "PolicyReport", module = "storex", frozen)]
pub struct PyPolicyReport {
    inner: PolicyReport,
}

#[pymethods]
impl PyPolicyReport {
    #[getter]
    fn scenario(&self) -> String {
        self.inner.scenario.clone()
    }

    /// Action index per period.
    #[getter]
    fn actions(&self) -> Vec<usize> {
        self.inner.steps.iter().map(|s| s.action_index).collect()
    }

    #[getter]
    fn total_capacity(&self) -> u64 {
        self.inner.total_capacity()
    }

    #[getter]
    fn low_confidence(&self) -> Vec<bool> {
        self.inner.steps.iter().map(|s| s.low_confidence).collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("report serializes")
    }
}

/// Ids of the bundled price scenarios.
#[pyfunction]
fn scenario_ids() -> Vec<String> {
    pol::scenario_presets().into_iter().map(|s| s.id).collect()
}

#[pyfunction]
fn extract_policy(qtable: &PyQTable, config: &PyConfig, scenario: &str) -> PyResult<PyPolicyReport> {
    let presets = pol::scenario_presets();
    let sc = presets
        .iter()
        .find(|s| s.id == scenario)
        .ok_or_else(|| PyValueError::new_err(format!("unknown scenario `{scenario}`")))?;
    let env = config.env()?;
    Ok(PyPolicyReport {
        inner: pol::extract_policy(&qtable.inner, &env, sc).map_err(to_py)?,
    })
}

fn as_policy(obj: &Bound<'_, PyAny>) -> PyResult<Policy> {
    if let Ok(s) = obj.extract::<String>() {
        return match s.as_str() {
            "never" => Ok(Policy::Never),
            other => Err(PyValueError::new_err(format!("unknown policy `{other}`"))),
        };
    }
    if let Ok(r) = obj.cast::<PyPolicyReport>() {
        return Ok(Policy::from_report(&r.get().inner));
    }
    if let Ok(q) = obj.cast::<PyQTable>() {
        return Ok(Policy::Greedy(q.get().inner.clone()));
    }
    Err(PyValueError::new_err("policy must be \"never\", a PolicyReport or a QTable"))
}

/// Mean total cost over simulated horizons on the full simulator.
#[pyfunction]
#[pyo3(signature = (config, policy, trials=1000, seed=None))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &PyConfig,
    policy: &Bound<'py, PyAny>,
    trials: usize,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let policy = as_policy(policy)?;
    let grid = config.grid()?;
    let env = config.env()?;
    let seed = seed.unwrap_or(config.inner.seed);
    let e = py
        .detach(|| pol::evaluate_policy(&policy, &env, &grid, trials, seed))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("trials", e.trials)?;
    d.set_item("mean", e.mean)?;
    d.set_item("stderr", e.stderr)?;
    d.set_item("mean_investment", e.mean_investment)?;
    d.set_item("mean_lost_load", e.mean_lost_load)?;
    Ok(d)
}

/// Ranks named policies under common random numbers; returns
/// `(rank, name, mean, stderr)` rows, best first.
#[pyfunction]
#[pyo3(signature = (config, policies, trials=1000, seed=None))]
fn compare_policies(
    py: Python<'_>,
    config: &PyConfig,
    policies: Vec<(String, Bound<'_, PyAny>)>,
    trials: usize,
    seed: Option<u64>,
) -> PyResult<Vec<(usize, String, f64, f64)>> {
    let named = policies
        .iter()
        .map(|(n, p)| Ok((n.clone(), as_policy(p)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let grid = config.grid()?;
    let env = config.env()?;
    let seed = seed.unwrap_or(config.inner.seed);
    let ranked = py
        .detach(|| pol::compare_policies(&named, &env, &grid, trials, seed))
        .map_err(to_py)?;
    Ok(ranked
        .into_iter()
        .map(|r| (r.rank, r.name, r.evaluation.mean, r.evaluation.stderr))
        .collect())
}

#[pymodule]
mod storex {
    #[pymodule_export]
    use super::{
        annuity, compare_policies, count_states_paper, evaluate, extract_policy, generate_dataset, scenario_ids,
        simulate_outages, train, train_forest, PyConfig, PyDataset, PyEnv, PyForest, PyPolicyReport, PyQTable,
    };
}
