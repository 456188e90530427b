//! Scenario-conditioned policy extraction and Monte Carlo evaluation on the
//! full simulator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dispatch::{trace_cost, Microgrid, StorageFleet};
use crate::error::{Error, Result};
use crate::mdp::{MdpAction, MdpEnv, MdpState};
use crate::outage::OutageModel;
use crate::qlearn::QTable;
use crate::rng::{self, tag};
use crate::stats;

/// A realized price path: for every unit, whether its price advances at
/// each of the `K-1` period boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceScenario {
    pub id: String,
    #[serde(default)]
    pub note: String,
    /// Keyed by storage unit name.
    pub advances: BTreeMap<String, Vec<bool>>,
}

impl PriceScenario {
    /// Advance decisions at boundary `k -> k+1`, in configuration unit order.
    pub fn moves(&self, config: &Config, period: usize) -> Vec<bool> {
        config
            .storage
            .iter()
            .map(|t| self.advances[&t.name][period - 1])
            .collect()
    }

    pub fn validate(&self, config: &Config) -> Result<()> {
        let boundaries = config.planning.horizon_periods - 1;
        for t in &config.storage {
            let path = self.advances.get(&t.name).ok_or_else(|| {
                Error::schema(
                    format!("scenarios.{}.advances", self.id),
                    format!("missing unit `{}`", t.name),
                )
            })?;
            if path.len() != boundaries {
                return Err(Error::schema(
                    format!("scenarios.{}.advances.{}", self.id, t.name),
                    format!("expected {boundaries} booleans, got {}", path.len()),
                ));
            }
        }
        if let Some(extra) = self.advances.keys().find(|k| !config.storage.iter().any(|t| &t.name == *k)) {
            return Err(Error::schema(
                format!("scenarios.{}.advances", self.id),
                format!("unknown unit `{extra}`"),
            ));
        }
        Ok(())
    }

    /// Every price advances at every boundary.
    pub fn all_advance(config: &Config) -> Self {
        let b = config.planning.horizon_periods - 1;
        PriceScenario {
            id: "all-advance".into(),
            note: String::new(),
            advances: config.storage.iter().map(|t| (t.name.clone(), vec![true; b])).collect(),
        }
    }
}

pub const SCENARIO_PRESETS_JSON: &str = include_str!("../../../configs/scenarios.json");

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenarios: BTreeMap<String, ScenarioBody>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioBody {
    #[serde(default)]
    note: String,
    advances: BTreeMap<String, Vec<bool>>,
}

/// Parses a scenario file (`{"scenarios": {id: {note, advances}}}`).
pub fn parse_scenarios(text: &str) -> Result<Vec<PriceScenario>> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario file: {e}")))?;
    let mut out: Vec<PriceScenario> = file
        .scenarios
        .into_iter()
        .map(|(id, b)| PriceScenario {
            id,
            note: b.note,
            advances: b.advances,
        })
        .collect();
    out.sort_by_key(|s| natural_key(&s.id));
    Ok(out)
}

fn natural_key(id: &str) -> (u64, String) {
    (id.parse().unwrap_or(u64::MAX), id.to_string())
}

/// The eight case-study scenarios.
pub fn scenario_presets() -> Vec<PriceScenario> {
    parse_scenarios(SCENARIO_PRESETS_JSON).expect("bundled scenario file parses")
}

pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<PriceScenario>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenarios(&text)
}

/// Greedy action over the actions tried at least once, lowest index on
/// ties. `None` when the state was never visited.
pub fn greedy_visited(table: &QTable, state: &MdpState) -> Option<(usize, f64, u64)> {
    let e = table.get(state)?;
    let mut best: Option<(usize, f64, u64)> = None;
    for (i, (&q, &v)) in e.q.iter().zip(&e.visits).enumerate() {
        if v > 0 && best.is_none_or(|(_, bq, _)| q > bq) {
            best = Some((i, q, v));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStep {
    pub period: usize,
    pub action: MdpAction,
    pub action_index: usize,
    /// $/kWh per unit at decision time.
    pub prices: Vec<f64>,
    pub price_idx: Vec<usize>,
    /// Installed kWh per unit after the action.
    pub capacity: Vec<u32>,
    /// `None` when the state was never visited.
    pub q_value: Option<f64>,
    pub state_visits: u64,
    pub action_visits: u64,
    /// The state was never visited or none of its actions were tried.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub scenario: String,
    pub units: Vec<String>,
    pub levels: Vec<u32>,
    pub steps: Vec<PolicyStep>,
}

impl PolicyReport {
    pub fn total_capacity(&self) -> u64 {
        self.steps
            .last()
            .map_or(0, |s| s.capacity.iter().map(|&c| c as u64).sum())
    }

    pub fn actions(&self) -> Vec<MdpAction> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// True when some step buys `unit`.
    pub fn buys(&self, unit: usize) -> bool {
        self.steps
            .iter()
            .any(|s| matches!(s.action, MdpAction::Buy { unit: u, .. } if u == unit))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,action_unit,action_level_kwh");
        for u in &self.units {
            write!(out, ",price_{u}").unwrap();
        }
        for u in &self.units {
            write!(out, ",cum_capacity_{u}").unwrap();
        }
        out.push_str(",total_capacity,q_value,state_visits,action_visits,low_confidence\n");
        for s in &self.steps {
            let (unit, level) = match s.action {
                MdpAction::NoOp => ("none".to_string(), 0),
                MdpAction::Buy { unit, level } => (self.units[unit].clone(), self.levels[level]),
            };
            write!(out, "{},{unit},{level}", s.period).unwrap();
            for p in &s.prices {
                write!(out, ",{p}").unwrap();
            }
            for c in &s.capacity {
                write!(out, ",{c}").unwrap();
            }
            let total: u64 = s.capacity.iter().map(|&c| c as u64).sum();
            writeln!(
                out,
                ",{total},{},{},{},{}",
                s.q_value.map_or(String::new(), |q| q.to_string()),
                s.state_visits,
                s.action_visits,
                u8::from(s.low_confidence)
            )
            .unwrap();
        }
        out
    }
}

/// Greedy walk through the table along the scenario's price path.
pub fn extract_policy(table: &QTable, env: &MdpEnv, scenario: &PriceScenario) -> Result<PolicyReport> {
    let config = env.config();
    scenario.validate(config)?;
    if table.num_actions() != env.num_actions() {
        return Err(Error::Incompatible(format!(
            "q-table has {} actions, environment has {}",
            table.num_actions(),
            env.num_actions()
        )));
    }
    let mut state = env.initial_state();
    let mut steps = Vec::with_capacity(env.horizon());
    loop {
        let greedy = greedy_visited(table, &state);
        let (index, q_value, action_visits) = match greedy {
            Some((i, q, v)) => (i, Some(q), v),
            None => (0, None, 0),
        };
        let action = env.action(index)?;
        steps.push(PolicyStep {
            period: state.period,
            action,
            action_index: index,
            prices: config
                .storage
                .iter()
                .zip(&state.price_idx)
                .map(|(t, &i)| t.price(i))
                .collect(),
            price_idx: state.price_idx.clone(),
            capacity: env.post_action_capacity(&state, action),
            q_value,
            state_visits: table.get(&state).map_or(0, |e| e.total_visits()),
            action_visits,
            low_confidence: greedy.is_none(),
        });
        if state.period == env.horizon() {
            break;
        }
        let moves = scenario.moves(config, state.period);
        state = env.transition_with(&state, action, &moves)?;
    }
    Ok(PolicyReport {
        scenario: scenario.id.clone(),
        units: config.storage.iter().map(|t| t.name.clone()).collect(),
        levels: config.levels().to_vec(),
        steps,
    })
}

/// Decision rule evaluated on the true simulator.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Never buys anything.
    Never,
    /// Fixed action per period. With `price_idx`, purchases are charged at
    /// those price indices; otherwise at the sampled market prices.
    OpenLoop {
        actions: Vec<MdpAction>,
        price_idx: Option<Vec<Vec<usize>>>,
    },
    /// Greedy over visited actions of a trained table, reacting to sampled
    /// prices; unvisited states do nothing.
    Greedy(QTable),
}

impl Policy {
    /// The report's actions at the report's prices.
    pub fn from_report(report: &PolicyReport) -> Self {
        Policy::OpenLoop {
            actions: report.actions(),
            price_idx: Some(report.steps.iter().map(|s| s.price_idx.clone()).collect()),
        }
    }

    fn act(&self, env: &MdpEnv, state: &MdpState) -> Result<MdpAction> {
        match self {
            Policy::Never => Ok(MdpAction::NoOp),
            Policy::OpenLoop { actions, .. } => Ok(actions[state.period - 1]),
            Policy::Greedy(table) => match greedy_visited(table, state) {
                Some((i, _, _)) => env.action(i),
                None => Ok(MdpAction::NoOp),
            },
        }
    }
}

/// Cost of one simulated horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HorizonCost {
    pub investment: f64,
    pub lost_load: f64,
}

impl HorizonCost {
    pub fn total(&self) -> f64 {
        self.investment + self.lost_load
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub trials: usize,
    pub mean: f64,
    pub stderr: f64,
    pub mean_investment: f64,
    pub mean_lost_load: f64,
    pub costs: Vec<f64>,
}

/// Simulates one horizon for trial `trial`. The outage trace and the price
/// path come from per-trial streams shared by every policy.
pub fn simulate_horizon(
    policy: &Policy,
    env: &MdpEnv,
    grid: &Microgrid,
    seed: u64,
    trial: u64,
) -> Result<HorizonCost> {
    let config = env.config();
    let p = &config.planning;
    if let Policy::OpenLoop { actions, price_idx } = policy {
        if actions.len() != env.horizon() || price_idx.as_ref().is_some_and(|v| v.len() != env.horizon()) {
            return Err(Error::Domain(format!("open-loop policy needs {} periods", env.horizon())));
        }
    }
    let trace = OutageModel::new(p.saifi, p.caidi, p.horizon_years())?
        .sample(&mut rng::stream(seed, tag::EVAL_OUTAGE, trial));
    let mut price_rng = rng::stream(seed, tag::EVAL_PRICE, trial);
    let mut state = env.initial_state();
    let mut cost = HorizonCost {
        investment: 0.0,
        lost_load: 0.0,
    };
    loop {
        let k = state.period;
        let action = policy.act(env, &state)?;
        let charged = match policy {
            Policy::OpenLoop {
                price_idx: Some(idx), ..
            } => MdpState {
                price_idx: idx[k - 1].clone(),
                ..state.clone()
            },
            _ => state.clone(),
        };
        cost.investment += env.investment_cost(&charged, action);
        let caps: Vec<f64> = env.post_action_capacity(&state, action).iter().map(|&c| c as f64).collect();
        let fleet = StorageFleet::for_period(config, k, &caps);
        let start = p.period_start_hour(k);
        let end = start + p.years_per_period * crate::config::HOURS_PER_YEAR;
        cost.lost_load += trace_cost(&fleet, trace.starting_in(start, end), grid);
        if k == env.horizon() {
            break;
        }
        state = env.transition(&state, action, &mut price_rng)?;
    }
    Ok(cost)
}

pub fn evaluate_policy(policy: &Policy, env: &MdpEnv, grid: &Microgrid, trials: usize, seed: u64) -> Result<Evaluation> {
    if trials < 1 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    let results = (0..trials as u64)
        .into_par_iter()
        .map(|t| simulate_horizon(policy, env, grid, seed, t))
        .collect::<Result<Vec<_>>>()?;
    let costs: Vec<f64> = results.iter().map(HorizonCost::total).collect();
    Ok(Evaluation {
        trials,
        mean: stats::mean(&costs),
        stderr: stats::std_error(&costs),
        mean_investment: results.iter().map(|r| r.investment).sum::<f64>() / trials as f64,
        mean_lost_load: results.iter().map(|r| r.lost_load).sum::<f64>() / trials as f64,
        costs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedPolicy {
    pub rank: usize,
    pub name: String,
    pub evaluation: Evaluation,
}

/// Evaluates every policy on the same traces and ranks by mean cost
/// (name breaks exact ties).
pub fn compare_policies(
    policies: &[(String, Policy)],
    env: &MdpEnv,
    grid: &Microgrid,
    trials: usize,
    seed: u64,
) -> Result<Vec<RankedPolicy>> {
    let mut rows = policies
        .iter()
        .map(|(name, p)| {
            Ok(RankedPolicy {
                rank: 0,
                name: name.clone(),
                evaluation: evaluate_policy(p, env, grid, trials, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.evaluation
            .mean
            .total_cmp(&b.evaluation.mean)
            .then_with(|| a.name.cmp(&b.name))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(rows)
}

pub fn ranking_csv(rows: &[RankedPolicy]) -> String {
    let mut out = String::from("rank,policy,mean_cost,stderr,mean_investment,mean_lost_load\n");
    for r in rows {
        let e = &r.evaluation;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.rank, r.name, e.mean, e.stderr, e.mean_investment, e.mean_lost_load
        )
        .unwrap();
    }
    out
}
