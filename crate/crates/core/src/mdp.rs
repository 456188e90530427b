//! Finite-horizon expansion MDP: states, actions, price transitions and the
//! surrogate-based reward.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::finance::annuity;
use crate::metamodel::OutageCostModel;

/// `(k, price index per unit, installed kWh per unit)`. Period and price
/// indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MdpState {
    pub period: usize,
    pub price_idx: Vec<usize>,
    pub capacity: Vec<u32>,
}

impl MdpState {
    /// Comma-joined `k,p1..pN,c1..cN`.
    pub fn encode(&self) -> String {
        let mut parts = vec![self.period.to_string()];
        parts.extend(self.price_idx.iter().map(|p| p.to_string()));
        parts.extend(self.capacity.iter().map(|c| c.to_string()));
        parts.join(",")
    }

    pub fn decode(key: &str, units: usize) -> Result<Self> {
        let nums = key
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parse(format!("bad state key `{key}`")))?;
        if nums.len() != 1 + 2 * units {
            return Err(Error::Parse(format!(
                "state key `{key}` has {} fields, expected {}",
                nums.len(),
                1 + 2 * units
            )));
        }
        Ok(MdpState {
            period: nums[0] as usize,
            price_idx: nums[1..=units].iter().map(|&p| p as usize).collect(),
            capacity: nums[units + 1..]
                .iter()
                .map(|&c| u32::try_from(c).map_err(|_| Error::Parse(format!("capacity overflow in `{key}`"))))
                .collect::<Result<_>>()?,
        })
    }

    pub fn capacities_f64(&self) -> Vec<f64> {
        self.capacity.iter().map(|&c| c as f64).collect()
    }

    pub fn total_capacity(&self) -> u64 {
        self.capacity.iter().map(|&c| c as u64).sum()
    }
}

impl fmt::Display for MdpState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Action 0 is "do nothing"; the rest buy one level of one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MdpAction {
    NoOp,
    /// Zero-based unit and level indices.
    Buy { unit: usize, level: usize },
}

impl MdpAction {
    pub fn index(&self, levels: usize) -> usize {
        match *self {
            MdpAction::NoOp => 0,
            MdpAction::Buy { unit, level } => 1 + unit * levels + level,
        }
    }

    pub fn from_index(index: usize, units: usize, levels: usize) -> Result<Self> {
        match index {
            0 => Ok(MdpAction::NoOp),
            i if i <= units * levels => Ok(MdpAction::Buy {
                unit: (i - 1) / levels,
                level: (i - 1) % levels,
            }),
            _ => Err(Error::Domain(format!("action index {index} out of range"))),
        }
    }
}

/// Investment-cost table and transition parameters derived from a config.
#[derive(Debug, Clone)]
pub struct MdpEnv {
    config: Config,
    /// `[unit][level][period-1][price_idx-1]` horizon investment cost.
    invest: Vec<Vec<Vec<Vec<f64>>>>,
}

impl MdpEnv {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let p = &config.planning;
        let k_max = p.horizon_periods;
        let invest = config
            .storage
            .iter()
            .map(|tech| {
                config
                    .levels()
                    .iter()
                    .map(|&level| {
                        (1..=k_max)
                            .map(|k| {
                                (1..=k_max)
                                    .map(|idx| {
                                        let principal = level as f64 * tech.price(idx);
                                        let payment = annuity(principal, p.interest_rate, tech.lifetime(k))?;
                                        Ok(((k_max + 1 - k) * p.years_per_period) as f64 * payment)
                                    })
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MdpEnv {
            config: config.clone(),
            invest,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn units(&self) -> usize {
        self.config.units()
    }

    pub fn levels(&self) -> usize {
        self.config.levels().len()
    }

    pub fn horizon(&self) -> usize {
        self.config.planning.horizon_periods
    }

    pub fn num_actions(&self) -> usize {
        self.units() * self.levels() + 1
    }

    pub fn initial_state(&self) -> MdpState {
        MdpState {
            period: 1,
            price_idx: vec![1; self.units()],
            capacity: vec![0; self.units()],
        }
    }

    /// No-op followed by every `(unit, level)` pair, unit-major.
    pub fn legal_actions(&self, _state: &MdpState) -> Vec<MdpAction> {
        (0..self.num_actions())
            .map(|i| MdpAction::from_index(i, self.units(), self.levels()).expect("in range"))
            .collect()
    }

    pub fn action(&self, index: usize) -> Result<MdpAction> {
        MdpAction::from_index(index, self.units(), self.levels())
    }

    pub fn action_index(&self, action: MdpAction) -> usize {
        action.index(self.levels())
    }

    /// Checks the structural invariants of a state.
    pub fn check_state(&self, s: &MdpState) -> Result<()> {
        let n = self.units();
        if s.price_idx.len() != n || s.capacity.len() != n {
            return Err(Error::invariant("state", format!("`{s}` does not have {n} units")));
        }
        if !(1..=self.horizon()).contains(&s.period) {
            return Err(Error::invariant("state", format!("period out of range in `{s}`")));
        }
        if s.price_idx.iter().any(|&p| p < 1 || p > s.period) {
            return Err(Error::invariant("state", format!("price index exceeds period in `{s}`")));
        }
        if s.total_capacity() > (s.period as u64 - 1) * *self.config.levels().iter().max().unwrap() as u64 {
            return Err(Error::invariant("state", format!("too much capacity for period in `{s}`")));
        }
        Ok(())
    }

    fn check_action(&self, action: MdpAction) -> Result<()> {
        match action {
            MdpAction::Buy { unit, level } if unit >= self.units() || level >= self.levels() => {
                Err(Error::Domain(format!("illegal action {action:?}")))
            }
            _ => Ok(()),
        }
    }

    /// Capacities after applying `action` (the unit is online this period).
    pub fn post_action_capacity(&self, state: &MdpState, action: MdpAction) -> Vec<u32> {
        let mut caps = state.capacity.clone();
        if let MdpAction::Buy { unit, level } = action {
            caps[unit] += self.config.levels()[level];
        }
        caps
    }

    /// Amortized payments over the rest of the horizon for `action` taken in
    /// `state`, at the unit's current price.
    pub fn investment_cost(&self, state: &MdpState, action: MdpAction) -> f64 {
        match action {
            MdpAction::NoOp => 0.0,
            MdpAction::Buy { unit, level } => self.invest[unit][level][state.period - 1][state.price_idx[unit] - 1],
        }
    }

    /// `-investment - surrogate(k, post-action capacities)`.
    pub fn reward(&self, state: &MdpState, action: MdpAction, model: &dyn OutageCostModel) -> Result<f64> {
        self.check_action(action)?;
        let caps: Vec<f64> = self
            .post_action_capacity(state, action)
            .iter()
            .map(|&c| c as f64)
            .collect();
        let outage = model.outage_cost(state.period, &caps).max(0.0);
        Ok(-self.investment_cost(state, action) - outage)
    }

    /// Next state with prices advanced per unit with the period's advance
    /// probability. Exactly one uniform draw is consumed per unit.
    pub fn transition<R: Rng + ?Sized>(&self, state: &MdpState, action: MdpAction, rng: &mut R) -> Result<MdpState> {
        let moves: Vec<bool> = self
            .config
            .storage
            .iter()
            .map(|t| rng.random::<f64>() < t.advance_prob(state.period))
            .collect();
        self.transition_with(state, action, &moves)
    }

    /// Deterministic transition with an explicit advance decision per unit.
    pub fn transition_with(&self, state: &MdpState, action: MdpAction, advances: &[bool]) -> Result<MdpState> {
        self.check_action(action)?;
        if state.period >= self.horizon() {
            return Err(Error::Domain("no transition out of the final period".into()));
        }
        let k_max = self.horizon();
        Ok(MdpState {
            period: state.period + 1,
            price_idx: state
                .price_idx
                .iter()
                .zip(advances)
                .map(|(&p, &adv)| if adv { (p + 1).min(k_max) } else { p })
                .collect(),
            capacity: self.post_action_capacity(state, action),
        })
    }

    /// States for period `k + 1` reachable with positive probability.
    fn successors(&self, state: &MdpState) -> Vec<MdpState> {
        let per_unit: Vec<Vec<bool>> = self
            .config
            .storage
            .iter()
            .map(|t| {
                let p = t.advance_prob(state.period);
                let mut opts = Vec::new();
                if p < 1.0 {
                    opts.push(false);
                }
                if p > 0.0 {
                    opts.push(true);
                }
                opts
            })
            .collect();
        let mut combos: Vec<Vec<bool>> = vec![Vec::new()];
        for opts in &per_unit {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    opts.iter().map(move |&o| {
                        let mut c = c.clone();
                        c.push(o);
                        c
                    })
                })
                .collect();
        }
        let mut out = Vec::new();
        for action in self.legal_actions(state) {
            for moves in &combos {
                out.push(self.transition_with(state, action, moves).expect("legal"));
            }
        }
        out
    }

    /// Reachable states grouped by period, in sorted order.
    pub fn reachable_states(&self) -> Vec<Vec<MdpState>> {
        let mut layers = vec![vec![self.initial_state()]];
        for _ in 1..self.horizon() {
            let next: HashSet<MdpState> = layers
                .last()
                .unwrap()
                .iter()
                .flat_map(|s| self.successors(s))
                .collect();
            let mut next: Vec<_> = next.into_iter().collect();
            next.sort();
            layers.push(next);
        }
        layers
    }

    pub fn count_states_reachable(&self) -> u64 {
        self.reachable_states().iter().map(|l| l.len() as u64).sum()
    }

    /// `sum_k k^N (1 + (k-1)|SL|)^N`: every unit sees `k` price values and
    /// `1 + (k-1)|SL|` capacity values in period `k`.
    pub fn count_states_paper(&self) -> u64 {
        count_states_paper(self.horizon(), self.units(), self.levels())
    }
}

pub fn count_states_paper(horizon: usize, units: usize, levels: usize) -> u64 {
    (1..=horizon as u64)
        .map(|k| k.pow(units as u32) * (1 + (k - 1) * levels as u64).pow(units as u32))
        .sum()
}

/// Optimal (action index, value) per state.
pub type StateValues = std::collections::HashMap<MdpState, (usize, f64)>;

/// Exact backward induction over the reachable states using the model's
/// reward. Returns the optimal expected discounted value of the initial
/// state and the greedy action index per state.
pub fn solve_exact(
    env: &MdpEnv,
    model: &dyn OutageCostModel,
    gamma: f64,
) -> Result<(f64, StateValues)> {
    let layers = env.reachable_states();
    let mut value = StateValues::new();
    let probs: Vec<Vec<f64>> = (1..=env.horizon())
        .map(|k| env.config.storage.iter().map(|t| t.advance_prob(k)).collect())
        .collect();
    let n = env.units();
    for layer in layers.iter().rev() {
        for s in layer {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, action) in env.legal_actions(s).into_iter().enumerate() {
                let mut q = env.reward(s, action, model)?;
                if s.period < env.horizon() {
                    let p = &probs[s.period - 1];
                    let mut future = 0.0;
                    for mask in 0..(1u32 << n) {
                        let moves: Vec<bool> = (0..n).map(|u| mask >> u & 1 == 1).collect();
                        let w: f64 = (0..n).map(|u| if moves[u] { p[u] } else { 1.0 - p[u] }).product();
                        if w > 0.0 {
                            let next = env.transition_with(s, action, &moves)?;
                            future += w * value[&next].1;
                        }
                    }
                    q += gamma * future;
                }
                if q > best.1 {
                    best = (i, q);
                }
            }
            value.insert(s.clone(), best);
        }
    }
    let v0 = value[&env.initial_state()].1;
    Ok((v0, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metamodel::ConstantCost;
    use crate::rng::{stream, tag};
    use approx::assert_relative_eq;

    fn env() -> MdpEnv {
        MdpEnv::new(&Config::case_study()).unwrap()
    }

    #[test]
    fn initial_state_and_prices() {
        let e = env();
        let s = e.initial_state();
        assert_eq!(s.encode(), "1,1,1,1,1,0,0,0,0");
        let prices: Vec<f64> = e.config().storage.iter().map(|t| t.price(1)).collect();
        assert_eq!(prices, vec![420.0, 142.0, 385.0, 3100.0]);
    }

    #[test]
    fn action_indexing_round_trips() {
        let e = env();
        assert_eq!(e.num_actions(), 13);
        assert_eq!(e.legal_actions(&e.initial_state()).len(), 13);
        for i in 0..13 {
            assert_eq!(e.action_index(e.action(i).unwrap()), i);
        }
        assert!(e.action(13).is_err());
        assert_eq!(e.action(1).unwrap(), MdpAction::Buy { unit: 0, level: 0 });
        assert_eq!(e.action(12).unwrap(), MdpAction::Buy { unit: 3, level: 2 });
    }

    #[test]
    fn final_period_still_offers_every_action() {
        let e = env();
        let s = MdpState { period: 4, price_idx: vec![4, 4, 4, 4], capacity: vec![0; 4] };
        assert_eq!(e.legal_actions(&s).len(), 13);
        assert!(e.transition_with(&s, MdpAction::NoOp, &[false; 4]).is_err());
    }

    #[test]
    fn state_key_round_trip() {
        let s = MdpState { period: 3, price_idx: vec![1, 2, 3, 2], capacity: vec![1300, 0, 3000, 0] };
        assert_eq!(s.encode(), "3,1,2,3,2,1300,0,3000,0");
        assert_eq!(MdpState::decode(&s.encode(), 4).unwrap(), s);
        assert!(MdpState::decode("3,1,2", 4).is_err());
        assert!(MdpState::decode("a,1,1,1,1,0,0,0,0", 4).is_err());
    }

    #[test]
    fn paper_state_count() {
        let e = env();
        assert_eq!(e.count_states_paper(), 2_758_578);
        assert_eq!(e.count_states_paper() * e.num_actions() as u64, 35_861_514);
    }

    #[test]
    fn tiny_reachable_count() {
        let mut c = Config::case_study();
        c.storage.truncate(1);
        c.planning.expansion_levels = vec![300];
        c.planning.horizon_periods = 2;
        let t = &mut c.storage[0];
        t.price_schedule.truncate(2);
        t.advance_prob_schedule = vec![0.5, 0.0];
        t.lifetime_schedule.truncate(2);
        t.efficiency_schedule.truncate(2);
        t.dod_schedule.truncate(2);
        let e = MdpEnv::new(&c).unwrap();
        assert_eq!(e.count_states_reachable(), 5);
        assert_eq!(e.count_states_paper(), 5);
    }

    #[test]
    fn li_ion_first_period_purchase_cost() {
        let e = env();
        let s = e.initial_state();
        let buy = MdpAction::Buy { unit: 0, level: 0 };
        // 20 payments of the 126000 $ annuity over 12 years at 2%.
        assert_relative_eq!(e.investment_cost(&s, buy), 238_290.183_489_837_74, max_relative = 1e-12);
        let r = e.reward(&s, buy, &ConstantCost(1000.0)).unwrap();
        assert_relative_eq!(r, -238_290.183_489_837_74 - 1000.0, max_relative = 1e-12);
    }

    #[test]
    fn reward_difference_is_the_investment_under_constant_cost() {
        let e = env();
        let s = MdpState { period: 2, price_idx: vec![2, 1, 2, 1], capacity: vec![300, 0, 0, 0] };
        let model = ConstantCost(5e5);
        let noop = e.reward(&s, MdpAction::NoOp, &model).unwrap();
        for a in e.legal_actions(&s) {
            let r = e.reward(&s, a, &model).unwrap();
            assert_relative_eq!(noop - r, e.investment_cost(&s, a), max_relative = 1e-12);
            assert!(r <= 0.0);
        }
    }

    #[test]
    fn advance_frequency_matches_probability() {
        let e = env();
        let mut rng = stream(7, tag::OUTAGE_CHECK, 0);
        let s = e.initial_state();
        let n = 100_000;
        let mut advanced = 0usize;
        for _ in 0..n {
            advanced += e.transition(&s, MdpAction::NoOp, &mut rng).unwrap().price_idx[0] - 1;
        }
        assert!((advanced as f64 / n as f64 - 0.7).abs() < 0.01);
    }

    #[test]
    fn certain_advances_track_the_period() {
        let mut c = Config::case_study();
        for t in &mut c.storage {
            t.advance_prob_schedule = vec![1.0, 1.0, 1.0, 0.0];
        }
        let e = MdpEnv::new(&c).unwrap();
        let mut rng = stream(8, tag::OUTAGE_CHECK, 0);
        let mut s = e.initial_state();
        while s.period < 4 {
            s = e.transition(&s, e.action(5).unwrap(), &mut rng).unwrap();
            assert!(s.price_idx.iter().all(|&p| p == s.period));
        }
        assert_eq!(s.capacity, vec![0, 3000, 0, 0]);
    }

    #[test]
    fn reachable_states_satisfy_invariants() {
        let e = env();
        let layers = e.reachable_states();
        assert_eq!(layers[0].len(), 1);
        for layer in &layers {
            for s in layer {
                e.check_state(s).unwrap();
            }
        }
        assert!(e.count_states_reachable() < e.count_states_paper());
    }
}
