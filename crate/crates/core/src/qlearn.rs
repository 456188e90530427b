//! Tabular Q-learning with epsilon-greedy exploration and linearly decaying
//! learning and exploration rates.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Config, DecayRange};
use crate::error::{Error, Result};
use crate::mdp::{MdpAction, MdpEnv, MdpState};
use crate::metamodel::OutageCostModel;
use crate::rng::{self, tag};

/// Linear interpolation from `start` at episode 0 to `end` at `total`,
/// clamped between the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub start: f64,
    pub end: f64,
    pub total: u64,
}

impl DecaySchedule {
    pub fn new(range: DecayRange, total: u64) -> Self {
        DecaySchedule {
            start: range.start,
            end: range.end,
            total,
        }
    }

    pub fn value(&self, episode: u64) -> f64 {
        if self.total == 0 || episode >= self.total {
            return self.end;
        }
        let frac = episode as f64 / self.total as f64;
        let v = self.start + (self.end - self.start) * frac;
        let (lo, hi) = if self.start <= self.end { (self.start, self.end) } else { (self.end, self.start) };
        v.clamp(lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QEntry {
    pub q: Vec<f64>,
    pub visits: Vec<u64>,
}

impl QEntry {
    fn new(actions: usize) -> Self {
        QEntry {
            q: vec![0.0; actions],
            visits: vec![0; actions],
        }
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().sum()
    }
}

/// Run metadata stored in the Q-table header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config_hash: String,
    pub episodes: u64,
    pub gamma: f64,
    pub alpha: DecaySchedule,
    pub epsilon: DecaySchedule,
    pub seed: u64,
    pub num_actions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub meta: TrainingMeta,
    entries: HashMap<MdpState, QEntry>,
}

impl QTable {
    pub fn new(meta: TrainingMeta) -> Self {
        QTable {
            meta,
            entries: HashMap::new(),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.meta.num_actions
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, state: &MdpState) -> Option<&QEntry> {
        self.entries.get(state)
    }

    pub fn entry(&mut self, state: &MdpState) -> &mut QEntry {
        let n = self.meta.num_actions;
        self.entries.entry(state.clone()).or_insert_with(|| QEntry::new(n))
    }

    pub fn states(&self) -> impl Iterator<Item = (&MdpState, &QEntry)> {
        self.entries.iter()
    }

    /// `max_a q(s, a)`, zero for states never seen.
    pub fn max_q(&self, state: &MdpState) -> f64 {
        self.get(state)
            .map(|e| e.q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .unwrap_or(0.0)
    }

    /// Deterministic greedy action: the lowest index among the maxima.
    pub fn greedy_index(&self, state: &MdpState) -> Option<usize> {
        let e = self.get(state)?;
        let mut best = 0;
        for (i, &v) in e.q.iter().enumerate() {
            if v > e.q[best] {
                best = i;
            }
        }
        Some(best)
    }

    /// One update `q += alpha (r + gamma max_a' q(s', a') - q)`; `next = None`
    /// is terminal and bootstraps from zero.
    pub fn update(&mut self, s: &MdpState, a: usize, reward: f64, next: Option<&MdpState>, alpha: f64, gamma: f64) {
        let future = next.map_or(0.0, |n| self.max_q(n));
        let e = self.entry(s);
        e.q[a] += alpha * (reward + gamma * future - e.q[a]);
        e.visits[a] += 1;
    }

    pub fn save(&self, config: &Config, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(config, &mut w).map_err(|e| Error::io(path, e))
    }

    /// Header line, one line per state sorted by state, and a footer with
    /// the state count so truncation is detectable.
    pub fn write_jsonl(&self, config: &Config, w: &mut impl Write) -> std::io::Result<()> {
        let header = json!({ "header": { "meta": self.meta, "config": config } });
        writeln!(w, "{header}")?;
        let mut states: Vec<_> = self.entries.iter().collect();
        states.sort_by(|a, b| a.0.cmp(b.0));
        for (s, e) in states {
            let line = json!({ "state": s.encode(), "q": e.q, "visits": e.visits });
            writeln!(w, "{line}")?;
        }
        writeln!(w, "{}", json!({ "footer": { "states": self.entries.len() } }))?;
        w.flush()
    }

    /// Loads a table; with `expected_hash` the header must match it.
    pub fn load(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<(QTable, Config)> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file), expected_hash)
    }

    pub fn read_jsonl(reader: impl BufRead, expected_hash: Option<&str>) -> Result<(QTable, Config)> {
        #[derive(Deserialize)]
        struct Header {
            meta: TrainingMeta,
            config: Config,
        }
        #[derive(Deserialize)]
        struct HeaderLine {
            header: Header,
        }
        #[derive(Deserialize)]
        struct Row {
            state: String,
            q: Vec<f64>,
            visits: Vec<u64>,
        }
        #[derive(Deserialize)]
        struct Footer {
            states: usize,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Line {
            Row(Row),
            Footer { footer: Footer },
        }
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Parse("empty q-table file".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let header: HeaderLine =
            serde_json::from_str(&first).map_err(|e| Error::Parse(format!("q-table header: {e}")))?;
        let Header { meta, config } = header.header;
        if let Some(expected) = expected_hash {
            if meta.config_hash != expected {
                return Err(Error::Incompatible(format!(
                    "q-table was trained for config {} but {} was supplied",
                    meta.config_hash, expected
                )));
            }
        }
        let units = config.units();
        let mut table = QTable::new(meta);
        let mut declared = None;
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if declared.is_some() {
                return Err(Error::Parse(format!("q-table line {}: content after footer", i + 2)));
            }
            let row = match serde_json::from_str(&line) {
                Ok(Line::Row(row)) => row,
                Ok(Line::Footer { footer }) => {
                    declared = Some(footer.states);
                    continue;
                }
                Err(e) => return Err(Error::Parse(format!("q-table line {}: {e}", i + 2))),
            };
            if row.q.len() != table.num_actions() || row.visits.len() != table.num_actions() {
                return Err(Error::Parse(format!("q-table line {}: wrong action count", i + 2)));
            }
            let state = MdpState::decode(&row.state, units)?;
            table.entries.insert(state, QEntry { q: row.q, visits: row.visits });
        }
        match declared {
            Some(n) if n == table.len() => Ok((table, config)),
            Some(n) => Err(Error::Parse(format!("q-table footer declares {n} states, found {}", table.len()))),
            None => Err(Error::Parse("q-table file is truncated (no footer)".into())),
        }
    }
}

/// Epsilon-greedy choice over `q`; argmax ties are broken uniformly.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        return rng.random_range(0..q.len());
    }
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = q.iter().filter(|&&v| v == best).count();
    let pick = if ties == 1 { 0 } else { rng.random_range(0..ties) };
    q.iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .nth(pick)
        .map(|(i, _)| i)
        .expect("at least one maximum")
}

/// Mean total (undiscounted) episode reward per percentile batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub batch_means: Vec<f64>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch_percentile,mean_total_reward\n");
        for (i, m) in self.batch_means.iter().enumerate() {
            out.push_str(&format!("{},{m}\n", i + 1));
        }
        out
    }

    fn window_mean(&self, range: std::ops::Range<usize>) -> f64 {
        let w = &self.batch_means[range];
        w.iter().sum::<f64>() / w.len() as f64
    }

    pub fn first_mean(&self, batches: usize) -> f64 {
        self.window_mean(0..batches.min(self.batch_means.len()))
    }

    pub fn last_mean(&self, batches: usize) -> f64 {
        let n = self.batch_means.len();
        self.window_mean(n - batches.min(n)..n)
    }

    /// Largest consecutive difference among the last `batches` means,
    /// relative to their mean magnitude.
    pub fn tail_variation(&self, batches: usize) -> f64 {
        let n = self.batch_means.len();
        let tail = &self.batch_means[n - batches.min(n)..];
        let max_step = tail.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        max_step / self.last_mean(batches).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub episodes: u64,
    pub gamma: f64,
    pub alpha: DecayRange,
    pub epsilon: DecayRange,
    pub seed: u64,
}

impl TrainParams {
    pub fn from_config(config: &Config) -> Self {
        TrainParams {
            episodes: config.rl.episodes,
            gamma: config.rl.gamma,
            alpha: config.rl.alpha,
            epsilon: config.rl.epsilon,
            seed: config.seed,
        }
    }
}

/// Memoizes the surrogate: the number of distinct `(period, capacities)`
/// queries is small compared with the number of steps.
struct CostCache<'a> {
    model: &'a dyn OutageCostModel,
    cache: HashMap<(usize, Vec<u32>), f64>,
}

impl CostCache<'_> {
    fn reward(&mut self, env: &MdpEnv, s: &MdpState, a: MdpAction) -> f64 {
        let caps = env.post_action_capacity(s, a);
        let model = self.model;
        let outage = *self.cache.entry((s.period, caps)).or_insert_with_key(|(k, caps)| {
            let x: Vec<f64> = caps.iter().map(|&c| c as f64).collect();
            model.outage_cost(*k, &x).max(0.0)
        });
        -env.investment_cost(s, a) - outage
    }
}

/// Runs the episode loop. Deterministic given `params.seed`.
pub fn train(env: &MdpEnv, model: &dyn OutageCostModel, params: TrainParams) -> Result<(QTable, LearningCurve)> {
    if params.episodes < 100 {
        return Err(Error::Domain(format!("need at least 100 episodes, got {}", params.episodes)));
    }
    if !(0.0..=1.0).contains(&params.gamma) {
        return Err(Error::Domain("gamma must lie in [0, 1]".into()));
    }
    let decay_total = params.episodes - 1;
    let alpha = DecaySchedule::new(params.alpha, decay_total);
    let epsilon = DecaySchedule::new(params.epsilon, decay_total);
    let mut table = QTable::new(TrainingMeta {
        config_hash: env.config().hash(),
        episodes: params.episodes,
        gamma: params.gamma,
        alpha,
        epsilon,
        seed: params.seed,
        num_actions: env.num_actions(),
    });
    let mut rng = rng::stream(params.seed, tag::QLEARN, 0);
    let mut costs = CostCache {
        model,
        cache: HashMap::new(),
    };
    let horizon = env.horizon();
    let mut batch_sums = [0.0f64; 100];
    let mut batch_counts = [0u64; 100];
    for ep in 0..params.episodes {
        let a_t = alpha.value(ep);
        let e_t = epsilon.value(ep);
        let mut s = env.initial_state();
        let mut total = 0.0;
        loop {
            let a = select_action(&table.entry(&s).q, e_t, &mut rng);
            let action = env.action(a)?;
            let r = costs.reward(env, &s, action);
            total += r;
            if s.period == horizon {
                table.update(&s, a, r, None, a_t, params.gamma);
                break;
            }
            let next = env.transition(&s, action, &mut rng)?;
            table.update(&s, a, r, Some(&next), a_t, params.gamma);
            s = next;
        }
        let b = (ep * 100 / params.episodes) as usize;
        batch_sums[b] += total;
        batch_counts[b] += 1;
    }
    let curve = LearningCurve {
        batch_means: batch_sums
            .iter()
            .zip(&batch_counts)
            .map(|(s, &n)| s / n as f64)
            .collect(),
    };
    Ok((table, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metamodel::ConstantCost;
    use approx::assert_relative_eq;

    fn meta(actions: usize) -> TrainingMeta {
        let d = DecaySchedule { start: 1.0, end: 0.02, total: 10 };
        TrainingMeta {
            config_hash: "h".into(),
            episodes: 10,
            gamma: 0.9,
            alpha: d,
            epsilon: d,
            seed: 1,
            num_actions: actions,
        }
    }

    fn state(k: usize) -> MdpState {
        MdpState { period: k, price_idx: vec![1], capacity: vec![0] }
    }

    #[test]
    fn decay_endpoints_are_exact() {
        let d = DecaySchedule { start: 1.0, end: 0.02, total: 999 };
        assert_eq!(d.value(0), 1.0);
        assert_eq!(d.value(999), 0.02);
        assert_eq!(d.value(5000), 0.02);
        let mut prev = 1.0;
        for e in 0..1000 {
            let v = d.value(e);
            assert!(v <= prev && v >= 0.02);
            prev = v;
        }
    }

    #[test]
    fn update_rule_by_hand() {
        let mut t = QTable::new(meta(2));
        let (s, n) = (state(1), state(2));
        t.update(&s, 0, -100.0, None, 1.0, 0.9);
        assert_eq!(t.get(&s).unwrap().q[0], -100.0);

        t.entry(&s).q[1] = 10.0;
        t.entry(&n).q = vec![20.0, 3.0];
        t.update(&s, 1, 5.0, Some(&n), 0.5, 0.9);
        assert_relative_eq!(t.get(&s).unwrap().q[1], 16.5, max_relative = 1e-15);

        t.update(&s, 1, 1e6, Some(&n), 0.0, 0.9);
        assert_eq!(t.get(&s).unwrap().q[1], 16.5);
        assert_eq!(t.get(&s).unwrap().visits, vec![1, 2]);
    }

    #[test]
    fn greedy_selection_respects_strict_maximum() {
        let mut rng = rng::stream(1, tag::QLEARN, 0);
        let q = [-3.0, -1.0, -2.0];
        assert!((0..1000).all(|_| select_action(&q, 0.0, &mut rng) == 1));
    }

    fn chi_square_uniform(counts: &[u64]) -> f64 {
        let n: u64 = counts.iter().sum();
        let expected = n as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
    }

    #[test]
    fn exploration_and_ties_are_uniform() {
        let mut rng = rng::stream(2, tag::QLEARN, 0);
        let mut explore = [0u64; 13];
        let mut ties = [0u64; 13];
        let skewed: Vec<f64> = (0..13).map(|i| -(i as f64)).collect();
        let flat = [0.0; 13];
        for _ in 0..100_000 {
            explore[select_action(&skewed, 1.0, &mut rng)] += 1;
            ties[select_action(&flat, 0.0, &mut rng)] += 1;
        }
        // 12 degrees of freedom, 0.999 quantile ~ 32.9
        assert!(chi_square_uniform(&explore) < 32.9, "{explore:?}");
        assert!(chi_square_uniform(&ties) < 32.9, "{ties:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let env = MdpEnv::new(&Config::case_study()).unwrap();
        let p = TrainParams {
            episodes: 2_000,
            gamma: 0.9,
            alpha: DecayRange { start: 1.0, end: 0.02 },
            epsilon: DecayRange { start: 1.0, end: 0.02 },
            seed: 11,
        };
        let cost = |k: usize, caps: &[f64]| 1e6 * k as f64 / (1.0 + caps.iter().sum::<f64>() / 1000.0);
        let (a, ca) = train(&env, &cost, p).unwrap();
        let (b, cb) = train(&env, &cost, p).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_eq!(ca.batch_means.len(), 100);
        for (s, _) in a.states() {
            env.check_state(s).unwrap();
        }
        let (c, _) = train(&env, &cost, TrainParams { seed: 12, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_episodes_is_an_error() {
        let env = MdpEnv::new(&Config::case_study()).unwrap();
        let p = TrainParams {
            episodes: 99,
            gamma: 0.9,
            alpha: DecayRange { start: 1.0, end: 0.02 },
            epsilon: DecayRange { start: 1.0, end: 0.02 },
            seed: 1,
        };
        assert!(train(&env, &ConstantCost(0.0), p).is_err());
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        let env = MdpEnv::new(&Config::case_study()).unwrap();
        let p = TrainParams {
            episodes: 500,
            gamma: 0.9,
            alpha: DecayRange { start: 1.0, end: 0.02 },
            epsilon: DecayRange { start: 1.0, end: 0.02 },
            seed: 3,
        };
        let cost = |_: usize, caps: &[f64]| 1234.567 / (1.0 + caps.iter().sum::<f64>());
        let (t, _) = train(&env, &cost, p).unwrap();
        let config = Config::case_study();
        let mut buf = Vec::new();
        t.write_jsonl(&config, &mut buf).unwrap();
        let (back, cfg) = QTable::read_jsonl(&buf[..], Some(&config.hash())).unwrap();
        assert_eq!(cfg, config);
        assert_eq!(back.len(), t.len());
        for (s, e) in t.states() {
            let b = back.get(s).unwrap();
            assert!(e.q.iter().zip(&b.q).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(e.visits, b.visits);
        }
        assert!(matches!(
            QTable::read_jsonl(&buf[..], Some("other")),
            Err(Error::Incompatible(_))
        ));
        let cut = &buf[..buf.len() - 20];
        assert!(QTable::read_jsonl(cut, None).is_err());
        let text = String::from_utf8(buf.clone()).unwrap();
        let whole_lines: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(QTable::read_jsonl(whole_lines.as_bytes(), None).is_err());
    }
}
