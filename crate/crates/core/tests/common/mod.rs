#![allow(dead_code)]

use storex_core::config::{Config, SiteData};
use storex_core::dispatch::Microgrid;
use storex_core::finance::annuity;
use storex_core::metamodel::CostTable;

pub fn case_grid(config: &Config) -> Microgrid {
    let site = SiteData::synthetic(&config.series).unwrap();
    Microgrid::new(config, &site).unwrap()
}

/// Case study cut down to Li-ion only, with prices that always advance.
pub fn reduced_config() -> Config {
    let mut c = Config::case_study();
    c.storage.truncate(1);
    c.storage[0].advance_prob_schedule = vec![1.0, 1.0, 1.0, 0.0];
    c.validate().unwrap();
    c
}

/// Stub outage cost for the reduced instance: falls with installed kWh and
/// grows with the period.
pub fn stub_cost(period: usize, kwh: f64) -> f64 {
    1.2e6 * period as f64 * (-kwh / 1800.0).exp()
}

/// Every capacity one unit can hold after `purchases` buys.
pub fn reachable(levels: &[u32], purchases: usize) -> Vec<u32> {
    let mut out = vec![0u32];
    for _ in 0..purchases {
        let mut next = out.clone();
        for &c in &out {
            for &l in levels {
                next.push(c + l);
            }
        }
        next.sort_unstable();
        next.dedup();
        out = next;
    }
    out
}

pub fn stub_table(config: &Config) -> CostTable {
    let mut t = CostTable::new(f64::NAN);
    let k_max = config.planning.horizon_periods;
    for k in 1..=k_max {
        for c in reachable(config.levels(), k) {
            t.insert(k, &[c as f64], stub_cost(k, c as f64));
        }
    }
    t
}

/// Exhaustive search over every open-loop action sequence of the reduced
/// instance. Investment is recomputed from the annuity formula directly.
/// Returns the best sequence, its discounted total and the runner-up total.
pub fn brute_force(config: &Config, gamma: f64) -> (Vec<usize>, f64, f64) {
    let k_max = config.planning.horizon_periods;
    let levels = config.levels();
    let tech = &config.storage[0];
    let n_actions = levels.len() + 1;
    let years = config.planning.years_per_period as f64;
    let mut totals: Vec<(Vec<usize>, f64)> = Vec::new();
    for code in 0..n_actions.pow(k_max as u32) {
        let seq: Vec<usize> = (0..k_max).map(|k| code / n_actions.pow(k as u32) % n_actions).collect();
        let mut cap = 0.0;
        let mut total = 0.0;
        for (k0, &a) in seq.iter().enumerate() {
            let k = k0 + 1;
            let mut invest = 0.0;
            if a > 0 {
                let level = levels[a - 1] as f64;
                // Price state equals the period when every move advances.
                let pay = annuity(level * tech.price(k), config.planning.interest_rate, tech.lifetime(k)).unwrap();
                invest = (k_max - k + 1) as f64 * years * pay;
                cap += level;
            }
            total += gamma.powi(k0 as i32) * (-invest - stub_cost(k, cap));
        }
        totals.push((seq, total));
    }
    totals.sort_by(|a, b| b.1.total_cmp(&a.1));
    (totals[0].0.clone(), totals[0].1, totals[1].1)
}

/// Lost-load cost with no storage at all: each hour, renewables serve the
/// longest priority prefix they cover and everything after it is lost.
pub fn no_storage_cost<'a>(grid: &Microgrid, outages: impl IntoIterator<Item = &'a storex_core::outage::Outage>) -> f64 {
    let mut cost = 0.0;
    for o in outages {
        for hour in o.start_hour..o.start_hour + o.duration_hours {
            let mut left = grid.renewable(hour);
            let mut serving = true;
            for g in 0..grid.facility_count() {
                let need = grid.critical_demand(g, hour);
                if serving && need <= left {
                    left -= need;
                } else {
                    serving = false;
                    cost += grid.voll(g) * need;
                }
            }
        }
    }
    cost
}
