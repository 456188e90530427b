//! End-to-end run on the case-study config: dataset, forest, Q-learning,
//! policy extraction and a comparison against never investing.
//!
//! cargo run --release -p storex-core --example case_study -- [episodes]

use storex_core::config::{Config, SiteData};
use storex_core::dispatch::Microgrid;
use storex_core::mdp::MdpEnv;
use storex_core::metamodel::{generate_dataset, train_forest};
use storex_core::policy::{compare_policies, extract_policy, scenario_presets, Policy};
use storex_core::qlearn::{train, TrainParams};

fn main() -> storex_core::Result<()> {
    let episodes = std::env::args().nth(1).map_or(1_000_000, |a| a.parse().expect("episode count"));
    let config = Config::case_study();
    let site = SiteData::synthetic(&config.series)?;
    let grid = Microgrid::new(&config, &site)?;
    let m = &config.metamodel;

    let dataset = generate_dataset(&config, &grid, m.observations, m.trials, config.seed)?;
    let forest = train_forest(&dataset, m.trees, m.train_fraction, m.into(), config.seed)?;
    println!("surrogate held-out R2 {:.4}", forest.meta.test_r2.unwrap_or(f64::NAN));

    let env = MdpEnv::new(&config)?;
    let mut params = TrainParams::from_config(&config);
    params.episodes = episodes;
    let (table, curve) = train(&env, &forest, params)?;
    println!(
        "{} states visited; mean reward first 10% {:.0}, last 10% {:.0}",
        table.len(),
        curve.first_mean(10),
        curve.last_mean(10)
    );

    let mut first = None;
    for scenario in scenario_presets() {
        let report = extract_policy(&table, &env, &scenario)?;
        let actions: Vec<usize> = report.steps.iter().map(|s| s.action_index).collect();
        println!("scenario {}: actions {actions:?}, {} kWh", scenario.id, report.total_capacity());
        first.get_or_insert(report);
    }

    let policies = vec![
        ("never".to_string(), Policy::Never),
        ("scenario-1".to_string(), Policy::from_report(&first.expect("presets are not empty"))),
    ];
    for r in compare_policies(&policies, &env, &grid, 1000, config.seed)? {
        println!("{} {}: {:.0} +/- {:.0}", r.rank, r.name, r.evaluation.mean, r.evaluation.stderr);
    }
    Ok(())
}
