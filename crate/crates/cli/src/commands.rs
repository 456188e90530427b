use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use storex_core::config::{load_config, Config, SiteData};
use storex_core::dispatch::Microgrid;
use storex_core::mdp::MdpEnv;
use storex_core::metamodel::{capacity_sweep, generate_dataset, load_forest, train_forest, DatasetMeta, SyntheticDataset};
use storex_core::outage::{duration_histogram, OutageModel};
use storex_core::policy::{
    compare_policies, extract_policy, load_scenarios, ranking_csv, scenario_presets, Policy, PolicyReport,
};
use storex_core::qlearn::{train, QTable, TrainParams};
use storex_core::rng::{self, tag};

use crate::manifest::{RunDir, RunManifest};
use crate::{CliError, EvaluateArgs, GenDataArgs, PolicyArgs, ReportArgs, SolveArgs, TrainMetaArgs};

/// Policy report as written by `policy` and replayed by `evaluate`.
#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    config_hash: String,
    report: PolicyReport,
}

fn parent_dir(path: &Path) -> PathBuf {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::canonicalize(parent).unwrap_or_else(|_| parent.to_path_buf())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))
}

fn grid_for(config: &Config, series_base: &Path) -> Result<Microgrid, CliError> {
    let site = SiteData::resolve(&config.series, series_base)?;
    Ok(Microgrid::new(config, &site)?)
}

/// Series base recorded next to an artifact, else the artifact's directory.
fn series_base_near(path: &Path) -> PathBuf {
    let dir = parent_dir(path);
    RunManifest::load(&dir).map_or(dir, |m| m.series_base)
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let config = load_config(&a.config)?;
    let base = parent_dir(&a.config);
    let seed = a.seed.unwrap_or(config.seed);
    let observations = a.observations.map_or(config.metamodel.observations, |n| n as usize);
    let trials = a.trials.map_or(config.metamodel.trials, |n| n as usize);
    let grid = grid_for(&config, &base)?;
    let dataset = generate_dataset(&config, &grid, observations, trials, seed)?;

    let mut run = RunDir::open(&a.out, &config, seed, &base)?;
    let params = json!({ "observations": observations, "trials": trials, "seed": seed });
    let path = run.write("dataset", "dataset.csv", dataset.to_csv().as_bytes(), "gen-data", params)?;
    run.finish()?;
    println!("{} rows x {trials} trials -> {}", dataset.rows.len(), path.display());
    Ok(())
}

pub fn train_meta(a: TrainMetaArgs) -> Result<(), CliError> {
    let dir = parent_dir(&a.dataset);
    let upstream = RunManifest::load(&dir)?;
    let config = upstream.config(&dir)?;
    let record = upstream
        .artifacts
        .get("dataset")
        .ok_or_else(|| CliError::Missing(format!("no dataset recorded in {}", dir.display())))?;
    let field = |k: &str| {
        record.params[k]
            .as_u64()
            .ok_or_else(|| CliError::Validation(format!("dataset record lacks `{k}`")))
    };
    let meta = DatasetMeta {
        trials: field("trials")? as usize,
        seed: field("seed")?,
        config_hash: upstream.config_hash.clone(),
    };
    let dataset = SyntheticDataset::from_csv(&read(&a.dataset)?, meta)?;
    if dataset.units != config.units() {
        return Err(CliError::Incompatible(format!(
            "dataset has {} capacity columns, config has {} units",
            dataset.units,
            config.units()
        )));
    }
    let trees = a.trees.map_or(config.metamodel.trees, |n| n as usize);
    let train_fraction = a.train_frac.unwrap_or(config.metamodel.train_fraction);
    let seed = a.seed.unwrap_or(upstream.seed);
    let forest = train_forest(&dataset, trees, train_fraction, (&config.metamodel).into(), seed)?;

    let mut run = RunDir::open(&a.out, &config, upstream.seed, &upstream.series_base)?;
    let params = json!({
        "trees": trees,
        "train_fraction": train_fraction,
        "seed": seed,
        "test_r2": forest.meta.test_r2,
    });
    let path = run.write("forest", "forest.json", forest.to_json().as_bytes(), "train-meta", params)?;
    run.finish()?;
    match forest.meta.test_r2 {
        Some(r2) => println!("{trees} trees, held-out R^2 {r2:.4} -> {}", path.display()),
        None => println!("{trees} trees, held-out targets constant -> {}", path.display()),
    }
    Ok(())
}

pub fn solve(a: SolveArgs) -> Result<(), CliError> {
    let config = load_config(&a.config)?;
    let forest = load_forest(&a.forest)?;
    if forest.meta.config_hash != config.hash() {
        return Err(CliError::Incompatible(format!(
            "forest was trained for config {}, not {}",
            forest.meta.config_hash,
            config.hash()
        )));
    }
    if forest.meta.n_features != config.units() + 1 {
        return Err(CliError::Incompatible("forest feature count does not match the config".into()));
    }
    let env = MdpEnv::new(&config)?;
    let mut params = TrainParams::from_config(&config);
    if let Some(e) = a.episodes {
        params.episodes = e;
    }
    if let Some(g) = a.gamma {
        params.gamma = g;
    }
    if let Some(s) = a.seed {
        params.seed = s;
    }
    let (table, curve) = train(&env, &forest, params)?;

    let mut jsonl = Vec::new();
    table
        .write_jsonl(&config, &mut jsonl)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let mut run = RunDir::open(&a.out, &config, params.seed, &series_base_near(&a.forest))?;
    run.write("forest", "forest.json", forest.to_json().as_bytes(), "solve", json!({}))?;
    let run_params = json!({ "episodes": params.episodes, "gamma": params.gamma, "seed": params.seed });
    let path = run.write("qtable", "qtable.jsonl", &jsonl, "solve", run_params.clone())?;
    run.write("learning_curve", "learning_curve.csv", curve.to_csv().as_bytes(), "solve", run_params)?;
    run.finish()?;
    println!(
        "{} episodes, {} states; mean reward first 10% {:.0}, last 10% {:.0} -> {}",
        params.episodes,
        table.len(),
        curve.first_mean(10),
        curve.last_mean(10),
        path.display()
    );
    Ok(())
}

pub fn policy(a: PolicyArgs) -> Result<(), CliError> {
    let (table, config) = QTable::load(&a.qtable, None)?;
    if table.meta.config_hash != config.hash() {
        return Err(CliError::Incompatible("q-table header config does not match its hash".into()));
    }
    let scenarios = match &a.scenarios {
        Some(path) => load_scenarios(path)?,
        None => scenario_presets(),
    };
    let chosen: Vec<_> = scenarios.into_iter().filter(|s| a.scenario == "all" || s.id == a.scenario).collect();
    if chosen.is_empty() {
        return Err(CliError::Usage(format!("no scenario with id `{}`", a.scenario)));
    }
    let env = MdpEnv::new(&config)?;
    let mut run = RunDir::open(&a.out, &config, table.meta.seed, &series_base_near(&a.qtable))?;
    for scenario in &chosen {
        let report = extract_policy(&table, &env, scenario)?;
        let stem = format!("policy_{}", scenario.id);
        let file = PolicyFile {
            config_hash: config.hash(),
            report,
        };
        let params = json!({ "scenario": scenario.id });
        run.write(&stem, &format!("{stem}.csv"), file.report.to_csv().as_bytes(), "policy", params.clone())?;
        let text = serde_json::to_string_pretty(&file).expect("policy serializes");
        run.write(&format!("{stem}_json"), &format!("{stem}.json"), text.as_bytes(), "policy", params)?;

        let mut line = format!("scenario {:>3}:", scenario.id);
        for step in &file.report.steps {
            let _ = write!(line, " {}", describe(&config, step.action_index));
            if step.low_confidence {
                line.push('?');
            }
        }
        println!("{line} | total {} kWh", file.report.total_capacity());
    }
    run.finish()
}

fn describe(config: &Config, index: usize) -> String {
    if index == 0 {
        return "-".into();
    }
    let levels = config.levels();
    let unit = (index - 1) / levels.len();
    format!("{}@{}", config.storage[unit].name, levels[(index - 1) % levels.len()])
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let config = load_config(&a.config)?;
    let base = parent_dir(&a.config);
    let seed = a.seed.unwrap_or(config.seed);
    let hash = config.hash();
    let mut policies: Vec<(String, Policy)> = Vec::new();
    for spec in &a.policies {
        let (name, policy) = if spec == "never" {
            ("never".to_string(), Policy::Never)
        } else {
            let path = Path::new(spec);
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec).to_string();
            if path.extension().is_some_and(|e| e == "jsonl") {
                let (table, _) = QTable::load(path, Some(&hash))?;
                (format!("greedy:{stem}"), Policy::Greedy(table))
            } else {
                let file: PolicyFile = serde_json::from_str(&read(path)?)
                    .map_err(|e| CliError::Validation(format!("{spec}: {e}")))?;
                if file.config_hash != hash {
                    return Err(CliError::Incompatible(format!("{spec} was extracted under a different config")));
                }
                (stem, Policy::from_report(&file.report))
            }
        };
        let mut unique = name.clone();
        let mut n = 2;
        while policies.iter().any(|(p, _)| *p == unique) {
            unique = format!("{name}#{n}");
            n += 1;
        }
        policies.push((unique, policy));
    }
    let grid = grid_for(&config, &base)?;
    let env = MdpEnv::new(&config)?;
    let ranked = compare_policies(&policies, &env, &grid, a.trials as usize, seed)?;

    let mut run = RunDir::open(&a.out, &config, seed, &base)?;
    let params = json!({ "trials": a.trials, "seed": seed, "policies": a.policies });
    run.write("ranking", "ranking.csv", ranking_csv(&ranked).as_bytes(), "evaluate", params)?;
    run.finish()?;
    for r in &ranked {
        println!(
            "{:>2}. {:<24} mean {:>14.2} +/- {:<10.2} (investment {:.2}, lost load {:.2})",
            r.rank, r.name, r.evaluation.mean, r.evaluation.stderr, r.evaluation.mean_investment, r.evaluation.mean_lost_load
        );
    }
    Ok(())
}

fn poisson_pmf(lambda: f64, n: usize) -> f64 {
    (1..=n).fold((-lambda).exp(), |p, i| p * lambda / i as f64)
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let dir = &a.run_dir;
    let upstream = RunManifest::load(dir)?;
    let config = upstream.config(dir)?;
    let mut run = RunDir::open(&a.out, &config, upstream.seed, &upstream.series_base)?;
    let mut summary = serde_json::Map::new();
    summary.insert("config_hash".into(), json!(upstream.config_hash));

    if let Some(path) = upstream.artifact_path(dir, "learning_curve") {
        let text = read(&path)?;
        run.write("learning_curve", "learning_curve.csv", text.as_bytes(), "report", json!({}))?;
    }

    if let Some(path) = upstream.artifact_path(dir, "forest") {
        let forest = load_forest(&path)?;
        if forest.meta.config_hash != upstream.config_hash {
            return Err(CliError::Incompatible(format!("{} belongs to another config", path.display())));
        }
        let horizon = config.planning.horizon_periods;
        let top = config.levels().last().copied().unwrap_or(0) as usize * horizon;
        let caps: Vec<f64> = (0..=top).step_by(100).map(|c| c as f64).collect();
        let mut csv = String::from("period,unit,capacity_kwh,predicted_cost\n");
        for k in 1..=horizon {
            for (u, tech) in config.storage.iter().enumerate() {
                let costs = capacity_sweep(&forest, k, u, config.units(), &caps);
                for (c, cost) in caps.iter().zip(costs) {
                    let _ = writeln!(csv, "{k},{},{c},{cost}", tech.name);
                }
            }
        }
        run.write("cost_surface", "cost_surface.csv", csv.as_bytes(), "report", json!({}))?;
        summary.insert("test_r2".into(), json!(forest.meta.test_r2));
    }

    let p = &config.planning;
    let model = OutageModel::new(p.saifi, p.caidi, p.horizon_years())?;
    let traces: Vec<_> = (0..a.horizons)
        .map(|i| model.sample(&mut rng::stream(upstream.seed, tag::OUTAGE_CHECK, i)))
        .collect();
    let hist = duration_histogram(&traces);
    let expected_outages = a.horizons as f64 * p.saifi * p.horizon_years() as f64;
    let mut csv = String::from("duration_hours,count,expected\n");
    for (h, &count) in hist.iter().enumerate().skip(1) {
        let expected = expected_outages * poisson_pmf(p.caidi - 1.0, h - 1);
        let _ = writeln!(csv, "{h},{count},{expected:.3}");
    }
    let params = json!({ "horizons": a.horizons, "seed": upstream.seed });
    run.write("outage_durations", "outage_durations.csv", csv.as_bytes(), "report", params)?;

    let mut policies = String::new();
    let mut totals = serde_json::Map::new();
    for (key, artifact) in &upstream.artifacts {
        if !(key.starts_with("policy_") && artifact.path.ends_with(".json")) {
            continue;
        }
        let file: PolicyFile = serde_json::from_str(&read(&dir.join(&artifact.path))?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", artifact.path)))?;
        let csv = file.report.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if policies.is_empty() {
            let _ = writeln!(policies, "scenario,{header}");
        }
        for line in lines {
            let _ = writeln!(policies, "{},{line}", file.report.scenario);
        }
        totals.insert(file.report.scenario.clone(), json!(file.report.total_capacity()));
    }
    if !policies.is_empty() {
        run.write("policies", "policies.csv", policies.as_bytes(), "report", json!({}))?;
        summary.insert("policy_total_kwh".into(), serde_json::Value::Object(totals));
    }

    if let Some(path) = upstream.artifact_path(dir, "ranking") {
        let text = read(&path)?;
        run.write("ranking", "ranking.csv", text.as_bytes(), "report", json!({}))?;
    }

    let text = serde_json::to_string_pretty(&serde_json::Value::Object(summary)).expect("summary serializes");
    run.write("summary", "summary.json", text.as_bytes(), "report", json!({}))?;
    let written = run.manifest.artifacts.len();
    run.finish()?;
    println!("{written} artifacts in {}", a.out.display());
    Ok(())
}
