//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. The
//! process fails if any criterion outside [`KNOWN_GAPS`] fails.

use std::time::{Duration, Instant};

use rofu::config::{self, ExperimentConfig, Seeds, PRESET_NAMES};
use rofu::envs::Env;
use rofu::harness::{self, AggregateResult, RunMeta, RunResult};
use rofu::models::{Model, TrainConfig};
use rofu::seeding::RunSeeds;
use rofu::verify::{self, Suite};

/// Criteria that are known to fail with the specified constants. They are
/// still run and reported.
const KNOWN_GAPS: &[usize] = &[6];

struct Outcome {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn report(id: usize, title: &'static str, passed: bool, detail: String) -> Outcome {
    let status = if passed { "PASS" } else { "FAIL" };
    let note = if !passed && KNOWN_GAPS.contains(&id) { " (known gap)" } else { "" };
    println!("{status} [{id}] {title}: {detail}{note}");
    Outcome {
        id,
        title,
        passed,
        detail,
    }
}

fn suite_criterion(id: usize, title: &'static str, suite: Suite, limit: Duration) -> Outcome {
    let r = verify::run_suite(suite, 0);
    for check in &r.checks {
        println!("    {check}");
    }
    let in_time = r.elapsed < limit;
    let worst = r
        .checks
        .iter()
        .map(|c| format!("{} {:.3e}/{:.0e}", c.name, c.max_deviation, c.tolerance))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        id,
        title,
        r.passed() && in_time,
        format!("{worst}; {:.2?} (limit {limit:?})", r.elapsed),
    )
}

fn run_agent(cfg: &ExperimentConfig, name: &str) -> (Vec<RunResult>, AggregateResult) {
    let agent = cfg
        .agents
        .iter()
        .find(|a| a.name == name)
        .unwrap_or_else(|| panic!("preset has no agent {name}"));
    let seeds = cfg.seeds.expand();
    let runs = harness::run_seeds(&cfg.env, &agent.spec, cfg.horizon, &seeds, harness::default_threads())
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .unwrap_or_else(|e| panic!("{name}: {e}"));
    let agg = harness::aggregate(&runs).expect("runs aggregate");
    (runs, agg)
}

fn mab_regret_shape() -> Outcome {
    let start = Instant::now();
    let cfg = config::preset("mab10").expect("preset parses");
    let (_, agg) = run_agent(&cfg, "rofu_ucb1");
    let elapsed = start.elapsed();
    let t = cfg.horizon;
    let final_regret = agg.mean_regret[t - 1];
    let half = agg.mean_regret[t / 2 - 1];
    let budget = 0.02 * t as f64;
    let limit = Duration::from_secs(120);
    let passed = final_regret <= budget && final_regret - half < half && elapsed < limit;
    report(
        6,
        "MAB regret shape",
        passed,
        format!(
            "R({t}) = {final_regret:.1} (budget {budget:.0}), R({t}) - R({}) = {:.1} vs R({}) = {half:.1}; {elapsed:.2?}",
            t / 2,
            final_regret - half,
            t / 2
        ),
    )
}

struct MlpRuns {
    outcome: Outcome,
    runs: Vec<RunResult>,
    cfg: ExperimentConfig,
}

fn mlp_figure() -> MlpRuns {
    let start = Instant::now();
    let cfg = config::preset("mlp_table2").expect("preset parses");
    let names = ["rofu_m1", "rofu_m5", "rofu_m10", "epsilon_greedy"];
    let mut aggs = Vec::new();
    let mut runs = Vec::new();
    for name in names {
        let (r, agg) = run_agent(&cfg, name);
        println!("    {name}: final regret {:.1} +/- {:.1}", agg.mean_regret[cfg.horizon - 1], agg.std_regret[cfg.horizon - 1]);
        runs.extend(r);
        aggs.push(agg);
    }
    let elapsed = start.elapsed();
    let t = cfg.horizon;
    let fin = |i: usize| aggs[i].mean_regret[t - 1];
    let regret_ok = [1, 2].iter().all(|&m| fin(m) < fin(0) && fin(m) < fin(3));
    let early = |i: usize| aggs[i].mean_bonus_over(0..500.min(t));
    let monotone = early(2) >= early(1) && early(1) >= early(0);
    let tenth = t / 10;
    let vanishing: Vec<(f64, f64)> = (0..3)
        .map(|i| (aggs[i].mean_bonus_over(0..tenth), aggs[i].mean_bonus_over(t - tenth..t)))
        .collect();
    let vanish_ok = vanishing.iter().all(|(e, l)| *l < 0.5 * e);
    let limit = Duration::from_secs(15 * 60);
    for (label, ok) in [("(a) regret", regret_ok), ("(b) monotone bonus", monotone), ("(c) vanishing bonus", vanish_ok)] {
        println!("    {label}: {}", if ok { "ok" } else { "not met" });
    }
    let detail = format!(
        "final regret M1 {:.1}, M5 {:.1}, M10 {:.1}, eps {:.1}; bonus 1-500 {:.4}/{:.4}/{:.4}; early/late {}; {elapsed:.2?}",
        fin(0),
        fin(1),
        fin(2),
        fin(3),
        early(0),
        early(1),
        early(2),
        vanishing
            .iter()
            .map(|(e, l)| format!("{e:.4}/{l:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let outcome = report(
        7,
        "MLP bandit regret and bonus in M",
        regret_ok && monotone && vanish_ok && elapsed < limit,
        detail,
    );
    MlpRuns { outcome, runs, cfg }
}

fn determinism() -> Outcome {
    let mut failures = Vec::new();
    for name in PRESET_NAMES {
        let mut cfg = config::preset(name).expect("preset parses");
        cfg.horizon = cfg.horizon.min(150);
        let base = cfg.seeds.expand()[0];
        cfg.seeds = Seeds::Range { base, count: 2 };
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for dir in &dirs {
            for agent in &cfg.agents {
                let runs = harness::run_seeds(&cfg.env, &agent.spec, cfg.horizon, &cfg.seeds.expand(), 2)
                    .into_iter()
                    .collect::<Result<Vec<_>, _>>()
                    .unwrap_or_else(|e| panic!("{name}/{}: {e}", agent.name));
                let agg = harness::aggregate(&runs).unwrap();
                let meta = RunMeta::new(&agg, serde_json::Value::Null);
                harness::persist(&agg, &meta, &dir.path().join(&agent.name)).unwrap();
            }
        }
        for agent in &cfg.agents {
            let read = |i: usize| std::fs::read(dirs[i].path().join(&agent.name).join("curves.csv")).unwrap();
            if read(0) != read(1) {
                failures.push(format!("{name}/{}", agent.name));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{} presets reproduce curves.csv byte for byte", PRESET_NAMES.len())
    } else {
        format!("curves differ for {}", failures.join(", "))
    };
    report(8, "Determinism", failures.is_empty(), detail)
}

/// `theta'` uses the agents' training settings with as many steps as an agent
/// takes over the whole horizon.
fn offline_train_config(cfg: &ExperimentConfig, agent_train: &TrainConfig) -> TrainConfig {
    TrainConfig {
        steps: agent_train.steps * cfg.horizon,
        ..agent_train.clone()
    }
}

fn decomposition(mlp: &MlpRuns) -> Outcome {
    let cfg = &mlp.cfg;
    let agent = &cfg.agents.iter().find(|a| a.name == "rofu_m5").expect("agent").spec;
    let train = offline_train_config(cfg, agent.train_config().expect("trained agent"));
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut part_sums = (0.0, 0.0);
    for seed in cfg.seeds.expand() {
        let env = Env::new(cfg.env.clone(), RunSeeds::new(seed).env).expect("env builds");
        let model: Model = agent.model_for(&env).expect("model builds").expect("model agent");
        let theta = harness::train_offline_model(&model, &env, cfg.horizon, &train, seed).expect("offline training");
        for run in mlp.runs.iter().filter(|r| r.seed == seed) {
            let (r1, r2) = harness::regret_decomposition(run, &model, &theta, &env).expect("decomposition");
            worst = worst.max((r1 + r2 - run.final_regret()).abs());
            part_sums.0 += r1;
            part_sums.1 += r2;
            checked += 1;
        }
    }
    let n = checked.max(1) as f64;
    report(
        9,
        "Regret decomposition additivity",
        checked == mlp.runs.len() && worst <= 1e-9,
        format!(
            "{checked} runs, max |I + II - R| = {worst:.3e} (tol 1e-9); mean I {:.1}, mean II {:.1}",
            part_sums.0 / n,
            part_sums.1 / n
        ),
    )
}

fn main() {
    let mut outcomes = vec![
        suite_criterion(1, "LinUCB equivalence", Suite::Linucb, Duration::from_secs(30)),
        suite_criterion(2, "UCB1 equivalence", Suite::Ucb1, Duration::from_secs(5)),
        suite_criterion(3, "NTK two-path identity", Suite::Ntk, Duration::from_secs(60)),
        suite_criterion(4, "Gradient correctness", Suite::Gradcheck, Duration::from_secs(10)),
        suite_criterion(5, "Linalg oracles", Suite::Linalg, Duration::from_secs(1)),
        mab_regret_shape(),
    ];
    let mlp = mlp_figure();
    let decomposition = decomposition(&mlp);
    outcomes.push(mlp.outcome);
    outcomes.push(determinism());
    outcomes.push(decomposition);
    outcomes.sort_by_key(|o| o.id);

    println!();
    println!("acceptance summary:");
    for o in &outcomes {
        println!("  {} [{}] {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.title);
    }
    let unexpected: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| !o.passed && !KNOWN_GAPS.contains(&o.id))
        .collect();
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    if !unexpected.is_empty() {
        for o in &unexpected {
            eprintln!("unexpected failure [{}] {}: {}", o.id, o.title, o.detail);
        }
        std::process::exit(1);
    }
}
