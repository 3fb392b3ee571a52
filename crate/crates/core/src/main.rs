//! `rofu` command line: run experiments, verification suites and plot data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rofu::config::{ExperimentConfig, Seeds};
use rofu::harness::{self, RunMeta};
use rofu::verify::{self, Suite};

#[derive(Debug, Parser)]
#[command(name = "rofu", version, about = "Regularized-optimism contextual bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every agent of a config file or bundled preset over all seeds.
    Run {
        /// Config path or preset name (mab10, linear_d6, kernel_rbf,
        /// mlp_table2, mlp_sim_deep, dataset_csv).
        config: String,
        /// Use N consecutive seeds starting at the config's first seed.
        #[arg(long, value_name = "N")]
        seeds: Option<u64>,
        #[arg(long, value_name = "T")]
        horizon: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Worker threads (defaults to the available parallelism).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run an oracle-equivalence suite.
    Verify {
        /// One of: linucb, ucb1, ntk, gradcheck, linalg.
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge the agents' curves.csv files under DIR into DIR/comparison.csv.
    PlotData { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seeds,
            horizon,
            out,
            threads,
        } => cmd_run(&config, seeds, horizon, out, threads),
        Command::Verify { suite, seed } => cmd_verify(&suite, seed),
        Command::PlotData { dir } => cmd_plot_data(&dir),
    }
}

fn cmd_run(
    config: &str,
    seeds: Option<u64>,
    horizon: Option<usize>,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> ExitCode {
    let mut cfg = match ExperimentConfig::load_preset_or_file(config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(count) = seeds {
        let base = cfg.seeds.expand().first().copied().unwrap_or(0);
        cfg.seeds = Seeds::Range { base, count };
    }
    if let Some(t) = horizon {
        cfg.horizon = t;
    }
    if let Some(dir) = out {
        cfg.output = dir;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    let seed_list = cfg.seeds.expand();
    let threads = threads.unwrap_or_else(harness::default_threads);
    let echo = serde_json::to_value(&cfg).expect("configs serialize");
    for agent in &cfg.agents {
        let results = harness::run_seeds(&cfg.env, &agent.spec, cfg.horizon, &seed_list, threads);
        let runs = match results.into_iter().collect::<Result<Vec<_>, _>>() {
            Ok(runs) => runs,
            Err(e) => {
                eprintln!("error: agent {}: {e}", agent.name);
                return ExitCode::from(1);
            }
        };
        let outcome = harness::aggregate(&runs).and_then(|agg| {
            let dir = cfg.output.join(&agent.name);
            harness::persist(&agg, &RunMeta::new(&agg, echo.clone()), &dir)?;
            Ok((agg, dir))
        });
        match outcome {
            Ok((agg, dir)) => {
                let t = agg.horizon() - 1;
                println!(
                    "{}: final regret {:.4} +/- {:.4} over {} seeds -> {}",
                    agent.name,
                    agg.mean_regret[t],
                    agg.std_regret[t],
                    agg.seeds.len(),
                    dir.display()
                );
            }
            Err(e) => {
                eprintln!("error: agent {}: {e}", agent.name);
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::SUCCESS
}

fn cmd_verify(suite: &str, seed: u64) -> ExitCode {
    let suite: Suite = match suite.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = verify::run_suite(suite, seed);
    for check in &report.checks {
        println!("{check}");
        if let Some(case) = &check.failure {
            println!("  failing case: {case}");
        }
    }
    println!(
        "suite {}: {} in {:.2?}",
        suite.name(),
        if report.passed() { "passed" } else { "FAILED" },
        report.elapsed
    );
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

struct Curves {
    name: String,
    rows: Vec<(String, String, String)>,
}

fn read_curves(path: &Path, name: String) -> Result<Curves, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = reader.headers().map_err(|e| format!("{}: {e}", path.display()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != harness::CURVES_HEADER {
        return Err(format!("{}: unexpected header", path.display()));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        let round: usize = record[0]
            .parse()
            .map_err(|_| format!("{}: row {} has a bad round", path.display(), i + 1))?;
        if round != i + 1 {
            return Err(format!("{}: rounds are not consecutive at row {}", path.display(), i + 1));
        }
        for cell in [&record[1], &record[2]] {
            cell.parse::<f64>()
                .map_err(|_| format!("{}: row {} has a bad value {cell:?}", path.display(), i + 1))?;
        }
        rows.push((record[0].to_string(), record[1].to_string(), record[2].to_string()));
    }
    Ok(Curves { name, rows })
}

fn plot_data(dir: &Path) -> Result<PathBuf, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut agents: Vec<(String, PathBuf)> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().join("curves.csv").is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path().join("curves.csv")))
        .collect();
    agents.sort();
    if agents.is_empty() {
        return Err(format!("{}: no <agent>/curves.csv found", dir.display()));
    }
    let curves = agents
        .into_iter()
        .map(|(name, path)| read_curves(&path, name))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &curves[0];
    for c in &curves[1..] {
        if c.rows.len() != first.rows.len() {
            return Err(format!(
                "horizons differ: {} has {} rounds, {} has {}",
                first.name,
                first.rows.len(),
                c.name,
                c.rows.len()
            ));
        }
    }
    let mut out = String::from("round");
    for c in &curves {
        out.push_str(&format!(",{0}_mean_regret,{0}_std_regret", c.name));
    }
    out.push('\n');
    for t in 0..first.rows.len() {
        out.push_str(&first.rows[t].0);
        for c in &curves {
            out.push(',');
            out.push_str(&c.rows[t].1);
            out.push(',');
            out.push_str(&c.rows[t].2);
        }
        out.push('\n');
    }
    let path = dir.join("comparison.csv");
    std::fs::write(&path, out).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn cmd_plot_data(dir: &Path) -> ExitCode {
    match plot_data(dir) {
        Ok(path) => {
            println!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
