//! Seeded experiment runs, regret accounting, aggregation and persistence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{EpsilonGreedyAgent, NeuralUcbAgent};
use crate::envs::{Env, EnvError, EnvSpec};
use crate::models::{self, Model, ModelError, ModelKind, ModelSpec, ParamVector, TrainConfig, Transition};
use crate::rofu::{Agent, DesignMode, RofuAgent, RofuConfig, RofuError};
use crate::seeding::{self, RunSeeds};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("agent failed at round {round}: {source}")]
    Agent {
        round: u64,
        #[source]
        source: RofuError,
    },
    #[error("invalid agent: {0}")]
    InvalidAgent(String),
    #[error("runs do not match: {0}")]
    FingerprintMismatch(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

fn default_gamma() -> f64 {
    0.1
}

fn default_lambda() -> f64 {
    1.0
}

/// Agent configuration. Model shapes take `context_dim` and `arm_count`
/// from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    /// Gradient-ascent optimistic estimate on any model.
    RofuAscent {
        model: ModelKind,
        rofu: RofuConfig,
        train: TrainConfig,
    },
    /// LinUCB / KernelUCB closed form on a feature model.
    RofuLinucb { model: ModelKind },
    /// UCB1 closed form.
    RofuUcb1,
    /// Linearized NTK closed form.
    RofuNtk {
        model: ModelKind,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width_m: Option<usize>,
        train: TrainConfig,
        #[serde(default)]
        design: DesignMode,
    },
    EpsilonGreedy {
        model: ModelKind,
        epsilon: f64,
        train: TrainConfig,
    },
    Greedy {
        model: ModelKind,
        train: TrainConfig,
    },
    NeuralUcbFull {
        model: ModelKind,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width_m: Option<usize>,
        train: TrainConfig,
    },
    NeuralUcbDiag {
        model: ModelKind,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width_m: Option<usize>,
        train: TrainConfig,
    },
}

impl AgentSpec {
    /// Model kind of agents that fit one.
    pub fn model_kind(&self) -> Option<&ModelKind> {
        match self {
            AgentSpec::RofuUcb1 => None,
            AgentSpec::RofuAscent { model, .. }
            | AgentSpec::RofuLinucb { model }
            | AgentSpec::RofuNtk { model, .. }
            | AgentSpec::EpsilonGreedy { model, .. }
            | AgentSpec::Greedy { model, .. }
            | AgentSpec::NeuralUcbFull { model, .. }
            | AgentSpec::NeuralUcbDiag { model, .. } => Some(model),
        }
    }

    /// Training configuration of agents that retrain.
    pub fn train_config(&self) -> Option<&TrainConfig> {
        match self {
            AgentSpec::RofuUcb1 | AgentSpec::RofuLinucb { .. } => None,
            AgentSpec::RofuAscent { train, .. }
            | AgentSpec::RofuNtk { train, .. }
            | AgentSpec::EpsilonGreedy { train, .. }
            | AgentSpec::Greedy { train, .. }
            | AgentSpec::NeuralUcbFull { train, .. }
            | AgentSpec::NeuralUcbDiag { train, .. } => Some(train),
        }
    }

    /// Compiles the agent's model for an environment shape.
    pub fn model_for(&self, env: &Env) -> Result<Option<Model>> {
        self.model_kind()
            .map(|kind| {
                Model::new(ModelSpec {
                    kind: kind.clone(),
                    context_dim: env.context_dim(),
                    arm_count: env.arm_count(),
                })
                .map_err(HarnessError::from)
            })
            .transpose()
    }
}

/// Network width `m`: the first hidden width, or 1 without hidden layers.
fn default_width(kind: &ModelKind) -> usize {
    match kind {
        ModelKind::Mlp { layer_widths, .. } if layer_widths.len() > 2 => layer_widths[1],
        _ => 1,
    }
}

/// Instantiates the agent for an environment and run seeds.
pub fn build_agent(spec: &AgentSpec, env: &Env, seeds: RunSeeds) -> Result<Box<dyn Agent>> {
    let wrap = |e: RofuError| HarnessError::InvalidAgent(e.to_string());
    let model = spec.model_for(env)?;
    let agent: Box<dyn Agent> = match (spec, model) {
        (AgentSpec::RofuUcb1, _) => Box::new(RofuAgent::ucb1(env.arm_count())),
        (AgentSpec::RofuAscent { rofu, train, .. }, Some(model)) => Box::new(
            RofuAgent::ascent(model, rofu.clone(), train.clone(), seeds.agent, seeds.trainer).map_err(wrap)?,
        ),
        (AgentSpec::RofuLinucb { .. }, Some(model)) => Box::new(RofuAgent::linucb(model).map_err(wrap)?),
        (
            AgentSpec::RofuNtk {
                model: kind,
                gamma,
                lambda,
                width_m,
                train,
                design,
            },
            Some(model),
        ) => Box::new(
            RofuAgent::ntk(
                model,
                *gamma,
                *lambda,
                width_m.unwrap_or_else(|| default_width(kind)),
                train.clone(),
                *design,
                seeds.agent,
                seeds.trainer,
            )
            .map_err(wrap)?,
        ),
        (AgentSpec::EpsilonGreedy { epsilon, train, .. }, Some(model)) => Box::new(
            EpsilonGreedyAgent::new(model, train.clone(), *epsilon, seeds.agent, seeds.trainer).map_err(wrap)?,
        ),
        (AgentSpec::Greedy { train, .. }, Some(model)) => {
            Box::new(EpsilonGreedyAgent::new(model, train.clone(), 0.0, seeds.agent, seeds.trainer).map_err(wrap)?)
        }
        (
            AgentSpec::NeuralUcbFull {
                model: kind,
                gamma,
                lambda,
                width_m,
                train,
            }
            | AgentSpec::NeuralUcbDiag {
                model: kind,
                gamma,
                lambda,
                width_m,
                train,
            },
            Some(model),
        ) => Box::new(
            NeuralUcbAgent::new(
                model,
                train.clone(),
                *gamma,
                *lambda,
                width_m.unwrap_or_else(|| default_width(kind)),
                matches!(spec, AgentSpec::NeuralUcbDiag { .. }),
                seeds.agent,
                seeds.trainer,
            )
            .map_err(wrap)?,
        ),
        (_, None) => unreachable!("every model-based agent has a model kind"),
    };
    Ok(agent)
}

/// Short stable hash of a serializable value.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("specs serialize");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// What happened in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub arm: usize,
    pub reward: f64,
    pub ucb: f64,
    pub bonus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub env_fingerprint: String,
    pub agent_fingerprint: String,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub cumulative_regret: Vec<f64>,
    pub wall_time_ms: u128,
}

impl RunResult {
    pub fn horizon(&self) -> usize {
        self.records.len()
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }
}

/// Plays `horizon` rounds of `agent_spec` on the environment of `seed`.
///
/// Regret increments use the true means. The environment and the agent use
/// independent sub-seeds of `seed`.
pub fn run_experiment(env_spec: &EnvSpec, agent_spec: &AgentSpec, horizon: usize, seed: u64) -> Result<RunResult> {
    let seeds = RunSeeds::new(seed);
    let env = Env::new(env_spec.clone(), seeds.env)?;
    let mut agent = build_agent(agent_spec, &env, seeds)?;
    run_with(&env, agent.as_mut(), horizon, seed, fingerprint(env_spec), fingerprint(agent_spec))
}

/// Runs an already-built agent on an environment.
pub fn run_with(
    env: &Env,
    agent: &mut dyn Agent,
    horizon: usize,
    seed: u64,
    env_fingerprint: String,
    agent_fingerprint: String,
) -> Result<RunResult> {
    if horizon == 0 {
        return Err(HarnessError::InvalidAgent("horizon must be at least 1".into()));
    }
    if agent.arm_count() != env.arm_count() {
        return Err(HarnessError::InvalidAgent(format!(
            "agent has {} arms, environment {}",
            agent.arm_count(),
            env.arm_count()
        )));
    }
    let start = Instant::now();
    let mut records = Vec::with_capacity(horizon);
    let mut cumulative_regret = Vec::with_capacity(horizon);
    let mut regret = 0.0;
    for t in 0..horizon as u64 {
        let context = env.context_at(t)?;
        let decision = agent
            .decide(&context, t)
            .map_err(|source| HarnessError::Agent { round: t, source })?;
        let means = env.means(t, &context)?;
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let reward = means[decision.arm] + env.noise(t, decision.arm);
        regret += best - means[decision.arm];
        cumulative_regret.push(regret);
        let (ucb, bonus) = decision.chosen().map_or((means[decision.arm], 0.0), |e| (e.ucb, e.bonus));
        records.push(RoundRecord {
            arm: decision.arm,
            reward,
            ucb,
            bonus,
        });
        agent
            .observe(Transition::new(context, decision.arm, reward), t)
            .map_err(|source| HarnessError::Agent { round: t, source })?;
    }
    Ok(RunResult {
        env_fingerprint,
        agent_fingerprint,
        seed,
        records,
        cumulative_regret,
        wall_time_ms: start.elapsed().as_millis(),
    })
}

/// Runs every seed, spreading seeds over up to `threads` worker threads.
/// Results come back in seed order.
pub fn run_seeds(
    env_spec: &EnvSpec,
    agent_spec: &AgentSpec,
    horizon: usize,
    seeds: &[u64],
    threads: usize,
) -> Vec<Result<RunResult>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    let workers = threads.clamp(1, seeds.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let result = run_experiment(env_spec, agent_spec, horizon, seeds[i]);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

/// Worker count from the machine's available parallelism.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

/// Fits `theta'` on `samples` offline contexts with every arm labelled by its
/// true mean, starting from a fresh initialization.
pub fn train_offline_model(
    model: &Model,
    env: &Env,
    samples: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ParamVector> {
    let mut data = Vec::with_capacity(samples * env.arm_count());
    for i in 0..samples as u64 {
        let x = env.offline_context(i)?;
        for (arm, mean) in env.offline_means(i, &x)?.into_iter().enumerate() {
            data.push(Transition::new(x.clone(), arm, mean));
        }
    }
    let init = model.init_params(&mut seeding::rng_for(seed, "offline_init", 0));
    let mut rng = seeding::rng_for(seed, "offline_train", 0);
    Ok(models::train(model, &init, &init, &data, cfg, &mut rng)?)
}

/// Splits a run's regret into the part caused by the offline model's
/// greedy choice (`regret_I`) and the remainder (`regret_II`).
pub fn regret_decomposition(run: &RunResult, model: &Model, theta_prime: &[f64], env: &Env) -> Result<(f64, f64)> {
    let mut regret_1 = 0.0;
    let mut regret_2 = 0.0;
    for (t, record) in run.records.iter().enumerate() {
        let x = env.context_at(t as u64)?;
        let means = env.means(t as u64, &x)?;
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values = (0..env.arm_count())
            .map(|a| model.forward(theta_prime, &x, a))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let offline_arm = crate::rofu::select_action(&values).map_err(|source| HarnessError::Agent {
            round: t as u64,
            source,
        })?;
        regret_1 += best - means[offline_arm];
        regret_2 += means[offline_arm] - means[record.arm];
    }
    Ok((regret_1, regret_2))
}

/// Pointwise statistics over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub env_fingerprint: String,
    pub agent_fingerprint: String,
    pub seeds: Vec<u64>,
    pub mean_regret: Vec<f64>,
    pub std_regret: Vec<f64>,
    pub final_regrets: Vec<f64>,
    pub mean_bonus: Vec<f64>,
    pub wall_time_ms: u128,
}

impl AggregateResult {
    pub fn horizon(&self) -> usize {
        self.mean_regret.len()
    }

    /// Mean bonus over zero-based rounds `range`.
    pub fn mean_bonus_over(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.mean_bonus[range];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

/// Mean and sample standard deviation (`n - 1`) across runs, per round.
pub fn aggregate(runs: &[RunResult]) -> Result<AggregateResult> {
    let first = runs
        .first()
        .ok_or_else(|| HarnessError::FingerprintMismatch("no runs to aggregate".into()))?;
    if runs.len() < 2 {
        return Err(HarnessError::FingerprintMismatch(
            "at least two runs are needed for a standard deviation".into(),
        ));
    }
    for run in runs {
        if run.env_fingerprint != first.env_fingerprint || run.agent_fingerprint != first.agent_fingerprint {
            return Err(HarnessError::FingerprintMismatch(format!(
                "seed {} has env/agent {}/{}, seed {} has {}/{}",
                run.seed,
                run.env_fingerprint,
                run.agent_fingerprint,
                first.seed,
                first.env_fingerprint,
                first.agent_fingerprint
            )));
        }
        if run.horizon() != first.horizon() {
            return Err(HarnessError::FingerprintMismatch(format!(
                "horizons {} and {} differ",
                first.horizon(),
                run.horizon()
            )));
        }
    }
    let n = runs.len() as f64;
    let horizon = first.horizon();
    let mut mean_regret = vec![0.0; horizon];
    let mut std_regret = vec![0.0; horizon];
    let mut mean_bonus = vec![0.0; horizon];
    for t in 0..horizon {
        let mean = runs.iter().map(|r| r.cumulative_regret[t]).sum::<f64>() / n;
        let var = runs.iter().map(|r| (r.cumulative_regret[t] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        mean_regret[t] = mean;
        std_regret[t] = var.sqrt();
        mean_bonus[t] = runs.iter().map(|r| r.records[t].bonus).sum::<f64>() / n;
    }
    Ok(AggregateResult {
        env_fingerprint: first.env_fingerprint.clone(),
        agent_fingerprint: first.agent_fingerprint.clone(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        mean_regret,
        std_regret,
        final_regrets: runs.iter().map(RunResult::final_regret).collect(),
        mean_bonus,
        wall_time_ms: runs.iter().map(|r| r.wall_time_ms).sum(),
    })
}

/// Float formatting used in every output file (17 significant digits).
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub const CURVES_HEADER: &str = "round,mean_regret,std_regret,mean_bonus";

/// `curves.csv` contents; rounds are numbered from 1.
pub fn curves_csv(agg: &AggregateResult) -> String {
    let mut out = String::with_capacity(80 * (agg.horizon() + 1));
    out.push_str(CURVES_HEADER);
    out.push('\n');
    for t in 0..agg.horizon() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            t + 1,
            fmt_float(agg.mean_regret[t]),
            fmt_float(agg.std_regret[t]),
            fmt_float(agg.mean_bonus[t])
        );
    }
    out
}

/// Contents of `run_meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub env_fingerprint: String,
    pub agent_fingerprint: String,
    pub final_regrets: Vec<String>,
    pub git_describe: String,
    pub wall_time_ms: u128,
}

impl RunMeta {
    pub fn new(agg: &AggregateResult, config: serde_json::Value) -> Self {
        Self {
            config,
            seeds: agg.seeds.clone(),
            env_fingerprint: agg.env_fingerprint.clone(),
            agent_fingerprint: agg.agent_fingerprint.clone(),
            final_regrets: agg.final_regrets.iter().map(|&v| fmt_float(v)).collect(),
            git_describe: git_describe(),
            wall_time_ms: agg.wall_time_ms,
        }
    }
}

/// `git describe --always --dirty` of the working directory, or `unknown`.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes `curves.csv` and `run_meta.json` into `out_dir`.
pub fn persist(agg: &AggregateResult, meta: &RunMeta, out_dir: &Path) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let curves = out_dir.join("curves.csv");
    std::fs::write(&curves, curves_csv(agg)).map_err(io(&curves))?;
    let meta_path = out_dir.join("run_meta.json");
    let json = serde_json::to_string_pretty(meta).expect("meta serializes");
    std::fs::write(&meta_path, json + "\n").map_err(io(&meta_path))?;
    Ok(())
}
