//! Worked examples checked against independent oracles.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use rofu::envs::{Env, EnvSpec};
use rofu::harness::{self, aggregate, regret_decomposition, AgentSpec, RoundRecord, RunResult};
use rofu::linalg::{self, Matrix};
use rofu::models::{
    self, Activation, BatchSize, FeatureMapSpec, LossScale, Model, ModelKind, ModelSpec, ParamVector, RegSpec,
    TrainConfig, Transition,
};
use rofu::rofu::{rofu_ucb_ascent, RofuConfig, StepSchedule};
use rofu::seeding::{rng_for, RunSeeds};

fn linear(d: usize, arms: usize) -> Model {
    Model::new(ModelSpec {
        kind: ModelKind::Linear {
            feature_map: FeatureMapSpec::DisjointOnehot,
        },
        context_dim: d,
        arm_count: arms,
    })
    .unwrap()
}

fn mlp(widths: Vec<usize>, act: Activation) -> Model {
    let d = widths[0];
    let arms = *widths.last().unwrap();
    Model::new(ModelSpec {
        kind: ModelKind::Mlp {
            layer_widths: widths,
            activation: act,
            bias: true,
        },
        context_dim: d,
        arm_count: arms,
    })
    .unwrap()
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

/// `x` placed in block `a`, written out by hand.
fn disjoint_features(x: &[f64], arm: usize, arms: usize) -> Vec<f64> {
    let mut phi = vec![0.0; x.len() * arms];
    phi[arm * x.len()..(arm + 1) * x.len()].copy_from_slice(x);
    phi
}

fn random_linear_data(rng: &mut impl Rng, n: usize, d: usize, arms: usize, noise: f64) -> Vec<Transition> {
    let truth = gaussian(rng, d * arms);
    (0..n)
        .map(|_| {
            let x = gaussian(rng, d);
            let a = rng.random_range(0..arms);
            let r = linalg::dot(&disjoint_features(&x, a, arms), &truth) + noise * gaussian(rng, 1)[0];
            Transition::new(x, a, r)
        })
        .collect()
}

#[test]
fn mse_matches_summation_loop() {
    let mut rng = rng_for(1, "mse", 0);
    let model = linear(3, 2);
    let data = random_linear_data(&mut rng, 10, 3, 2, 0.3);
    let theta = gaussian(&mut rng, 6);
    let mut sum = 0.0;
    for t in &data {
        let mut f = 0.0;
        for j in 0..3 {
            f += theta[t.arm * 3 + j] * t.context[j];
        }
        sum += (f - t.reward) * (f - t.reward);
    }
    let got = models::mse(&model, &theta, &data).unwrap();
    assert!((got - sum / 10.0).abs() <= 1e-12, "{got} vs {}", sum / 10.0);
}

#[test]
fn regularizer_gradient_matches_finite_differences() {
    let mut rng = rng_for(2, "reg", 0);
    let model = linear(4, 3);
    let data = random_linear_data(&mut rng, 25, 4, 3, 0.2);
    let theta = gaussian(&mut rng, 12);
    let anchor = gaussian(&mut rng, 12);
    for reg in [
        RegSpec::ScaledMse,
        RegSpec::RidgePlusScaledMse,
        RegSpec::AnchoredRidgePlusSse { lambda: 0.7 },
    ] {
        let (_, grad) = models::regularizer_value_and_grad(&model, &theta, &data, reg, &anchor).unwrap();
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut up = theta.clone();
            up[i] += h;
            let mut down = theta.clone();
            down[i] -= h;
            let fu = models::regularizer_value_and_grad(&model, &up, &data, reg, &anchor).unwrap().0;
            let fd = models::regularizer_value_and_grad(&model, &down, &data, reg, &anchor).unwrap().0;
            let numeric = (fu - fd) / (2.0 * h);
            let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel <= 1e-4, "{reg:?} coordinate {i}: {numeric} vs {}", grad[i]);
        }
    }
}

#[test]
fn linear_training_reaches_least_squares() {
    let mut rng = rng_for(3, "train", 0);
    let model = linear(3, 1);
    let data = random_linear_data(&mut rng, 20, 3, 1, 0.0);
    let cfg = TrainConfig {
        step_size: 0.005,
        steps: 500,
        batch_size: BatchSize::Full,
        ..TrainConfig::default()
    };
    let zero = ParamVector::zeros(3);
    let theta = models::train(&model, &zero, &zero, &data, &cfg, &mut rng).unwrap();
    assert!(models::mse(&model, &theta, &data).unwrap() <= 1e-6);

    let mut xtx = Matrix::zeros(3, 3);
    let mut xty = vec![0.0; 3];
    for t in &data {
        xtx.add_outer(&t.context, 1.0);
        for j in 0..3 {
            xty[j] += t.context[j] * t.reward;
        }
    }
    let exact = linalg::psd_solve(&xtx, &xty).unwrap();
    for j in 0..3 {
        assert!((theta[j] - exact[j]).abs() <= 1e-4);
    }
}

#[test]
fn mlp_training_lowers_the_loss() {
    let mut rng = rng_for(4, "mlp-train", 0);
    let model = mlp(vec![3, 8, 8, 2], Activation::Tanh);
    let data: Vec<Transition> = (0..20)
        .map(|i| {
            let x = gaussian(&mut rng, 3);
            let r = x[0].sin() + 0.5 * x[1] * x[2];
            Transition::new(x, i % 2, r)
        })
        .collect();
    let theta0 = model.init_params(&mut rng);
    let cfg = TrainConfig {
        step_size: 0.05,
        steps: 200,
        loss: LossScale::Mean,
        ..TrainConfig::default()
    };
    let (theta, trace) = models::train_traced(&model, &theta0, &theta0, &data, &cfg, &mut rng).unwrap();
    assert_eq!(trace.len(), 200);
    let final_loss = models::mse(&model, &theta, &data).unwrap();
    assert!(final_loss < models::mse(&model, &theta0, &data).unwrap());
}

#[test]
fn ridge_fit_matches_gradient_descent() {
    let mut rng = rng_for(5, "ridge", 0);
    let model = linear(5, 1);
    let data = random_linear_data(&mut rng, 50, 5, 1, 0.5);
    let exact = models::ridge_fit(&model, &data, 1.0).unwrap();
    let cfg = TrainConfig {
        step_size: 0.005,
        steps: 2000,
        ridge_weight: 1.0,
        ..TrainConfig::default()
    };
    let zero = ParamVector::zeros(5);
    let descended = models::train(&model, &zero, &zero, &data, &cfg, &mut rng).unwrap();
    for j in 0..5 {
        assert!((exact[j] - descended[j]).abs() <= 1e-5, "{j}: {} vs {}", exact[j], descended[j]);
    }
}

#[test]
fn ascent_on_a_concave_objective_climbs() {
    let mut rng = rng_for(6, "ascent", 0);
    let model = linear(3, 2);
    let data = random_linear_data(&mut rng, 40, 3, 2, 0.1);
    let theta_prev = models::ridge_fit(&model, &data, 1.0).unwrap();
    let cfg = RofuConfig {
        eta: 0.5,
        g_exponent: 0.5,
        ascent_steps: 50,
        ascent_step_size: 1e-3,
        ascent_batch: Some(BatchSize::Full),
        reg: RegSpec::RidgePlusScaledMse,
        step_schedule: StepSchedule::Constant,
    };
    let x = gaussian(&mut rng, 3);
    let est = rofu_ucb_ascent(&model, &theta_prev, &theta_prev, &x, 1, &data, &cfg, 0).unwrap();
    assert_eq!(est.ascent_trace.len(), 50);
    assert!(est.ascent_trace.windows(2).all(|w| w[1] >= w[0]));
    assert!(est.bonus > 0.0 && est.ucb > est.base_value);
}

fn synthetic_run(seed: u64, rng: &mut impl Rng, horizon: usize) -> RunResult {
    let mut total = 0.0;
    let mut cumulative = Vec::new();
    let mut records = Vec::new();
    for _ in 0..horizon {
        total += rng.random::<f64>();
        cumulative.push(total);
        records.push(RoundRecord {
            arm: 0,
            reward: 0.0,
            ucb: 0.0,
            bonus: rng.random::<f64>(),
        });
    }
    RunResult {
        env_fingerprint: "env".into(),
        agent_fingerprint: "agent".into(),
        seed,
        records,
        cumulative_regret: cumulative,
        wall_time_ms: 1,
    }
}

#[test]
fn aggregate_matches_direct_recomputation() {
    let mut rng = rng_for(7, "agg", 0);
    let runs: Vec<RunResult> = (0..16).map(|s| synthetic_run(s, &mut rng, 25)).collect();
    let agg = aggregate(&runs).unwrap();
    for t in 0..25 {
        let values: Vec<f64> = runs.iter().map(|r| r.cumulative_regret[t]).collect();
        let mean = values.iter().sum::<f64>() / 16.0;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 15.0;
        let bonus = runs.iter().map(|r| r.records[t].bonus).sum::<f64>() / 16.0;
        assert!((agg.mean_regret[t] - mean).abs() <= 1e-12);
        assert!((agg.std_regret[t] - var.sqrt()).abs() <= 1e-12);
        assert!((agg.mean_bonus[t] - bonus).abs() <= 1e-12);
    }
    assert_eq!(agg.final_regrets.len(), 16);
    assert_eq!(agg.seeds, (0..16).collect::<Vec<_>>());
}

#[test]
fn decomposition_parts_add_up() {
    let env_spec = EnvSpec::mlp_table2();
    let agent = AgentSpec::EpsilonGreedy {
        model: ModelKind::Linear {
            feature_map: FeatureMapSpec::DisjointOnehot,
        },
        epsilon: 0.5,
        train: TrainConfig::default(),
    };
    for seed in 0..3 {
        let run = harness::run_experiment(&env_spec, &agent, 80, seed).unwrap();
        let env = Env::new(env_spec.clone(), RunSeeds::new(seed).env).unwrap();
        let model = mlp(vec![10, 6, 10], Activation::Relu);
        let theta = model.init_params(&mut rng_for(seed, "theta-prime", 0));
        let (r1, r2) = regret_decomposition(&run, &model, &theta, &env).unwrap();
        assert!((r1 + r2 - run.final_regret()).abs() <= 1e-9);
        assert!(r1 >= 0.0);
    }
}

/// Chosen arms of an M = 5 ascent agent on the MLP bandit, recorded from the
/// first verified run.
const GOLDEN_ARMS: [usize; 40] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 8, 9, 3, 0, 8, 0, 9, 1, 0, 1, 5, 5, 2, 8, 4, 4, 8, 5, 8, 1, 8, 8, 3, 8, 8, 0, 8, 8, 8, 9,
];

#[test]
fn mlp_bandit_trace_is_pinned() {
    let agent: AgentSpec = toml::from_str(
        r#"
kind = "rofu_ascent"
model = { kind = "mlp", layer_widths = [10, 8, 10], activation = "relu" }
rofu = { eta = 1.0, ascent_steps = 5, ascent_step_size = 0.05, ascent_batch = 8, reg = { kind = "scaled_mse" }, step_schedule = "data_scaled" }
train = { step_size = 0.05, steps = 5, batch_size = 8, loss = "mean" }
"#,
    )
    .unwrap();
    let run = harness::run_experiment(&EnvSpec::mlp_table2(), &agent, 40, 11).unwrap();
    let arms: Vec<usize> = run.records.iter().map(|r| r.arm).collect();
    assert_eq!(arms, GOLDEN_ARMS, "{arms:?}");
}
