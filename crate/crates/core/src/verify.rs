//! Equivalence suites comparing the estimators against independent oracles.
//!
//! The oracles here deliberately avoid the code paths they check: dense
//! Gauss-Jordan elimination instead of Cholesky and Sherman-Morrison,
//! golden-section search instead of closed forms, central differences
//! instead of backpropagation, and an explicit ascent on the linearized
//! neural objective.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, Matrix, PsdInverseState};
use crate::models::{
    self, Activation, BatchSize, FeatureMapSpec, Model, ModelKind, ModelSpec, ParamVector, RegSpec, Transition,
};
use crate::rofu::{self, ArmStats, DesignMode, NtkState, RofuConfig, StepSchedule};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Linucb,
    Ucb1,
    Ntk,
    Gradcheck,
    Linalg,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Linucb, Suite::Ucb1, Suite::Ntk, Suite::Gradcheck, Suite::Linalg];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Linucb => "linucb",
            Suite::Ucb1 => "ucb1",
            Suite::Ntk => "ntk",
            Suite::Gradcheck => "gradcheck",
            Suite::Linalg => "linalg",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|s| s.name()).collect()
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite {s:?}; valid suites: {}", Self::names().join(", ")))
    }
}

/// Outcome of one comparison over many cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    /// Inputs of the first case beyond tolerance.
    pub failure: Option<String>,
}

impl Check {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            cases: 0,
            max_deviation: 0.0,
            tolerance,
            failure: None,
        }
    }

    /// Records a case; `describe` is only called when the case fails.
    fn record(&mut self, deviation: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        let bad = !(deviation <= self.tolerance);
        if bad || deviation > self.max_deviation {
            self.max_deviation = if deviation.is_nan() { f64::INFINITY } else { deviation.max(self.max_deviation) };
        }
        if bad && self.failure.is_none() {
            self.failure = Some(describe());
        }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_deviation <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: max deviation {:.3e} over {} cases (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_deviation,
            self.cases,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

/// Runs a suite with its default case counts.
pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let checks = match suite {
        Suite::Linucb => linucb_suite(50, seed),
        Suite::Ucb1 => ucb1_suite(10_000, seed),
        Suite::Ntk => ntk_suite(20, seed),
        Suite::Gradcheck => gradcheck_suite(100, seed),
        Suite::Linalg => linalg_suite(seed),
    };
    SuiteReport {
        suite,
        checks,
        elapsed: start.elapsed(),
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn dense_inverse(a: &Matrix) -> Vec<Vec<f64>> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .expect("nonempty");
        m.swap(c, p);
        let pivot = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= pivot);
        for r in 0..n {
            if r != c {
                let factor = m[r][c];
                if factor != 0.0 {
                    let pivot_row = m[c].clone();
                    m[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= factor * p);
                }
            }
        }
    }
    m.into_iter().map(|row| row[n..].to_vec()).collect()
}

fn dense_apply(inv: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    inv.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Closed-form LinUCB against a dense recomputation and against ascent.
pub fn linucb_suite(instances: usize, seed: u64) -> Vec<Check> {
    let mut closed = Check::new("linucb closed form vs dense oracle", 1e-10);
    let mut ascent = Check::new("linucb ascent (M=2000, kappa=1e-3) vs closed form", 1e-4);
    let mut identity = Check::new("linucb optimistic - base vs quad form", 1e-10);
    for i in 0..instances {
        let mut rng = seeding::rng_for(seed, "verify_linucb", i as u64);
        let d = rng.random_range(2..=8);
        let n = rng.random_range(50..=200);
        let model = Model::new(ModelSpec {
            kind: ModelKind::Linear {
                feature_map: FeatureMapSpec::DisjointOnehot,
            },
            context_dim: d,
            arm_count: 1,
        })
        .expect("valid linear spec");
        let theta_true = gaussian_vec(&mut rng, d);
        let data: Vec<Transition> = (0..n)
            .map(|_| {
                let x = gaussian_vec(&mut rng, d);
                let noise: f64 = StandardNormal.sample(&mut rng);
                let r = linalg::dot(&x, &theta_true) + 0.1 * noise;
                Transition::new(x, 0, r)
            })
            .collect();
        let query = gaussian_vec(&mut rng, d);

        let theta_ridge = models::ridge_fit(&model, &data, 1.0).expect("ridge fit");
        let mut design = PsdInverseState::scaled_identity(d, 1.0).expect("identity");
        for t in &data {
            design.rank1_update(&t.context).expect("update");
        }
        let est = rofu::rofu_ucb_linucb(&query, &theta_ridge, &design).expect("closed form");

        let mut z = Matrix::identity(d);
        let mut b = vec![0.0; d];
        for t in &data {
            z.add_outer(&t.context, 1.0);
            b.iter_mut().zip(&t.context).for_each(|(bi, xi)| *bi += xi * t.reward);
        }
        let zinv = dense_inverse(&z);
        let theta_dense = dense_apply(&zinv, &b);
        let width = linalg::dot(&query, &dense_apply(&zinv, &query));
        let oracle = linalg::dot(&query, &theta_dense) + width.sqrt();
        let describe = || format!("instance {i}: d={d}, n={n}, query={query:?}, theta_ridge={:?}", &theta_ridge[..]);
        closed.record((est.ucb - oracle).abs(), describe);
        identity.record(
            (est.optimistic_value - est.base_value - design.quad_form(&query).expect("quad")).abs(),
            describe,
        );

        let cfg = RofuConfig {
            eta: 0.5,
            g_exponent: 0.5,
            ascent_steps: 2000,
            ascent_step_size: 1e-3,
            ascent_batch: Some(BatchSize::Full),
            reg: RegSpec::RidgePlusScaledMse,
            step_schedule: StepSchedule::Constant,
        };
        let anchor = vec![0.0; d];
        let asc = rofu::rofu_ucb_ascent(&model, &theta_ridge, &anchor, &query, 0, &data, &cfg, 0).expect("ascent");
        ascent.record((asc.ucb - est.ucb).abs(), describe);
    }
    vec![closed, identity, ascent]
}

/// UCB1 closed form against the analytic value, golden-section search of
/// the scalar objective, and gradient ascent on the per-arm model.
pub fn ucb1_suite(triples: usize, seed: u64) -> Vec<Check> {
    let mut analytic = Check::new("ucb1 closed form vs analytic expression", 0.0);
    let mut golden = Check::new("ucb1 closed form vs golden-section maximizer", 1e-6);
    let mut ascent = Check::new("ucb1 closed form vs ascent on per-arm model", 1e-6);
    let mut rng = seeding::rng_for(seed, "verify_ucb1", 0);
    for _ in 0..triples {
        let mean = rng.random_range(-1.0..1.0);
        let pulls = rng.random_range(1..=1000u64);
        let t = rng.random_range(2.0..1e6);
        let stats = ArmStats {
            pulls,
            reward_sum: mean * pulls as f64,
        };
        let est = rofu::ucb1_value(&stats, t).expect("pulled arm");
        let expected = stats.mean() + (8.0 * t.ln() / pulls as f64).sqrt();
        let ulps = (est.ucb - expected).abs() / (f64::EPSILON * expected.abs().max(1.0));
        analytic.record(ulps, || format!("mean={mean}, pulls={pulls}, t={t}"));
    }

    for k in 0..triples / 10 {
        let n = rng.random_range(1..=100usize);
        let t: f64 = rng.random_range(2.0..1e4);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = rewards.iter().sum::<f64>() / n as f64;
        let eta = 1.0 / (16.0 * t.ln());
        let objective = |theta: f64| theta - eta * rewards.iter().map(|r| (theta - r) * (theta - r)).sum::<f64>();
        let hi = mean + 2.0 * (1.0 / (2.0 * eta * n as f64)) + 1.0;
        let maximizer = rofu::golden_section_max(objective, mean - 1.0, hi, 1e-12);
        let oracle = mean + (maximizer - mean).max(0.0).sqrt();
        let stats = ArmStats {
            pulls: n as u64,
            reward_sum: rewards.iter().sum(),
        };
        let est = rofu::ucb1_value(&stats, t).expect("pulled arm");
        golden.record((est.ucb - oracle).abs(), || format!("case {k}: t={t}, rewards={rewards:?}"));
    }

    for k in 0..20u64 {
        let mut rng = seeding::rng_for(seed, "verify_ucb1_ascent", k);
        let arms = rng.random_range(2..=5usize);
        let model = Model::new(ModelSpec {
            kind: ModelKind::Linear {
                feature_map: FeatureMapSpec::DisjointOnehot,
            },
            context_dim: 1,
            arm_count: arms,
        })
        .expect("valid spec");
        let mut data = Vec::new();
        for a in 0..arms {
            for _ in 0..rng.random_range(1..=30) {
                data.push(Transition::new(vec![1.0], a, rng.random_range(-1.0..1.0)));
            }
        }
        let mut stats = vec![ArmStats::default(); arms];
        for tr in &data {
            stats[tr.arm].record(tr.reward);
        }
        let theta: Vec<f64> = stats.iter().map(ArmStats::mean).collect();
        let t = data.len() as f64;
        let eta = 1.0 / (16.0 * t.ln());
        // every arm's parameter moves, so the step must suit the most-pulled arm
        let max_pulls = stats.iter().map(|s| s.pulls).max().unwrap_or(1);
        for (a, s) in stats.iter().enumerate() {
            let cfg = RofuConfig {
                eta,
                g_exponent: 0.5,
                ascent_steps: 4000,
                ascent_step_size: 0.5 / (2.0 * eta * max_pulls as f64),
                ascent_batch: Some(BatchSize::Full),
                reg: RegSpec::ScaledMse,
                step_schedule: StepSchedule::Constant,
            };
            let asc = rofu::rofu_ucb_ascent(&model, &theta, &theta, &[1.0], a, &data, &cfg, 0).expect("ascent");
            let closed = rofu::ucb1_value(s, t).expect("pulled");
            ascent.record((asc.ucb - closed.ucb).abs(), || format!("case {k}, arm {a}: data={data:?}"));
        }
    }
    vec![analytic, golden, ascent]
}

/// Linearized NTK: the two closed-form paths against each other and against
/// explicit ascent on the linearized objective.
pub fn ntk_suite(instances: usize, seed: u64) -> Vec<Check> {
    let mut two_path = Check::new("ntk closed-form theta-hat vs direct bonus", 1e-10);
    let mut ascent = Check::new("ntk linearized ascent (M=3000) vs closed form", 1e-4);
    let mut modes = Check::new("ntk running vs recompute design with frozen theta", 1e-9);
    for i in 0..instances {
        let mut rng = seeding::rng_for(seed, "verify_ntk", i as u64);
        let d = rng.random_range(2..=4);
        let arms = rng.random_range(2..=3);
        let width = rng.random_range(4..=8);
        let activation = if rng.random::<bool>() { Activation::Tanh } else { Activation::Relu };
        let model = Model::new(ModelSpec {
            kind: ModelKind::Mlp {
                layer_widths: vec![d, width, width, arms],
                activation,
                bias: rng.random::<bool>(),
            },
            context_dim: d,
            arm_count: arms,
        })
        .expect("valid mlp");
        let p = model.param_count();
        let theta_prev = model.init_params(&mut rng);
        let n = rng.random_range(1..=50);
        let data: Vec<Transition> = (0..n)
            .map(|_| Transition::new(gaussian_vec(&mut rng, d), rng.random_range(0..arms), rng.random_range(-1.0..1.0)))
            .collect();
        let grads: Vec<ParamVector> = data
            .iter()
            .map(|t| model.grad_params(&theta_prev, &t.context, t.arm).expect("grad"))
            .collect();
        let m = width;
        let grad_mass: f64 = grads.iter().map(|h| h.norm_sq()).sum();
        let lambda = rng.random_range(0.5..2.0f64).max(grad_mass / (50.0 * m as f64));
        let gamma = rng.random_range(0.05..1.0);

        // theta_0 placed so that theta_prev satisfies the training optimality condition.
        let mut theta0 = theta_prev.clone();
        for (t, h) in data.iter().zip(&grads) {
            let resid = model.forward(&theta_prev, &t.context, t.arm).expect("fwd") - t.reward;
            theta0.iter_mut().zip(h.iter()).for_each(|(c, hj)| *c += resid * hj / (m as f64 * lambda));
        }

        let mut state = NtkState::new(theta0.clone(), lambda, m, gamma).expect("state");
        state.theta_prev = theta_prev.clone();
        let mut running = state.clone();
        rofu::ntk_design_update(&mut state, &model, &data, DesignMode::RecomputeAtCurrent).expect("recompute");
        for k in 1..=data.len() {
            rofu::ntk_design_update(&mut running, &model, &data[..k], DesignMode::Running).expect("running");
        }
        modes.record(running.design.inverse().frobenius_distance(state.design.inverse()), || {
            format!("instance {i}: p={p}, n={n}")
        });

        let x = gaussian_vec(&mut rng, d);
        let arm = rng.random_range(0..arms);
        let est = rofu::rofu_ucb_ntk_linearized(&state, &model, &x, arm).expect("ntk");
        let via_theta_hat = est.base_value + (est.optimistic_value - est.base_value).max(0.0).sqrt();
        let describe = || format!("instance {i}: p={p}, n={n}, m={m}, lambda={lambda}, gamma={gamma}, x={x:?}, arm={arm}");
        two_path.record((via_theta_hat - est.ucb).abs(), describe);

        // explicit ascent on f~(theta) - eta R~(theta)
        let eta = state.eta();
        let h = model.grad_params(&theta_prev, &x, arm).expect("grad");
        let fitted: Vec<f64> = data
            .iter()
            .map(|t| model.forward(&theta_prev, &t.context, t.arm).expect("fwd"))
            .collect();
        let kappa = 1.0 / (2.0 * eta * (m as f64 * lambda + grad_mass));
        let mut theta = theta_prev.to_vec();
        for _ in 0..3000 {
            let mut g = h.to_vec();
            for ((t, hi), fi) in data.iter().zip(&grads).zip(&fitted) {
                let lin: f64 = fi + hi.iter().zip(&theta).zip(theta_prev.iter()).map(|((a, b), c)| a * (b - c)).sum::<f64>();
                let resid = lin - t.reward;
                g.iter_mut().zip(hi.iter()).for_each(|(gj, hj)| *gj -= eta * 2.0 * resid * hj);
            }
            for ((gj, tj), cj) in g.iter_mut().zip(&theta).zip(theta0.iter()) {
                *gj -= eta * 2.0 * m as f64 * lambda * (tj - cj);
            }
            theta.iter_mut().zip(&g).for_each(|(tj, gj)| *tj += kappa * gj);
        }
        let gain: f64 = h.iter().zip(&theta).zip(theta_prev.iter()).map(|((a, b), c)| a * (b - c)).sum();
        let ascent_ucb = est.base_value + gain.max(0.0).sqrt();
        ascent.record((ascent_ucb - est.ucb).abs(), describe);
    }
    vec![two_path, modes, ascent]
}

/// Maximum relative error of `grad_params` against central differences.
pub fn gradient_error(model: &Model, theta: &[f64], x: &[f64], arm: usize, step: f64) -> f64 {
    let g = model.grad_params(theta, x, arm).expect("grad");
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..theta.len() {
        probe[j] = theta[j] + step;
        let up = model.forward(&probe, x, arm).expect("fwd");
        probe[j] = theta[j] - step;
        let down = model.forward(&probe, x, arm).expect("fwd");
        probe[j] = theta[j];
        let fd = (up - down) / (2.0 * step);
        let rel = (g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Model kinds covered by the gradient check.
pub fn gradcheck_models() -> Vec<(&'static str, ModelSpec)> {
    let mlp = |widths: Vec<usize>, activation, bias, d, a| ModelSpec {
        kind: ModelKind::Mlp {
            layer_widths: widths,
            activation,
            bias,
        },
        context_dim: d,
        arm_count: a,
    };
    vec![
        (
            "linear/disjoint_onehot",
            ModelSpec {
                kind: ModelKind::Linear {
                    feature_map: FeatureMapSpec::DisjointOnehot,
                },
                context_dim: 4,
                arm_count: 3,
            },
        ),
        (
            "linear/shared",
            ModelSpec {
                kind: ModelKind::Linear {
                    feature_map: FeatureMapSpec::Shared,
                },
                context_dim: 4,
                arm_count: 3,
            },
        ),
        (
            "kernel_features/random_fourier",
            ModelSpec {
                kind: ModelKind::KernelFeatures {
                    feature_map: FeatureMapSpec::RandomFourier {
                        features: 12,
                        bandwidth: 0.8,
                        seed: 3,
                    },
                },
                context_dim: 3,
                arm_count: 2,
            },
        ),
        ("mlp/tanh/per_arm", mlp(vec![3, 5, 4, 2], Activation::Tanh, true, 3, 2)),
        ("mlp/relu/per_arm", mlp(vec![3, 6, 6, 3], Activation::Relu, true, 3, 3)),
        ("mlp/tanh/joint", mlp(vec![5, 6, 1], Activation::Tanh, false, 3, 2)),
    ]
}

pub fn gradcheck_suite(draws: usize, seed: u64) -> Vec<Check> {
    let mut check = Check::new("grad_params vs central differences (relative)", 1e-4);
    for (name, spec) in gradcheck_models() {
        let model = Model::new(spec).expect("valid spec");
        for k in 0..draws {
            let mut rng = seeding::rng_for(seed, name, k as u64);
            let mut theta = model.init_params(&mut rng);
            theta.iter_mut().for_each(|v| *v += 0.3 * rng.random_range(-1.0..1.0));
            let x = gaussian_vec(&mut rng, model.context_dim());
            let arm = rng.random_range(0..model.arm_count());
            let err = gradient_error(&model, &theta, &x, arm, 1e-5);
            check.record(err, || format!("{name}, draw {k}: theta={:?}, x={x:?}, arm={arm}", &theta[..]));
        }
    }
    vec![check]
}

pub fn linalg_suite(seed: u64) -> Vec<Check> {
    let mut chain = Check::new("Sherman-Morrison chain (20 updates, d=5) vs re-inversion (Frobenius)", 1e-8);
    let mut solve = Check::new("psd_solve residual (max norm)", 1e-8);
    for k in 0..20u64 {
        let mut rng = seeding::rng_for(seed, "verify_linalg", k);
        let mut state = PsdInverseState::scaled_identity(5, 1.0).expect("identity");
        let mut dense = Matrix::identity(5);
        for _ in 0..20 {
            let u = gaussian_vec(&mut rng, 5);
            state.rank1_update(&u).expect("update");
            dense.add_outer(&u, 1.0);
        }
        let reinv = dense_inverse(&dense);
        let dist: f64 = (0..5)
            .flat_map(|i| (0..5).map(move |j| (i, j)))
            .map(|(i, j)| (state.inverse()[(i, j)] - reinv[i][j]).powi(2))
            .sum::<f64>()
            .sqrt();
        chain.record(dist, || format!("chain {k}"));

        let n = rng.random_range(1..=10);
        let b: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut rng, n)).collect();
        let mut a = Matrix::identity(n);
        for row in &b {
            a.add_outer(row, 1.0);
        }
        let rhs = gaussian_vec(&mut rng, n);
        let x = linalg::psd_solve(&a, &rhs).expect("spd");
        let ax = a.mul_vec(&x).expect("dims");
        let resid = ax.iter().zip(&rhs).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        solve.record(resid, || format!("solve {k}: n={n}, rhs={rhs:?}"));
    }
    vec![chain, solve]
}
