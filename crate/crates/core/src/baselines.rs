//! Comparison agents: epsilon-greedy, greedy and NeuralUCB with either the
//! full gradient design matrix or its diagonal.

use rand::Rng;

use crate::linalg::{self, PsdInverseState};
use crate::models::{self, Model, ModelError, ParamVector, TrainConfig, Transition};
use crate::rofu::{self, Agent, Decision, OfuEstimate, Result, RofuError};
use crate::seeding;

/// Epsilon-greedy choice: uniform over arms with probability `epsilon`,
/// otherwise the arm with the largest fitted value (lowest index on ties).
/// The coin and the uniform draw come from `(seed, round)` only.
pub fn epsilon_greedy_select(
    model: &Model,
    theta: &[f64],
    context: &[f64],
    epsilon: f64,
    seed: u64,
    round: u64,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(RofuError::InvalidConfig(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let mut rng = seeding::rng_for(seed, "epsilon", round);
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..model.arm_count()));
    }
    let values = (0..model.arm_count())
        .map(|a| model.forward(theta, context, a))
        .collect::<Result<Vec<_>, _>>()?;
    rofu::select_action(&values)
}

/// Gradient design of NeuralUCB, `lambda I + (1/m) sum h h'` over
/// decision-time gradients.
#[derive(Debug, Clone)]
pub enum NeuralDesign {
    Full(PsdInverseState),
    /// Only the diagonal, `lambda + (1/m) sum h_j^2`.
    Diagonal(Vec<f64>),
}

impl NeuralDesign {
    pub fn full(dim: usize, lambda: f64) -> Result<Self> {
        Ok(NeuralDesign::Full(PsdInverseState::scaled_identity(dim, lambda)?))
    }

    pub fn diagonal(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(RofuError::InvalidConfig("lambda must be positive".into()));
        }
        Ok(NeuralDesign::Diagonal(vec![lambda; dim]))
    }

    pub fn dim(&self) -> usize {
        match self {
            NeuralDesign::Full(z) => z.dim(),
            NeuralDesign::Diagonal(d) => d.len(),
        }
    }

    /// Adds `(1/m) h h'`.
    pub fn update(&mut self, h: &[f64], m: usize) -> Result<()> {
        self.check(h)?;
        let inv_m = 1.0 / m as f64;
        match self {
            NeuralDesign::Full(z) => {
                let u: Vec<f64> = h.iter().map(|v| v * inv_m.sqrt()).collect();
                z.rank1_update(&u)?;
            }
            NeuralDesign::Diagonal(d) => {
                for (dj, hj) in d.iter_mut().zip(h) {
                    *dj += inv_m * hj * hj;
                }
            }
        }
        Ok(())
    }

    /// `h' Z^-1 h`, clamped at zero.
    pub fn quad_form(&self, h: &[f64]) -> Result<f64> {
        self.check(h)?;
        match self {
            NeuralDesign::Full(z) => Ok(z.quad_form(h)?),
            NeuralDesign::Diagonal(d) => Ok(h.iter().zip(d).map(|(v, dj)| v * v / dj).sum::<f64>().max(0.0)),
        }
    }

    fn check(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                what: "gradient",
                expected: self.dim(),
                got: h.len(),
            }
            .into());
        }
        Ok(())
    }
}

/// `f_theta(x, a) + gamma * sqrt(h' Z^-1 h / m)` with its parts.
pub fn neural_ucb_estimate(
    model: &Model,
    theta_prev: &[f64],
    context: &[f64],
    arm: usize,
    design: &NeuralDesign,
    gamma: f64,
    m: usize,
) -> Result<OfuEstimate> {
    let base = model.forward(theta_prev, context, arm)?;
    let h = model.grad_params(theta_prev, context, arm)?;
    let bonus = gamma * (design.quad_form(&h)? / m as f64).sqrt();
    Ok(OfuEstimate {
        base_value: base,
        optimistic_value: base + bonus * bonus,
        bonus,
        ucb: base + bonus,
        ascent_trace: Vec::new(),
    })
}

pub fn neural_ucb_value(
    model: &Model,
    theta_prev: &[f64],
    context: &[f64],
    arm: usize,
    design: &NeuralDesign,
    gamma: f64,
    m: usize,
) -> Result<f64> {
    Ok(neural_ucb_estimate(model, theta_prev, context, arm, design, gamma, m)?.ucb)
}

/// Epsilon-greedy agent; `epsilon = 0` is the greedy agent.
#[derive(Debug, Clone)]
pub struct EpsilonGreedyAgent {
    model: Model,
    train: TrainConfig,
    epsilon: f64,
    theta: ParamVector,
    theta0: ParamVector,
    data: Vec<Transition>,
    agent_seed: u64,
    trainer_seed: u64,
}

impl EpsilonGreedyAgent {
    pub fn new(model: Model, train: TrainConfig, epsilon: f64, agent_seed: u64, trainer_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(RofuError::InvalidConfig(format!("epsilon {epsilon} outside [0, 1]")));
        }
        train.validate()?;
        let theta0 = model.init_params(&mut seeding::rng_for(agent_seed, "init", 0));
        Ok(Self {
            model,
            train,
            epsilon,
            theta: theta0.clone(),
            theta0,
            data: Vec::new(),
            agent_seed,
            trainer_seed,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

impl Agent for EpsilonGreedyAgent {
    fn arm_count(&self) -> usize {
        self.model.arm_count()
    }

    fn decide(&mut self, context: &[f64], round: u64) -> Result<Decision> {
        let estimates = (0..self.model.arm_count())
            .map(|a| {
                let v = self.model.forward(&self.theta, context, a)?;
                Ok(rofu::combine_bonus(v, v, 0.5))
            })
            .collect::<Result<Vec<_>>>()?;
        let arm = match rofu::forced_arm(round, self.model.arm_count()) {
            Some(arm) => arm,
            None => epsilon_greedy_select(&self.model, &self.theta, context, self.epsilon, self.agent_seed, round)?,
        };
        Ok(Decision { arm, estimates })
    }

    fn observe(&mut self, transition: Transition, round: u64) -> Result<()> {
        self.model.check_data(std::slice::from_ref(&transition))?;
        self.data.push(transition);
        let mut rng = seeding::rng_for(self.trainer_seed, "train", round);
        self.theta = models::train(&self.model, &self.theta, &self.theta0, &self.data, &self.train, &mut rng)?;
        Ok(())
    }
}

/// NeuralUCB: bonus from the running gradient design, retrained each round.
#[derive(Debug, Clone)]
pub struct NeuralUcbAgent {
    model: Model,
    train: TrainConfig,
    gamma: f64,
    width_m: usize,
    design: NeuralDesign,
    theta: ParamVector,
    theta0: ParamVector,
    data: Vec<Transition>,
    trainer_seed: u64,
}

impl NeuralUcbAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: Model,
        train: TrainConfig,
        gamma: f64,
        lambda: f64,
        width_m: usize,
        diagonal: bool,
        agent_seed: u64,
        trainer_seed: u64,
    ) -> Result<Self> {
        train.validate()?;
        if !(gamma > 0.0) || width_m == 0 {
            return Err(RofuError::InvalidConfig("neural ucb needs gamma > 0 and width_m >= 1".into()));
        }
        let p = model.param_count();
        let design = if diagonal {
            NeuralDesign::diagonal(p, lambda)?
        } else {
            NeuralDesign::full(p, lambda)?
        };
        let theta0 = model.init_params(&mut seeding::rng_for(agent_seed, "init", 0));
        Ok(Self {
            model,
            train,
            gamma,
            width_m,
            design,
            theta: theta0.clone(),
            theta0,
            data: Vec::new(),
            trainer_seed,
        })
    }

    pub fn design(&self) -> &NeuralDesign {
        &self.design
    }
}

impl Agent for NeuralUcbAgent {
    fn arm_count(&self) -> usize {
        self.model.arm_count()
    }

    fn decide(&mut self, context: &[f64], round: u64) -> Result<Decision> {
        if let Some(arm) = rofu::forced_arm(round, self.model.arm_count()) {
            return Ok(Decision {
                arm,
                estimates: Vec::new(),
            });
        }
        let estimates = (0..self.model.arm_count())
            .map(|a| neural_ucb_estimate(&self.model, &self.theta, context, a, &self.design, self.gamma, self.width_m))
            .collect::<Result<Vec<_>>>()?;
        let arm = rofu::select_action(&estimates.iter().map(|e| e.ucb).collect::<Vec<_>>())?;
        Ok(Decision { arm, estimates })
    }

    fn observe(&mut self, transition: Transition, round: u64) -> Result<()> {
        let h = self.model.grad_params(&self.theta, &transition.context, transition.arm)?;
        self.design.update(&h, self.width_m)?;
        self.data.push(transition);
        let mut rng = seeding::rng_for(self.trainer_seed, "train", round);
        self.theta = models::train(&self.model, &self.theta, &self.theta0, &self.data, &self.train, &mut rng)?;
        Ok(())
    }
}

/// Dense `h' Z^-1 h` through a fresh solve, for cross-checking.
pub fn dense_quad_form(z: &linalg::Matrix, h: &[f64]) -> Result<f64> {
    let x = linalg::psd_solve(z, h)?;
    Ok(linalg::dot(h, &x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::models::{Activation, FeatureMapSpec, ModelKind, ModelSpec};
    use crate::rofu::{DesignMode, NtkState};

    fn mlp(bias: bool) -> Model {
        Model::new(ModelSpec {
            kind: ModelKind::Mlp {
                layer_widths: vec![3, 6, 3],
                activation: Activation::Tanh,
                bias,
            },
            context_dim: 3,
            arm_count: 3,
        })
        .unwrap()
    }

    fn linear() -> Model {
        Model::new(ModelSpec {
            kind: ModelKind::Linear {
                feature_map: FeatureMapSpec::DisjointOnehot,
            },
            context_dim: 2,
            arm_count: 4,
        })
        .unwrap()
    }

    #[test]
    fn epsilon_zero_is_argmax() {
        let m = linear();
        let theta = [0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.5, 0.5];
        for round in 0..50 {
            assert_eq!(epsilon_greedy_select(&m, &theta, &[1.0, 1.0], 0.0, 9, round).unwrap(), 2);
        }
    }

    #[test]
    fn epsilon_half_is_reproducible() {
        let m = linear();
        let theta = [0.3; 8];
        let run = || {
            (0..200)
                .map(|r| epsilon_greedy_select(&m, &theta, &[1.0, -1.0], 0.5, 4, r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let m = linear();
        let theta = [0.0; 8];
        let draws = 100_000u64;
        let mut counts = [0u64; 4];
        for r in 0..draws {
            counts[epsilon_greedy_select(&m, &theta, &[0.0, 0.0], 1.0, 77, r).unwrap()] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 3 degrees of freedom, upper 1% point
        assert!(chi2 < 11.345, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn zero_gradient_gives_base_value() {
        let m = Model::new(ModelSpec {
            kind: ModelKind::Mlp {
                layer_widths: vec![2, 4, 2],
                activation: Activation::Relu,
                bias: false,
            },
            context_dim: 2,
            arm_count: 2,
        })
        .unwrap();
        let theta = m.init_params(&mut seeding::rng_for(3, "t", 0));
        let design = NeuralDesign::full(m.param_count(), 1.0).unwrap();
        let v = neural_ucb_value(&m, &theta, &[0.0, 0.0], 1, &design, 0.5, 4).unwrap();
        assert_eq!(v, m.forward(&theta, &[0.0, 0.0], 1).unwrap());
    }

    #[test]
    fn full_and_diagonal_agree_on_scaled_identity() {
        let m = mlp(true);
        let theta = m.init_params(&mut seeding::rng_for(5, "t", 0));
        let full = NeuralDesign::full(m.param_count(), 0.7).unwrap();
        let diag = NeuralDesign::diagonal(m.param_count(), 0.7).unwrap();
        for arm in 0..3 {
            let x = [0.2, -0.4, 0.9];
            let a = neural_ucb_value(&m, &theta, &x, arm, &full, 0.3, 6).unwrap();
            let b = neural_ucb_value(&m, &theta, &x, arm, &diag, 0.3, 6).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn full_variant_matches_dense_solve() {
        let m = mlp(true);
        let mut rng = seeding::rng_for(6, "t", 0);
        let theta = m.init_params(&mut rng);
        let (lambda, width, gamma) = (1.0, 6, 0.4);
        let mut full = NeuralDesign::full(m.param_count(), lambda).unwrap();
        let mut diag = NeuralDesign::diagonal(m.param_count(), lambda).unwrap();
        let mut dense = Matrix::scaled_identity(m.param_count(), lambda);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h = m.grad_params(&theta, &x, rng.random_range(0..3)).unwrap();
            full.update(&h, width).unwrap();
            diag.update(&h, width).unwrap();
            dense.add_outer(&h, 1.0 / width as f64);
        }
        let x = [0.5, 0.1, -0.3];
        let h = m.grad_params(&theta, &x, 2).unwrap();
        let oracle = m.forward(&theta, &x, 2).unwrap() + gamma * (dense_quad_form(&dense, &h).unwrap() / width as f64).sqrt();
        let got = neural_ucb_value(&m, &theta, &x, 2, &full, gamma, width).unwrap();
        assert!((got - oracle).abs() < 1e-9);
        let approx = neural_ucb_value(&m, &theta, &x, 2, &diag, gamma, width).unwrap();
        assert!(approx >= m.forward(&theta, &x, 2).unwrap());
    }

    #[test]
    fn full_variant_matches_running_ntk_with_frozen_theta() {
        let m = mlp(false);
        let mut rng = seeding::rng_for(8, "t", 0);
        let theta = m.init_params(&mut rng);
        let (lambda, width, gamma) = (1.0, 6, 0.25);
        let mut design = NeuralDesign::full(m.param_count(), lambda).unwrap();
        let mut state = NtkState::new(theta.clone(), lambda, width, gamma).unwrap();
        let mut data = Vec::new();
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let arm = rng.random_range(0..3);
            design.update(&m.grad_params(&theta, &x, arm).unwrap(), width).unwrap();
            data.push(Transition::new(x, arm, 0.0));
            rofu::ntk_design_update(&mut state, &m, &data, DesignMode::Running).unwrap();
        }
        let x = [0.3, 0.3, -0.8];
        for arm in 0..3 {
            let a = neural_ucb_value(&m, &theta, &x, arm, &design, gamma, width).unwrap();
            let b = rofu::rofu_ucb_ntk_linearized(&state, &m, &x, arm).unwrap().ucb;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_zero_agent_matches_greedy_selection() {
        let m = linear();
        let mut agent = EpsilonGreedyAgent::new(m.clone(), TrainConfig::default(), 0.0, 1, 2).unwrap();
        let mut rng = seeding::rng_for(10, "t", 0);
        for round in 0..30u64 {
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let d = agent.decide(&x, round).unwrap();
            if round >= 4 {
                let values: Vec<f64> = (0..4).map(|a| m.forward(agent.theta(), &x, a).unwrap()).collect();
                assert_eq!(d.arm, rofu::select_action(&values).unwrap());
            }
            agent.observe(Transition::new(x, d.arm, rng.random::<f64>()), round).unwrap();
        }
    }
}
