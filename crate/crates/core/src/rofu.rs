//! Regularized optimism: the optimistic estimate, its gradient-ascent
//! approximation, the closed forms it reduces to, and the decision loop.
//!
//! For an arm `a` in context `x` the optimistic parameter maximizes
//! `f_theta(x, a) - eta * R(theta; D)`. The UCB is the current fit plus
//! `g(f_opt - f_fit)` with `g(w) = w^b`, clamped at zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, PsdInverseState};
use crate::models::{
    self, BatchSize, Model, ModelError, ParamVector, RegSpec, Rows, Scratch, TrainConfig, Transition,
};
use crate::seeding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RofuError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("ascent objective became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("arm has never been pulled")]
    UnpulledArm,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite or empty score list")]
    BadScores,
}

pub type Result<T, E = RofuError> = std::result::Result<T, E>;

/// Scales the ascent step size with the amount of data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `kappa` at every round.
    #[default]
    Constant,
    /// `kappa / (1 + eta * |D|)`, keeping the step stable as `R` stiffens.
    DataScaled,
}

fn default_b() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RofuConfig {
    pub eta: f64,
    #[serde(default = "default_b")]
    pub g_exponent: f64,
    pub ascent_steps: usize,
    pub ascent_step_size: f64,
    /// Rows per gradient estimate; omitted means full batch up to
    /// [`AUTO_FULL_BATCH_LIMIT`] rows and [`AUTO_MINIBATCH`] rows beyond.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ascent_batch: Option<BatchSize>,
    pub reg: RegSpec,
    #[serde(default)]
    pub step_schedule: StepSchedule,
}

pub const AUTO_FULL_BATCH_LIMIT: usize = 1024;
pub const AUTO_MINIBATCH: usize = 256;

impl RofuConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(RofuError::InvalidConfig("eta must be positive".into()));
        }
        if !(self.g_exponent > 0.0 && self.g_exponent <= 1.0) {
            return Err(RofuError::InvalidConfig("g_exponent must lie in (0, 1]".into()));
        }
        if !(self.ascent_step_size > 0.0) || !self.ascent_step_size.is_finite() {
            return Err(RofuError::InvalidConfig("ascent_step_size must be positive".into()));
        }
        Ok(())
    }

    fn batch_for(&self, n: usize) -> BatchSize {
        self.ascent_batch.unwrap_or(if n <= AUTO_FULL_BATCH_LIMIT {
            BatchSize::Full
        } else {
            BatchSize::Mini(AUTO_MINIBATCH)
        })
    }

    fn effective_step(&self, n: usize) -> f64 {
        match self.step_schedule {
            StepSchedule::Constant => self.ascent_step_size,
            StepSchedule::DataScaled => self.ascent_step_size / (1.0 + self.eta * n as f64),
        }
    }
}

/// Optimistic estimate for one `(x, a)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct OfuEstimate {
    pub base_value: f64,
    pub optimistic_value: f64,
    pub bonus: f64,
    pub ucb: f64,
    /// Objective `f - eta * R` at each ascent iterate before its step.
    pub ascent_trace: Vec<f64>,
}

/// `bonus = max(0, optimistic - base)^b`, `ucb = base + bonus`.
pub fn combine_bonus(base: f64, optimistic: f64, b: f64) -> OfuEstimate {
    let gain = (optimistic - base).max(0.0);
    let bonus = if gain == 0.0 {
        0.0
    } else if b == 0.5 {
        gain.sqrt()
    } else {
        gain.powf(b)
    };
    OfuEstimate {
        base_value: base,
        optimistic_value: optimistic,
        bonus,
        ucb: base + bonus,
        ascent_trace: Vec::new(),
    }
}

/// `R` gradient at the starting point of an ascent, shared by every arm of a
/// round when the batch draws are shared.
#[derive(Debug, Clone)]
pub struct FirstStep {
    reg_value: f64,
    reg_grad: Vec<f64>,
}

impl FirstStep {
    pub fn compute(
        model: &Model,
        theta_prev: &[f64],
        anchor: &[f64],
        data: &[Transition],
        cfg: &RofuConfig,
        batch_seed: u64,
    ) -> Self {
        let mut reg_grad = vec![0.0; model.param_count()];
        let mut scratch = model.scratch();
        let rows = draw_rows(cfg, data.len(), batch_seed, 0);
        let reg_value = models::regularizer_accumulate(
            model,
            theta_prev,
            data,
            cfg.reg,
            anchor,
            rows.as_deref().map_or(Rows::All, Rows::Sample),
            1.0,
            &mut reg_grad,
            &mut scratch,
        );
        Self { reg_value, reg_grad }
    }
}

fn draw_rows(cfg: &RofuConfig, n: usize, batch_seed: u64, step: usize) -> Option<Vec<usize>> {
    match cfg.batch_for(n) {
        BatchSize::Mini(b) if b < n => {
            let mut rng = seeding::rng_for(batch_seed, "ascent_batch", step as u64);
            BatchSize::Mini(b).draw(n, &mut rng)
        }
        _ => None,
    }
}

/// Gradient-ascent estimate of the optimistic value.
///
/// Starts at `theta_prev` and takes `cfg.ascent_steps` steps of size `kappa`
/// along the (possibly minibatch) gradient of `f_theta(x, a) - eta R(theta; D)`.
/// Minibatches are drawn from `batch_seed` and the step index, so arms scored
/// with the same seed see the same rows.
pub fn rofu_ucb_ascent(
    model: &Model,
    theta_prev: &[f64],
    anchor: &[f64],
    context: &[f64],
    arm: usize,
    data: &[Transition],
    cfg: &RofuConfig,
    batch_seed: u64,
) -> Result<OfuEstimate> {
    cfg.validate()?;
    model.check(theta_prev, context, arm)?;
    if anchor.len() != theta_prev.len() {
        return Err(ModelError::DimensionMismatch {
            what: "anchor",
            expected: theta_prev.len(),
            got: anchor.len(),
        }
        .into());
    }
    model.check_data(data)?;
    ascent_unchecked(model, theta_prev, anchor, context, arm, data, cfg, batch_seed, None, &mut model.scratch())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn ascent_unchecked(
    model: &Model,
    theta_prev: &[f64],
    anchor: &[f64],
    context: &[f64],
    arm: usize,
    data: &[Transition],
    cfg: &RofuConfig,
    batch_seed: u64,
    first: Option<&FirstStep>,
    scratch: &mut Scratch,
) -> Result<OfuEstimate> {
    let base = model.eval(theta_prev, context, arm, scratch);
    if cfg.ascent_steps == 0 {
        return Ok(combine_bonus(base, base, cfg.g_exponent));
    }
    let step = cfg.effective_step(data.len());
    let mut theta = theta_prev.to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut trace = Vec::with_capacity(cfg.ascent_steps);
    for j in 0..cfg.ascent_steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let f = model.eval(&theta, context, arm, scratch);
        model.backprop(&theta, context, arm, 1.0, &mut grad, scratch);
        let reg_value = match (j, first) {
            (0, Some(first)) => {
                for (g, r) in grad.iter_mut().zip(&first.reg_grad) {
                    *g -= cfg.eta * r;
                }
                first.reg_value
            }
            _ => {
                let rows = draw_rows(cfg, data.len(), batch_seed, j);
                models::regularizer_accumulate(
                    model,
                    &theta,
                    data,
                    cfg.reg,
                    anchor,
                    rows.as_deref().map_or(Rows::All, Rows::Sample),
                    -cfg.eta,
                    &mut grad,
                    scratch,
                )
            }
        };
        let objective = f - cfg.eta * reg_value;
        if !objective.is_finite() {
            return Err(RofuError::NonFinite { step: j });
        }
        trace.push(objective);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += step * g;
        }
    }
    let optimistic = model.eval(&theta, context, arm, scratch);
    if !optimistic.is_finite() {
        return Err(RofuError::NonFinite {
            step: cfg.ascent_steps,
        });
    }
    let mut est = combine_bonus(base, optimistic, cfg.g_exponent);
    est.ascent_trace = trace;
    Ok(est)
}

/// Closed form for a linear model with `R = ||theta||^2 + |D| MSE` and
/// `eta = 1/2`: the optimistic parameter is `theta_ridge + Z^-1 phi`.
pub fn rofu_ucb_linucb(phi: &[f64], theta_ridge: &[f64], design: &PsdInverseState) -> Result<OfuEstimate> {
    for (what, len) in [("phi", phi.len()), ("theta_ridge", theta_ridge.len())] {
        if len != design.dim() {
            return Err(ModelError::DimensionMismatch {
                what,
                expected: design.dim(),
                got: len,
            }
            .into());
        }
    }
    let base = linalg::dot(phi, theta_ridge);
    let width = design.quad_form(phi)?;
    let shift = design.apply_inverse(phi)?;
    let theta_hat: Vec<f64> = theta_ridge.iter().zip(&shift).map(|(t, s)| t + s).collect();
    let bonus = width.sqrt();
    Ok(OfuEstimate {
        base_value: base,
        optimistic_value: linalg::dot(phi, &theta_hat),
        bonus,
        ucb: base + bonus,
        ascent_trace: Vec::new(),
    })
}

/// Pull count and reward sum of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmStats {
    pub pulls: u64,
    pub reward_sum: f64,
}

impl ArmStats {
    pub fn record(&mut self, reward: f64) {
        self.pulls += 1;
        self.reward_sum += reward;
    }

    pub fn mean(&self) -> f64 {
        if self.pulls == 0 {
            0.0
        } else {
            self.reward_sum / self.pulls as f64
        }
    }
}

/// Closed form for one scalar parameter per arm, `R = |D| MSE` and
/// `eta = 1 / (16 ln t)`: `mean + sqrt(8 ln t / n)`.
pub fn ucb1_value(stats: &ArmStats, t: f64) -> Result<OfuEstimate> {
    if !(t >= 2.0) || !t.is_finite() {
        return Err(RofuError::InvalidConfig(format!("ucb1 needs t >= 2, got {t}")));
    }
    if stats.pulls == 0 {
        return Err(RofuError::UnpulledArm);
    }
    let mean = stats.mean();
    let width = 8.0 * t.ln() / stats.pulls as f64;
    let bonus = width.sqrt();
    Ok(OfuEstimate {
        base_value: mean,
        optimistic_value: mean + width,
        bonus,
        ucb: mean + bonus,
        ascent_trace: Vec::new(),
    })
}

/// How the NTK design matrix tracks gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    /// Rebuild `Z` from gradients at the current parameters (`O(t p^2)`).
    RecomputeAtCurrent,
    /// Append each new gradient at its decision-time parameters (`O(p^2)`).
    #[default]
    Running,
}

/// State of the linearized neural estimator.
#[derive(Debug, Clone)]
pub struct NtkState {
    pub theta0: ParamVector,
    pub theta_prev: ParamVector,
    /// `Z = lambda I + (1/m) sum h h'`.
    pub design: PsdInverseState,
    pub lambda: f64,
    pub width_m: usize,
    pub gamma: f64,
}

impl NtkState {
    pub fn new(theta0: ParamVector, lambda: f64, width_m: usize, gamma: f64) -> Result<Self> {
        if width_m == 0 || !(gamma > 0.0) {
            return Err(RofuError::InvalidConfig("ntk needs width_m >= 1 and gamma > 0".into()));
        }
        let design = PsdInverseState::scaled_identity(theta0.len(), lambda)?;
        Ok(Self {
            theta_prev: theta0.clone(),
            theta0,
            design,
            lambda,
            width_m,
            gamma,
        })
    }

    /// `eta = 1 / (2 gamma^2)`.
    pub fn eta(&self) -> f64 {
        1.0 / (2.0 * self.gamma * self.gamma)
    }
}

/// Optimistic parameter of the linearized problem,
/// `theta_prev + (1 / (2 eta m)) Z^-1 h`.
pub fn ntk_theta_hat(state: &NtkState, model: &Model, context: &[f64], arm: usize) -> Result<ParamVector> {
    let h = model.grad_params(&state.theta_prev, context, arm)?;
    let shift = state.design.apply_inverse(&h)?;
    let scale = 1.0 / (2.0 * state.eta() * state.width_m as f64);
    Ok(state
        .theta_prev
        .iter()
        .zip(&shift)
        .map(|(t, s)| t + scale * s)
        .collect::<Vec<_>>()
        .into())
}

/// Linearized-NTK estimate. `bonus` is `gamma * sqrt(h' Z^-1 h / m)`;
/// `optimistic_value` is the first-order value at [`ntk_theta_hat`].
pub fn rofu_ucb_ntk_linearized(state: &NtkState, model: &Model, context: &[f64], arm: usize) -> Result<OfuEstimate> {
    let base = model.forward(&state.theta_prev, context, arm)?;
    let h = model.grad_params(&state.theta_prev, context, arm)?;
    let quad = state.design.quad_form(&h)?;
    let bonus = state.gamma * (quad / state.width_m as f64).sqrt();
    let shift = state.design.apply_inverse(&h)?;
    let scale = 1.0 / (2.0 * state.eta() * state.width_m as f64);
    let optimistic = base + scale * linalg::dot(&h, &shift);
    Ok(OfuEstimate {
        base_value: base,
        optimistic_value: optimistic,
        bonus,
        ucb: base + bonus,
        ascent_trace: Vec::new(),
    })
}

/// Updates `state.design` after `data` gained its newest transition.
///
/// `Running` appends the newest gradient taken at `state.theta_prev` (call it
/// before retraining); `RecomputeAtCurrent` rebuilds from every transition at
/// `state.theta_prev`.
pub fn ntk_design_update(state: &mut NtkState, model: &Model, data: &[Transition], mode: DesignMode) -> Result<()> {
    let inv_sqrt_m = 1.0 / (state.width_m as f64).sqrt();
    match mode {
        DesignMode::Running => {
            if let Some(t) = data.last() {
                let mut h = model.grad_params(&state.theta_prev, &t.context, t.arm)?;
                h.iter_mut().for_each(|v| *v *= inv_sqrt_m);
                state.design.rank1_update(&h)?;
            }
        }
        DesignMode::RecomputeAtCurrent => {
            let p = state.theta_prev.len();
            let mut z = Matrix::scaled_identity(p, state.lambda);
            for t in data {
                let h = model.grad_params(&state.theta_prev, &t.context, t.arm)?;
                z.add_outer(&h, 1.0 / state.width_m as f64);
            }
            state.design = PsdInverseState::from_matrix(z)?;
        }
    }
    Ok(())
}

/// Index of the largest score, lowest index on ties.
pub fn select_action(ucbs: &[f64]) -> Result<usize> {
    if ucbs.is_empty() || ucbs.iter().any(|u| !u.is_finite()) {
        return Err(RofuError::BadScores);
    }
    let mut best = 0;
    for (i, &u) in ucbs.iter().enumerate().skip(1) {
        if u > ucbs[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Outcome of one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub arm: usize,
    /// Per-arm estimates; empty when the agent does not produce any.
    pub estimates: Vec<OfuEstimate>,
}

impl Decision {
    pub fn chosen(&self) -> Option<&OfuEstimate> {
        self.estimates.get(self.arm)
    }
}

/// A bandit agent driven by the harness.
pub trait Agent: Send {
    fn arm_count(&self) -> usize;

    /// Chooses an arm for `context` at zero-based `round`.
    fn decide(&mut self, context: &[f64], round: u64) -> Result<Decision>;

    /// Records the outcome and refits.
    fn observe(&mut self, transition: Transition, round: u64) -> Result<()>;
}

/// Cold-start rule shared by every agent: the first `arm_count` rounds play
/// the arms in order.
pub fn forced_arm(round: u64, arm_count: usize) -> Option<usize> {
    (round < arm_count as u64).then_some(round as usize)
}

#[derive(Debug, Clone)]
enum Method {
    Ascent {
        model: Model,
        cfg: RofuConfig,
        train: TrainConfig,
        theta: ParamVector,
        theta0: ParamVector,
    },
    LinUcb {
        model: Model,
        design: PsdInverseState,
        rhs: Vec<f64>,
        theta: Vec<f64>,
    },
    Ucb1 {
        stats: Vec<ArmStats>,
    },
    Ntk {
        model: Model,
        state: NtkState,
        train: TrainConfig,
        mode: DesignMode,
    },
}

/// Agent acting on regularized optimistic estimates.
#[derive(Debug, Clone)]
pub struct RofuAgent {
    method: Method,
    arm_count: usize,
    data: Vec<Transition>,
    agent_seed: u64,
    trainer_seed: u64,
}

impl RofuAgent {
    /// Gradient-ascent estimator on a general model, retrained each round
    /// from the previous parameters.
    pub fn ascent(model: Model, cfg: RofuConfig, train: TrainConfig, agent_seed: u64, trainer_seed: u64) -> Result<Self> {
        cfg.validate()?;
        train.validate()?;
        let mut rng = seeding::rng_for(agent_seed, "init", 0);
        let theta0 = model.init_params(&mut rng);
        Ok(Self {
            arm_count: model.arm_count(),
            method: Method::Ascent {
                theta: theta0.clone(),
                theta0,
                model,
                cfg,
                train,
            },
            data: Vec::new(),
            agent_seed,
            trainer_seed,
        })
    }

    /// LinUCB / KernelUCB closed form with the exact ridge fit (`lambda = 1`).
    pub fn linucb(model: Model) -> Result<Self> {
        if !model.is_feature_model() {
            return Err(ModelError::NotFeatureModel.into());
        }
        let p = model.param_count();
        Ok(Self {
            arm_count: model.arm_count(),
            method: Method::LinUcb {
                design: PsdInverseState::scaled_identity(p, 1.0)?,
                rhs: vec![0.0; p],
                theta: vec![0.0; p],
                model,
            },
            data: Vec::new(),
            agent_seed: 0,
            trainer_seed: 0,
        })
    }

    /// UCB1 closed form of the per-arm scalar model.
    pub fn ucb1(arm_count: usize) -> Self {
        Self {
            arm_count,
            method: Method::Ucb1 {
                stats: vec![ArmStats::default(); arm_count],
            },
            data: Vec::new(),
            agent_seed: 0,
            trainer_seed: 0,
        }
    }

    /// Linearized NTK closed form, trained with `width * lambda ||theta - theta_0||^2`.
    #[allow(clippy::too_many_arguments)]
    pub fn ntk(
        model: Model,
        gamma: f64,
        lambda: f64,
        width_m: usize,
        mut train: TrainConfig,
        mode: DesignMode,
        agent_seed: u64,
        trainer_seed: u64,
    ) -> Result<Self> {
        train.validate()?;
        train.anchor = models::Anchor::InitPoint;
        train.ridge_weight = width_m as f64 * lambda;
        let mut rng = seeding::rng_for(agent_seed, "init", 0);
        let theta0 = model.init_params(&mut rng);
        Ok(Self {
            arm_count: model.arm_count(),
            method: Method::Ntk {
                state: NtkState::new(theta0, lambda, width_m, gamma)?,
                model,
                train,
                mode,
            },
            data: Vec::new(),
            agent_seed,
            trainer_seed,
        })
    }

    pub fn data(&self) -> &[Transition] {
        &self.data
    }

    /// Current fitted parameters, when the method keeps any.
    pub fn theta(&self) -> Option<&[f64]> {
        match &self.method {
            Method::Ascent { theta, .. } => Some(theta),
            Method::LinUcb { theta, .. } => Some(theta),
            Method::Ntk { state, .. } => Some(&state.theta_prev),
            Method::Ucb1 { .. } => None,
        }
    }

    /// Scores every arm and picks one. While `round < arm_count` the arm is
    /// forced round-robin and no estimates are computed.
    pub fn rofu_round(&self, context: &[f64], round: u64) -> Result<Decision> {
        if let Some(arm) = forced_arm(round, self.arm_count) {
            return Ok(Decision {
                arm,
                estimates: Vec::new(),
            });
        }
        let estimates = self.estimates(context, round)?;
        let arm = select_action(&estimates.iter().map(|e| e.ucb).collect::<Vec<_>>())?;
        Ok(Decision { arm, estimates })
    }

    fn estimates(&self, context: &[f64], round: u64) -> Result<Vec<OfuEstimate>> {
        let arms = 0..self.arm_count;
        match &self.method {
            Method::Ascent {
                model,
                cfg,
                theta,
                theta0,
                ..
            } => {
                model.check(theta, context, 0)?;
                let batch_seed = seeding::derive(self.agent_seed, "ascent", round);
                let first = (cfg.ascent_steps > 0)
                    .then(|| FirstStep::compute(model, theta, theta0, &self.data, cfg, batch_seed));
                let mut scratch = model.scratch();
                arms.map(|a| {
                    ascent_unchecked(
                        model,
                        theta,
                        theta0,
                        context,
                        a,
                        &self.data,
                        cfg,
                        batch_seed,
                        first.as_ref(),
                        &mut scratch,
                    )
                })
                .collect()
            }
            Method::LinUcb {
                model,
                design,
                theta,
                ..
            } => arms
                .map(|a| {
                    let phi = model.features(context, a)?;
                    rofu_ucb_linucb(&phi, theta, design)
                })
                .collect(),
            Method::Ucb1 { stats } => {
                let t = self.data.len() as f64;
                arms.map(|a| {
                    if stats[a].pulls == 0 || t < 2.0 {
                        Ok(OfuEstimate::default())
                    } else {
                        ucb1_value(&stats[a], t)
                    }
                })
                .collect()
            }
            Method::Ntk { model, state, .. } => arms
                .map(|a| rofu_ucb_ntk_linearized(state, model, context, a))
                .collect(),
        }
    }
}

impl Agent for RofuAgent {
    fn arm_count(&self) -> usize {
        self.arm_count
    }

    fn decide(&mut self, context: &[f64], round: u64) -> Result<Decision> {
        self.rofu_round(context, round)
    }

    fn observe(&mut self, transition: Transition, round: u64) -> Result<()> {
        if transition.arm >= self.arm_count {
            return Err(ModelError::DimensionMismatch {
                what: "arm",
                expected: self.arm_count,
                got: transition.arm,
            }
            .into());
        }
        self.data.push(transition);
        let latest = self.data.last().expect("just pushed");
        match &mut self.method {
            Method::Ascent {
                model,
                train,
                theta,
                theta0,
                ..
            } => {
                let mut rng = seeding::rng_for(self.trainer_seed, "train", round);
                *theta = models::train(model, theta, theta0, &self.data, train, &mut rng)?;
            }
            Method::LinUcb {
                model,
                design,
                rhs,
                theta,
            } => {
                let phi = model.features(&latest.context, latest.arm)?;
                design.rank1_update(&phi)?;
                for (b, f) in rhs.iter_mut().zip(&phi) {
                    *b += f * latest.reward;
                }
                *theta = design.apply_inverse(rhs)?;
            }
            Method::Ucb1 { stats } => stats[latest.arm].record(latest.reward),
            Method::Ntk {
                model,
                state,
                train,
                mode,
            } => {
                if *mode == DesignMode::Running {
                    ntk_design_update(state, model, &self.data, DesignMode::Running)?;
                }
                let mut rng = seeding::rng_for(self.trainer_seed, "train", round);
                state.theta_prev = models::train(model, &state.theta_prev, &state.theta0, &self.data, train, &mut rng)?;
                if *mode == DesignMode::RecomputeAtCurrent {
                    ntk_design_update(state, model, &self.data, DesignMode::RecomputeAtCurrent)?;
                }
            }
        }
        Ok(())
    }
}

/// Scalar golden-section maximization on `[lo, hi]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while (hi - lo).abs() > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, FeatureMapSpec, ModelKind, ModelSpec};

    fn linear_model(d: usize, arms: usize) -> Model {
        Model::new(ModelSpec {
            kind: ModelKind::Linear {
                feature_map: FeatureMapSpec::DisjointOnehot,
            },
            context_dim: d,
            arm_count: arms,
        })
        .unwrap()
    }

    #[test]
    fn combine_bonus_cases() {
        let e = combine_bonus(1.0, 1.0, 0.5);
        assert_eq!((e.bonus, e.ucb), (0.0, 1.0));
        let e = combine_bonus(1.0, 0.5, 0.5);
        assert_eq!((e.bonus, e.ucb), (0.0, 1.0));
        let e = combine_bonus(0.0, 4.0, 0.5);
        assert_eq!((e.bonus, e.ucb), (2.0, 2.0));
        let e = combine_bonus(0.0, 8.0, 1.0 / 3.0);
        assert!((e.bonus - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_ascent_steps_give_zero_bonus() {
        let m = linear_model(2, 2);
        let theta = [0.3, -0.1, 0.5, 0.2];
        let data = vec![Transition::new(vec![1.0, 0.0], 0, 1.0)];
        let cfg = RofuConfig {
            eta: 0.5,
            g_exponent: 0.5,
            ascent_steps: 0,
            ascent_step_size: 0.01,
            ascent_batch: None,
            reg: RegSpec::RidgePlusScaledMse,
            step_schedule: StepSchedule::Constant,
        };
        let e = rofu_ucb_ascent(&m, &theta, &[0.0; 4], &[1.0, 2.0], 1, &data, &cfg, 0).unwrap();
        assert_eq!(e.bonus, 0.0);
        assert_eq!(e.ucb, m.forward(&theta, &[1.0, 2.0], 1).unwrap());
    }

    #[test]
    fn linucb_trivial_cases() {
        let design = PsdInverseState::scaled_identity(3, 1.0).unwrap();
        let e = rofu_ucb_linucb(&[1.0, 0.0, 0.0], &[0.0; 3], &design).unwrap();
        assert_eq!(e.ucb, 1.0);
        let e = rofu_ucb_linucb(&[0.0; 3], &[0.0; 3], &design).unwrap();
        assert_eq!((e.ucb, e.bonus), (0.0, 0.0));
    }

    #[test]
    fn ucb1_cases() {
        let t = 1000f64;
        let n = 8.0 * t.ln();
        let stats = ArmStats {
            pulls: n.round() as u64,
            reward_sum: 0.5 * n.round(),
        };
        let e = ucb1_value(&stats, (stats.pulls as f64 / 8.0).exp()).unwrap();
        assert!((e.bonus - 1.0).abs() < 1e-12);
        assert!((e.ucb - 1.5).abs() < 1e-12);

        let stats = ArmStats {
            pulls: 2,
            reward_sum: 0.0,
        };
        let e = ucb1_value(&stats, std::f64::consts::E).unwrap();
        assert_eq!(e.ucb, 2.0);

        let stats = ArmStats {
            pulls: 5,
            reward_sum: 1.5,
        };
        let e = ucb1_value(&stats, 100.0).unwrap();
        assert_eq!(e.ucb, 0.3 + (8.0 * 100f64.ln() / 5.0).sqrt());
        assert!((e.optimistic_value - e.base_value - e.bonus * e.bonus).abs() < 1e-12);
        assert_eq!(ucb1_value(&ArmStats::default(), 10.0), Err(RofuError::UnpulledArm));
        assert!(ucb1_value(&stats, 1.5).is_err());
    }

    #[test]
    fn select_action_cases() {
        assert_eq!(select_action(&[0.1, 0.9, 0.3]).unwrap(), 1);
        assert_eq!(select_action(&[0.5, 0.5]).unwrap(), 0);
        assert_eq!(select_action(&[]), Err(RofuError::BadScores));
        assert_eq!(select_action(&[0.1, f64::NAN]), Err(RofuError::BadScores));
    }

    #[test]
    fn first_round_is_forced_to_arm_zero() {
        let agent = RofuAgent::ucb1(3);
        assert_eq!(agent.rofu_round(&[1.0], 0).unwrap().arm, 0);
        let m = linear_model(2, 3);
        let agent = RofuAgent::linucb(m).unwrap();
        let d = agent.rofu_round(&[1.0, 1.0], 0).unwrap();
        assert_eq!(d.arm, 0);
        assert!(d.estimates.is_empty() && d.chosen().is_none());
        assert_eq!(agent.rofu_round(&[1.0, 1.0], 3).unwrap().estimates.len(), 3);
    }

    #[test]
    fn ntk_identity_design_gives_gradient_norm() {
        let model = Model::new(ModelSpec {
            kind: ModelKind::Mlp {
                layer_widths: vec![2, 3, 2],
                activation: Activation::Tanh,
                bias: true,
            },
            context_dim: 2,
            arm_count: 2,
        })
        .unwrap();
        let mut rng = seeding::rng_for(1, "t", 0);
        let theta = model.init_params(&mut rng);
        // eta = 1/2 <=> gamma = 1
        let state = NtkState::new(theta.clone(), 1.0, 1, 1.0).unwrap();
        let x = [0.4, -0.3];
        let e = rofu_ucb_ntk_linearized(&state, &model, &x, 1).unwrap();
        let h = model.grad_params(&theta, &x, 1).unwrap();
        assert!((e.bonus - h.norm_sq().sqrt()).abs() < 1e-14);
    }

    #[test]
    fn ntk_dead_gradient_gives_zero_bonus() {
        let model = Model::new(ModelSpec {
            kind: ModelKind::Mlp {
                layer_widths: vec![2, 4, 2],
                activation: Activation::Relu,
                bias: false,
            },
            context_dim: 2,
            arm_count: 2,
        })
        .unwrap();
        let mut rng = seeding::rng_for(2, "t", 0);
        let theta = model.init_params(&mut rng);
        let state = NtkState::new(theta.clone(), 1.0, 4, 0.1).unwrap();
        let e = rofu_ucb_ntk_linearized(&state, &model, &[0.0, 0.0], 0).unwrap();
        assert_eq!(e.bonus, 0.0);
        assert_eq!(e.ucb, model.forward(&theta, &[0.0, 0.0], 0).unwrap());
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let x = golden_section_max(|x| -(x - 1.25) * (x - 1.25), -10.0, 10.0, 1e-12);
        assert!((x - 1.25).abs() < 1e-8);
    }
}
