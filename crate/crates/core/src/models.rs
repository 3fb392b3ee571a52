//! Differentiable reward models `f_theta(x, a)` with exact parameter gradients.
//!
//! Three families share one flat parameter vector convention:
//!
//! * `linear`: `f = phi(x, a)' theta` for a fixed feature map,
//! * `kernel_features`: the same with random Fourier features standing in for
//!   an RBF kernel,
//! * `mlp`: a fully connected network with hand-written backpropagation.
//!
//! MLP parameter layout: for each layer `l` (mapping `widths[l]` inputs to
//! `widths[l + 1]` outputs) the weight matrix is stored row-major
//! (`out x in`) followed by the bias vector when biases are enabled. Layers
//! are laid out in order, first layer first.
//!
//! Arms enter an MLP in one of two ways, chosen from the widths:
//! `widths[0] == context_dim && widths.last() == arm_count` gives one output
//! per arm, `widths[0] == context_dim + arm_count && widths.last() == 1`
//! appends a one-hot arm code to the input.

use std::ops::{Deref, DerefMut};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("objective became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("operation needs a feature-map model (linear or kernel_features)")]
    NotFeatureModel,
    #[error("bad parameter file: {0}")]
    BadParamFile(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Flat parameter vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

const PARAM_MAGIC: &[u8; 4] = b"ROFU";
const PARAM_VERSION: u32 = 1;

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        linalg::dot(&self.0, &self.0)
    }

    /// 16-byte header (magic, version, length) followed by little-endian `f64`s.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.0.len());
        out.extend_from_slice(PARAM_MAGIC);
        out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(ModelError::BadParamFile("truncated header".into()));
        }
        if &bytes[..4] != PARAM_MAGIC {
            return Err(ModelError::BadParamFile("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != PARAM_VERSION {
            return Err(ModelError::BadParamFile(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != len * 8 {
            return Err(ModelError::BadParamFile(format!(
                "expected {} payload bytes, found {}",
                len * 8,
                body.len()
            )));
        }
        Ok(Self(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureMapSpec {
    /// `x` placed in block `a` of a `context_dim * arm_count` vector.
    DisjointOnehot,
    /// `[x, e_a]`: context weights shared by all arms plus a per-arm offset.
    Shared,
    /// Per-arm block of `features` random Fourier features of an RBF kernel.
    RandomFourier {
        features: usize,
        bandwidth: f64,
        seed: u64,
    },
}

impl FeatureMapSpec {
    pub fn output_dim(&self, context_dim: usize, arm_count: usize) -> usize {
        match self {
            FeatureMapSpec::DisjointOnehot => context_dim * arm_count,
            FeatureMapSpec::Shared => context_dim + arm_count,
            FeatureMapSpec::RandomFourier { features, .. } => features * arm_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    Linear {
        feature_map: FeatureMapSpec,
    },
    KernelFeatures {
        feature_map: FeatureMapSpec,
    },
    Mlp {
        layer_widths: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        #[serde(default = "default_true")]
        bias: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub context_dim: usize,
    pub arm_count: usize,
}

/// One logged interaction `(x, a, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub context: Vec<f64>,
    pub arm: usize,
    pub reward: f64,
}

impl Transition {
    pub fn new(context: Vec<f64>, arm: usize, reward: f64) -> Self {
        Self {
            context,
            arm,
            reward,
        }
    }
}

#[derive(Debug, Clone)]
enum FeatureMap {
    Disjoint,
    Shared,
    Fourier {
        features: usize,
        // features x context_dim
        weights: Vec<f64>,
        phases: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct MlpLayout {
    widths: Vec<usize>,
    activation: Activation,
    bias: bool,
    joint_input: bool,
    // (weight offset, bias offset) per layer
    offsets: Vec<(usize, usize)>,
    param_count: usize,
}

#[derive(Debug, Clone)]
enum Repr {
    Features(FeatureMap),
    Mlp(MlpLayout),
}

/// Reusable buffers for forward and backward passes.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
    feats: Vec<f64>,
}

/// A compiled [`ModelSpec`]: random feature weights are drawn once here.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    repr: Repr,
    param_count: usize,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.context_dim == 0 || spec.arm_count == 0 {
            return Err(ModelError::InvalidSpec(
                "context_dim and arm_count must be positive".into(),
            ));
        }
        let (repr, param_count) = match &spec.kind {
            ModelKind::Linear { feature_map } | ModelKind::KernelFeatures { feature_map } => {
                if matches!(spec.kind, ModelKind::KernelFeatures { .. })
                    && !matches!(feature_map, FeatureMapSpec::RandomFourier { .. })
                {
                    return Err(ModelError::InvalidSpec(
                        "kernel_features needs a random_fourier feature map".into(),
                    ));
                }
                let map = match feature_map {
                    FeatureMapSpec::DisjointOnehot => FeatureMap::Disjoint,
                    FeatureMapSpec::Shared => FeatureMap::Shared,
                    &FeatureMapSpec::RandomFourier {
                        features,
                        bandwidth,
                        seed,
                    } => {
                        if features == 0 || !(bandwidth > 0.0) || !bandwidth.is_finite() {
                            return Err(ModelError::InvalidSpec(
                                "random_fourier needs features >= 1 and bandwidth > 0".into(),
                            ));
                        }
                        let mut rng = crate::seeding::rng_for(seed, "rff", 0);
                        let weights = (0..features * spec.context_dim)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                z / bandwidth
                            })
                            .collect();
                        let phases = (0..features)
                            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                            .collect();
                        FeatureMap::Fourier {
                            features,
                            weights,
                            phases,
                        }
                    }
                };
                let p = feature_map.output_dim(spec.context_dim, spec.arm_count);
                (Repr::Features(map), p)
            }
            ModelKind::Mlp {
                layer_widths,
                activation,
                bias,
            } => {
                let layout = MlpLayout::new(layer_widths, *activation, *bias, &spec)?;
                let p = layout.param_count;
                (Repr::Mlp(layout), p)
            }
        };
        Ok(Self {
            spec,
            repr,
            param_count,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn arm_count(&self) -> usize {
        self.spec.arm_count
    }

    pub fn context_dim(&self) -> usize {
        self.spec.context_dim
    }

    pub fn is_feature_model(&self) -> bool {
        matches!(self.repr, Repr::Features(_))
    }

    pub fn scratch(&self) -> Scratch {
        let mut s = Scratch::default();
        if let Repr::Mlp(layout) = &self.repr {
            s.acts = layout.widths.iter().map(|&w| vec![0.0; w]).collect();
            s.pre = layout.widths.iter().map(|&w| vec![0.0; w]).collect();
            let widest = layout.widths.iter().copied().max().unwrap_or(0);
            s.delta = vec![0.0; widest];
            s.delta_next = vec![0.0; widest];
        }
        s
    }

    /// Initial parameters: zeros for feature models, `N(0, 1/fan_in)` weights
    /// and zero biases for MLPs.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut theta = ParamVector::zeros(self.param_count);
        if let Repr::Mlp(layout) = &self.repr {
            for l in 0..layout.layers() {
                let (fan_in, fan_out) = (layout.widths[l], layout.widths[l + 1]);
                let scale = (1.0 / fan_in as f64).sqrt();
                let (w_off, _) = layout.offsets[l];
                for w in &mut theta[w_off..w_off + fan_in * fan_out] {
                    let z: f64 = StandardNormal.sample(rng);
                    *w = z * scale;
                }
            }
        }
        theta
    }

    pub fn check(&self, theta: &[f64], context: &[f64], arm: usize) -> Result<()> {
        if theta.len() != self.param_count {
            return Err(ModelError::DimensionMismatch {
                what: "theta",
                expected: self.param_count,
                got: theta.len(),
            });
        }
        if context.len() != self.spec.context_dim {
            return Err(ModelError::DimensionMismatch {
                what: "context",
                expected: self.spec.context_dim,
                got: context.len(),
            });
        }
        if arm >= self.spec.arm_count {
            return Err(ModelError::DimensionMismatch {
                what: "arm",
                expected: self.spec.arm_count,
                got: arm,
            });
        }
        Ok(())
    }

    pub fn check_data(&self, data: &[Transition]) -> Result<()> {
        for t in data {
            if t.context.len() != self.spec.context_dim {
                return Err(ModelError::DimensionMismatch {
                    what: "transition context",
                    expected: self.spec.context_dim,
                    got: t.context.len(),
                });
            }
            if t.arm >= self.spec.arm_count {
                return Err(ModelError::DimensionMismatch {
                    what: "transition arm",
                    expected: self.spec.arm_count,
                    got: t.arm,
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, theta: &[f64], context: &[f64], arm: usize) -> Result<f64> {
        self.check(theta, context, arm)?;
        Ok(self.eval(theta, context, arm, &mut self.scratch()))
    }

    /// Exact gradient of [`Model::forward`] with respect to `theta`.
    pub fn grad_params(&self, theta: &[f64], context: &[f64], arm: usize) -> Result<ParamVector> {
        self.check(theta, context, arm)?;
        let mut scratch = self.scratch();
        let mut grad = ParamVector::zeros(self.param_count);
        self.eval(theta, context, arm, &mut scratch);
        self.backprop(theta, context, arm, 1.0, &mut grad, &mut scratch);
        Ok(grad)
    }

    /// Feature vector `phi(x, a)` of a feature-map model.
    pub fn features(&self, context: &[f64], arm: usize) -> Result<Vec<f64>> {
        let Repr::Features(map) = &self.repr else {
            return Err(ModelError::NotFeatureModel);
        };
        if context.len() != self.spec.context_dim {
            return Err(ModelError::DimensionMismatch {
                what: "context",
                expected: self.spec.context_dim,
                got: context.len(),
            });
        }
        if arm >= self.spec.arm_count {
            return Err(ModelError::DimensionMismatch {
                what: "arm",
                expected: self.spec.arm_count,
                got: arm,
            });
        }
        let mut phi = vec![0.0; self.param_count];
        self.write_features(map, context, arm, &mut phi);
        Ok(phi)
    }

    fn write_features(&self, map: &FeatureMap, context: &[f64], arm: usize, phi: &mut [f64]) {
        let d = self.spec.context_dim;
        match map {
            FeatureMap::Disjoint => phi[arm * d..(arm + 1) * d].copy_from_slice(context),
            FeatureMap::Shared => {
                phi[..d].copy_from_slice(context);
                phi[d + arm] = 1.0;
            }
            FeatureMap::Fourier {
                features,
                weights,
                phases,
            } => {
                let scale = (2.0 / *features as f64).sqrt();
                let block = &mut phi[arm * features..(arm + 1) * features];
                for (k, out) in block.iter_mut().enumerate() {
                    let w = &weights[k * d..(k + 1) * d];
                    *out = scale * (linalg::dot(w, context) + phases[k]).cos();
                }
            }
        }
    }

    /// Unchecked forward pass; leaves the activations in `scratch` for
    /// [`Model::backprop`].
    pub(crate) fn eval(&self, theta: &[f64], context: &[f64], arm: usize, scratch: &mut Scratch) -> f64 {
        match &self.repr {
            Repr::Features(FeatureMap::Disjoint) => {
                let d = self.spec.context_dim;
                linalg::dot(&theta[arm * d..(arm + 1) * d], context)
            }
            Repr::Features(FeatureMap::Shared) => {
                let d = self.spec.context_dim;
                linalg::dot(&theta[..d], context) + theta[d + arm]
            }
            Repr::Features(map @ FeatureMap::Fourier { features, .. }) => {
                let f = *features;
                scratch.feats.resize(self.param_count, 0.0);
                scratch.feats.iter_mut().for_each(|v| *v = 0.0);
                let mut phi = std::mem::take(&mut scratch.feats);
                self.write_features(map, context, arm, &mut phi);
                let value = linalg::dot(&theta[arm * f..(arm + 1) * f], &phi[arm * f..(arm + 1) * f]);
                scratch.feats = phi;
                value
            }
            Repr::Mlp(layout) => layout.forward(theta, context, arm, scratch),
        }
    }

    /// Adds `upstream * grad_theta f(x, a)` into `grad`. Must follow an
    /// [`Model::eval`] call with the same arguments.
    pub(crate) fn backprop(
        &self,
        theta: &[f64],
        context: &[f64],
        arm: usize,
        upstream: f64,
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) {
        if upstream == 0.0 {
            return;
        }
        match &self.repr {
            Repr::Features(FeatureMap::Disjoint) => {
                let d = self.spec.context_dim;
                for (g, x) in grad[arm * d..(arm + 1) * d].iter_mut().zip(context) {
                    *g += upstream * x;
                }
            }
            Repr::Features(FeatureMap::Shared) => {
                let d = self.spec.context_dim;
                for (g, x) in grad[..d].iter_mut().zip(context) {
                    *g += upstream * x;
                }
                grad[d + arm] += upstream;
            }
            Repr::Features(FeatureMap::Fourier { features, .. }) => {
                let f = *features;
                let range = arm * f..(arm + 1) * f;
                for (g, p) in grad[range.clone()].iter_mut().zip(&scratch.feats[range]) {
                    *g += upstream * p;
                }
            }
            Repr::Mlp(layout) => layout.backward(theta, arm, upstream, grad, scratch),
        }
    }
}

impl MlpLayout {
    fn new(widths: &[usize], activation: Activation, bias: bool, spec: &ModelSpec) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(ModelError::InvalidSpec(
                "mlp layer_widths needs at least input and output widths, all positive".into(),
            ));
        }
        let (first, last) = (widths[0], *widths.last().unwrap());
        let joint_input = if first == spec.context_dim && last == spec.arm_count {
            false
        } else if first == spec.context_dim + spec.arm_count && last == 1 {
            true
        } else {
            return Err(ModelError::InvalidSpec(format!(
                "mlp widths {widths:?} fit neither per-arm outputs ([{}, .., {}]) nor one-hot arm input ([{}, .., 1])",
                spec.context_dim,
                spec.arm_count,
                spec.context_dim + spec.arm_count
            )));
        };
        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut cursor = 0;
        for l in 0..widths.len() - 1 {
            let w_off = cursor;
            cursor += widths[l] * widths[l + 1];
            let b_off = cursor;
            if bias {
                cursor += widths[l + 1];
            }
            offsets.push((w_off, b_off));
        }
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            bias,
            joint_input,
            offsets,
            param_count: cursor,
        })
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn forward(&self, theta: &[f64], context: &[f64], arm: usize, s: &mut Scratch) -> f64 {
        let input = &mut s.acts[0];
        input[..context.len()].copy_from_slice(context);
        if self.joint_input {
            input[context.len()..].iter_mut().for_each(|v| *v = 0.0);
            input[context.len() + arm] = 1.0;
        }
        let last = self.layers() - 1;
        for l in 0..last {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (w_off, b_off) = self.offsets[l];
            let (head, tail) = s.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            let z = &mut s.pre[l + 1];
            for j in 0..fan_out {
                let row = &theta[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                let mut v = linalg::dot(row, x);
                if self.bias {
                    v += theta[b_off + j];
                }
                z[j] = v;
                y[j] = self.activation.apply(v);
            }
        }
        let fan_in = self.widths[last];
        let row = if self.joint_input { 0 } else { arm };
        let (w_off, b_off) = self.offsets[last];
        let w = &theta[w_off + row * fan_in..w_off + (row + 1) * fan_in];
        let mut out = linalg::dot(w, &s.acts[last]);
        if self.bias {
            out += theta[b_off + row];
        }
        out
    }

    fn backward(&self, theta: &[f64], arm: usize, upstream: f64, grad: &mut [f64], s: &mut Scratch) {
        let last = self.layers() - 1;
        let row = if self.joint_input { 0 } else { arm };
        let fan_in = self.widths[last];
        let (w_off, b_off) = self.offsets[last];
        let w_row = w_off + row * fan_in;
        for (g, a) in grad[w_row..w_row + fan_in].iter_mut().zip(&s.acts[last]) {
            *g += upstream * a;
        }
        if self.bias {
            grad[b_off + row] += upstream;
        }
        if last == 0 {
            return;
        }
        // delta over the outputs of layer `last - 1`
        let width = self.widths[last];
        for j in 0..width {
            let d = upstream * theta[w_row + j];
            s.delta[j] = d * self.activation.derivative(s.pre[last][j], s.acts[last][j]);
        }
        for l in (0..last).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (w_off, b_off) = self.offsets[l];
            let x = &s.acts[l];
            for j in 0..fan_out {
                let d = s.delta[j];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += d * xi;
                }
                if self.bias {
                    grad[b_off + j] += d;
                }
            }
            if l == 0 {
                break;
            }
            for i in 0..fan_in {
                s.delta_next[i] = 0.0;
            }
            for j in 0..fan_out {
                let d = s.delta[j];
                if d == 0.0 {
                    continue;
                }
                let row = &theta[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                for (acc, w) in s.delta_next[..fan_in].iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            for i in 0..fan_in {
                s.delta[i] = s.delta_next[i] * self.activation.derivative(s.pre[l][i], s.acts[l][i]);
            }
        }
    }
}

/// Mean squared residual over `data`.
pub fn mse(model: &Model, theta: &[f64], data: &[Transition]) -> Result<f64> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    model.check_data(data)?;
    if theta.len() != model.param_count() {
        return Err(ModelError::DimensionMismatch {
            what: "theta",
            expected: model.param_count(),
            got: theta.len(),
        });
    }
    let mut scratch = model.scratch();
    let sse: f64 = data
        .iter()
        .map(|t| {
            let r = model.eval(theta, &t.context, t.arm, &mut scratch) - t.reward;
            r * r
        })
        .sum();
    Ok(sse / data.len() as f64)
}

/// Uncertainty regularizer `R(theta; D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegSpec {
    /// `|D| * MSE`, the raw sum of squared errors.
    ScaledMse,
    /// `||theta||^2 + |D| * MSE`.
    RidgePlusScaledMse,
    /// `lambda * ||theta - anchor||^2 + sum of squared errors`.
    AnchoredRidgePlusSse { lambda: f64 },
}

/// Subset of `data` that enters one gradient evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Rows<'a> {
    All,
    Sample(&'a [usize]),
}

/// Squared-error sum (or its unbiased minibatch estimate) with gradient
/// accumulated into `grad` scaled by `weight`.
pub(crate) fn sse_accumulate(
    model: &Model,
    theta: &[f64],
    data: &[Transition],
    rows: Rows<'_>,
    weight: f64,
    grad: &mut [f64],
    scratch: &mut Scratch,
) -> f64 {
    let mut visit = |t: &Transition| {
        let f = model.eval(theta, &t.context, t.arm, scratch);
        let r = f - t.reward;
        model.backprop(theta, &t.context, t.arm, 2.0 * r * weight, grad, scratch);
        r * r
    };
    match rows {
        Rows::All => data.iter().map(&mut visit).sum(),
        Rows::Sample(idx) => idx.iter().map(|&i| visit(&data[i])).sum(),
    }
}

/// Adds the gradient of `R` (estimated on `rows`, scaled by `weight`) into
/// `grad` and returns the matching value estimate.
pub(crate) fn regularizer_accumulate(
    model: &Model,
    theta: &[f64],
    data: &[Transition],
    reg: RegSpec,
    anchor: &[f64],
    rows: Rows<'_>,
    weight: f64,
    grad: &mut [f64],
    scratch: &mut Scratch,
) -> f64 {
    let sample_scale = match rows {
        Rows::All => 1.0,
        Rows::Sample(idx) => data.len() as f64 / idx.len() as f64,
    };
    let mut value = if data.is_empty() {
        0.0
    } else {
        sample_scale * sse_accumulate(model, theta, data, rows, weight * sample_scale, grad, scratch)
    };
    let (lambda, center): (f64, Option<&[f64]>) = match reg {
        RegSpec::ScaledMse => (0.0, None),
        RegSpec::RidgePlusScaledMse => (1.0, None),
        RegSpec::AnchoredRidgePlusSse { lambda } => (lambda, Some(anchor)),
    };
    if lambda != 0.0 {
        for (i, (g, &t)) in grad.iter_mut().zip(theta).enumerate() {
            let diff = t - center.map_or(0.0, |c| c[i]);
            value += lambda * diff * diff;
            *g += weight * 2.0 * lambda * diff;
        }
    }
    value
}

/// Value and gradient of `R(theta; D)`. An empty `data` leaves only the ridge
/// term (zero for `scaled_mse`).
pub fn regularizer_value_and_grad(
    model: &Model,
    theta: &[f64],
    data: &[Transition],
    reg: RegSpec,
    anchor: &[f64],
) -> Result<(f64, ParamVector)> {
    let p = model.param_count();
    for (what, len) in [("theta", theta.len()), ("anchor", anchor.len())] {
        if len != p {
            return Err(ModelError::DimensionMismatch {
                what,
                expected: p,
                got: len,
            });
        }
    }
    model.check_data(data)?;
    let mut grad = ParamVector::zeros(p);
    let mut scratch = model.scratch();
    let value = regularizer_accumulate(
        model,
        theta,
        data,
        reg,
        anchor,
        Rows::All,
        1.0,
        &mut grad,
        &mut scratch,
    );
    Ok((value, grad))
}

/// Number of rows entering a gradient estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchSize {
    #[default]
    Full,
    Mini(usize),
}

impl BatchSize {
    /// Draws row indices for one step; `None` means use every row.
    pub(crate) fn draw<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Option<Vec<usize>> {
        match self {
            BatchSize::Mini(b) if b < n => Some(index::sample(rng, n, b).into_vec()),
            _ => None,
        }
    }
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Mini(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("batch size must be positive")),
            Raw::Count(n) => Ok(BatchSize::Mini(n as usize)),
            Raw::Word(w) if w.eq_ignore_ascii_case("full") => Ok(BatchSize::Full),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "batch size must be a positive count or \"full\", got {w:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Ridge term `||theta||^2`.
    #[default]
    None,
    /// Ridge term `||theta - theta_0||^2` around the initial parameters.
    InitPoint,
}

/// How the data term of the training loss is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossScale {
    /// Sum of squared errors (`|D| * MSE`).
    #[default]
    Sum,
    /// Mean squared error.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    pub steps: usize,
    #[serde(default)]
    pub batch_size: BatchSize,
    #[serde(default)]
    pub ridge_weight: f64,
    #[serde(default)]
    pub anchor: Anchor,
    #[serde(default)]
    pub loss: LossScale,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            steps: 20,
            batch_size: BatchSize::Full,
            ridge_weight: 0.0,
            anchor: Anchor::None,
            loss: LossScale::Sum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(ModelError::InvalidSpec("train step_size must be positive".into()));
        }
        if !(self.ridge_weight >= 0.0) {
            return Err(ModelError::InvalidSpec("train ridge_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Gradient descent on the data loss plus `ridge_weight * ||theta - c||^2`,
/// where `c` is zero or `init_point` per `cfg.anchor`.
pub fn train<R: Rng + ?Sized>(
    model: &Model,
    theta_init: &ParamVector,
    init_point: &ParamVector,
    data: &[Transition],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    train_traced(model, theta_init, init_point, data, cfg, rng).map(|(theta, _)| theta)
}

/// [`train`] that also returns the (minibatch) loss seen before every step.
pub fn train_traced<R: Rng + ?Sized>(
    model: &Model,
    theta_init: &ParamVector,
    init_point: &ParamVector,
    data: &[Transition],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(ParamVector, Vec<f64>)> {
    cfg.validate()?;
    let p = model.param_count();
    for (what, len) in [("theta", theta_init.len()), ("init_point", init_point.len())] {
        if len != p {
            return Err(ModelError::DimensionMismatch {
                what,
                expected: p,
                got: len,
            });
        }
    }
    model.check_data(data)?;
    let mut theta = theta_init.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 || (data.is_empty() && cfg.ridge_weight == 0.0) {
        return Ok((theta, trace));
    }
    let mut grad = vec![0.0; p];
    let mut scratch = model.scratch();
    let n = data.len();
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let batch = cfg.batch_size.draw(n, rng);
        let rows = batch.as_deref().map_or(Rows::All, Rows::Sample);
        let used = batch.as_ref().map_or(n, Vec::len);
        let weight = match cfg.loss {
            LossScale::Sum => n as f64 / used.max(1) as f64,
            LossScale::Mean => 1.0 / used.max(1) as f64,
        };
        let mut loss = if n == 0 {
            0.0
        } else {
            weight * sse_accumulate(model, &theta, data, rows, weight, &mut grad, &mut scratch)
        };
        if cfg.ridge_weight != 0.0 {
            for (i, g) in grad.iter_mut().enumerate() {
                let c = match cfg.anchor {
                    Anchor::None => 0.0,
                    Anchor::InitPoint => init_point[i],
                };
                let diff = theta[i] - c;
                loss += cfg.ridge_weight * diff * diff;
                *g += 2.0 * cfg.ridge_weight * diff;
            }
        }
        if !loss.is_finite() {
            return Err(ModelError::NonFinite { step });
        }
        trace.push(loss);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.step_size * g;
        }
        if !theta.is_finite() {
            return Err(ModelError::NonFinite { step });
        }
    }
    Ok((theta, trace))
}

/// Exact ridge solution `(lambda I + sum phi phi')^-1 sum phi r` for a
/// feature-map model.
pub fn ridge_fit(model: &Model, data: &[Transition], lambda: f64) -> Result<ParamVector> {
    if !model.is_feature_model() {
        return Err(ModelError::NotFeatureModel);
    }
    model.check_data(data)?;
    let p = model.param_count();
    if data.is_empty() {
        return Ok(ParamVector::zeros(p));
    }
    let mut z = Matrix::scaled_identity(p, lambda);
    let mut b = vec![0.0; p];
    for t in data {
        let phi = model.features(&t.context, t.arm)?;
        z.add_outer(&phi, 1.0);
        for (bi, f) in b.iter_mut().zip(&phi) {
            *bi += f * t.reward;
        }
    }
    Ok(ParamVector::from(linalg::psd_solve(&z, &b)?))
}
