//! Bandit environments with true means for regret accounting.
//!
//! Every random quantity is keyed by `(seed, label, counter)`: contexts by
//! round, reward noise by `(round, arm)`. Two agents run on the same seed see
//! the same contexts and the same noise for any arm they pull.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Activation, FeatureMapSpec, Model, ModelError, ModelKind, ModelSpec, ParamVector};
use crate::seeding;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("row {row}: label {label} outside [0, {classes})")]
    LabelOutOfRange { row: usize, label: i64, classes: usize },
    #[error("dataset exhausted: round {round} but only {rows} rows")]
    Exhausted { round: u64, rows: usize },
    #[error("invalid environment: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextLaw {
    /// I.i.d. standard normal coordinates.
    Gaussian,
    /// I.i.d. uniform on `[-1, 1]`.
    Uniform,
    /// Rows of the dataset in their shuffled order.
    DatasetOrder,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_label() -> String {
    "label".into()
}

fn default_linear_map() -> FeatureMapSpec {
    FeatureMapSpec::DisjointOnehot
}

/// Family-specific part of an [`EnvSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    /// Context-free arms with fixed means.
    Mab { means: Vec<f64> },
    /// `phi(x, a)' theta*`; `theta*` is drawn from the seed when absent.
    Linear {
        #[serde(default = "default_linear_map")]
        feature_map: FeatureMapSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_star: Option<Vec<f64>>,
    },
    /// Linear in random Fourier features.
    Kernel {
        feature_map: FeatureMapSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_star: Option<Vec<f64>>,
    },
    /// Random MLP generator with one output per arm.
    MlpSim {
        #[serde(default = "default_hidden")]
        hidden_widths: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    /// Classification rows; reward 1 when the arm equals the label.
    Dataset {
        path: PathBuf,
        #[serde(default = "default_label")]
        label_column: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(flatten)]
    pub kind: EnvKind,
    pub arm_count: usize,
    pub context_dim: usize,
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_law: Option<ContextLaw>,
}

impl EnvSpec {
    /// Ten-dimensional Gaussian contexts, ten arms, a `[10, 32, 10]` ReLU
    /// generator and noise std 0.05.
    pub fn mlp_table2() -> Self {
        Self {
            kind: EnvKind::MlpSim {
                hidden_widths: default_hidden(),
                activation: Activation::Relu,
            },
            arm_count: 10,
            context_dim: 10,
            noise_std: 0.05,
            context_law: Some(ContextLaw::Gaussian),
        }
    }

    /// Four-layer generator variant of [`EnvSpec::mlp_table2`].
    pub fn mlp_sim_deep() -> Self {
        Self {
            kind: EnvKind::MlpSim {
                hidden_widths: vec![32, 32, 32],
                activation: Activation::Relu,
            },
            ..Self::mlp_table2()
        }
    }

    pub fn law(&self) -> ContextLaw {
        self.context_law.unwrap_or(match self.kind {
            EnvKind::Dataset { .. } => ContextLaw::DatasetOrder,
            _ => ContextLaw::Gaussian,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EnvError::InvalidSpec(m));
        if self.arm_count < 2 {
            return bad(format!("arm_count must be at least 2, got {}", self.arm_count));
        }
        if self.context_dim == 0 {
            return bad("context_dim must be positive".into());
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        let dataset = matches!(self.kind, EnvKind::Dataset { .. });
        if dataset != (self.law() == ContextLaw::DatasetOrder) {
            return bad("dataset_order contexts go with dataset environments only".into());
        }
        match &self.kind {
            EnvKind::Mab { means } if means.len() != self.arm_count => {
                bad(format!("{} means for {} arms", means.len(), self.arm_count))
            }
            EnvKind::Mab { means } if means.iter().any(|m| !m.is_finite()) => bad("means must be finite".into()),
            EnvKind::MlpSim { hidden_widths, .. } if hidden_widths.iter().any(|&w| w == 0) => {
                bad("hidden widths must be positive".into())
            }
            _ => Ok(()),
        }
    }

    /// Resolves a relative dataset path against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let EnvKind::Dataset { path, .. } = &mut self.kind {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Truth {
    Mab(Vec<f64>),
    Model { model: Model, theta_star: ParamVector },
    Dataset(DatasetRows),
}

/// Standardized, shuffled classification rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRows {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

/// A seeded environment instance.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    seed: u64,
    truth: Truth,
}

impl Env {
    /// Builds the instance for `seed`; random ground truths come from it.
    pub fn new(spec: EnvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let truth = match &spec.kind {
            EnvKind::Mab { means } => Truth::Mab(means.clone()),
            EnvKind::Linear {
                feature_map,
                theta_star,
            } => {
                let model = Model::new(ModelSpec {
                    kind: ModelKind::Linear {
                        feature_map: feature_map.clone(),
                    },
                    context_dim: spec.context_dim,
                    arm_count: spec.arm_count,
                })?;
                let theta_star = explicit_or_drawn(&model, theta_star.as_deref(), seed)?;
                Truth::Model { model, theta_star }
            }
            EnvKind::Kernel {
                feature_map,
                theta_star,
            } => {
                let model = Model::new(ModelSpec {
                    kind: ModelKind::KernelFeatures {
                        feature_map: feature_map.clone(),
                    },
                    context_dim: spec.context_dim,
                    arm_count: spec.arm_count,
                })?;
                let theta_star = explicit_or_drawn(&model, theta_star.as_deref(), seed)?;
                Truth::Model { model, theta_star }
            }
            EnvKind::MlpSim {
                hidden_widths,
                activation,
            } => {
                let mut widths = vec![spec.context_dim];
                widths.extend(hidden_widths);
                widths.push(spec.arm_count);
                let model = Model::new(ModelSpec {
                    kind: ModelKind::Mlp {
                        layer_widths: widths,
                        activation: *activation,
                        bias: true,
                    },
                    context_dim: spec.context_dim,
                    arm_count: spec.arm_count,
                })?;
                let theta_star = model.init_params(&mut seeding::rng_for(seed, "generator", 0));
                Truth::Model { model, theta_star }
            }
            EnvKind::Dataset { path, label_column } => {
                let rows = read_dataset(path, label_column, spec.arm_count, seed)?;
                if rows.features.first().map_or(0, Vec::len) != spec.context_dim {
                    return Err(EnvError::InvalidSpec(format!(
                        "context_dim {} but the file has {} feature columns",
                        spec.context_dim,
                        rows.features.first().map_or(0, Vec::len)
                    )));
                }
                Truth::Dataset(rows)
            }
        };
        Ok(Self { spec, seed, truth })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn arm_count(&self) -> usize {
        self.spec.arm_count
    }

    pub fn context_dim(&self) -> usize {
        self.spec.context_dim
    }

    /// Ground-truth parameters of model-backed environments.
    pub fn theta_star(&self) -> Option<(&Model, &ParamVector)> {
        match &self.truth {
            Truth::Model { model, theta_star } => Some((model, theta_star)),
            _ => None,
        }
    }

    pub fn dataset(&self) -> Option<&DatasetRows> {
        match &self.truth {
            Truth::Dataset(rows) => Some(rows),
            _ => None,
        }
    }

    /// Number of rounds the environment can serve, if bounded.
    pub fn row_limit(&self) -> Option<usize> {
        self.dataset().map(|d| d.labels.len())
    }

    /// Context observed at zero-based `round`.
    pub fn context_at(&self, round: u64) -> Result<Vec<f64>> {
        self.draw_context("context", round)
    }

    /// Context of the `index`-th offline sample, from a stream disjoint
    /// from the online one (dataset rows are reused in order).
    pub fn offline_context(&self, index: u64) -> Result<Vec<f64>> {
        self.draw_context("offline", index)
    }

    fn draw_context(&self, label: &str, index: u64) -> Result<Vec<f64>> {
        if let Truth::Mab(_) = self.truth {
            return Ok(vec![1.0; self.spec.context_dim]);
        }
        let d = self.spec.context_dim;
        match self.spec.law() {
            ContextLaw::Gaussian => {
                let mut rng = seeding::rng_for(self.seed, label, index);
                Ok((0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            }
            ContextLaw::Uniform => {
                let mut rng = seeding::rng_for(self.seed, label, index);
                Ok((0..d).map(|_| rng.random_range(-1.0..=1.0)).collect())
            }
            ContextLaw::DatasetOrder => {
                let rows = self.dataset().expect("validated: dataset law has rows");
                let n = rows.labels.len();
                let i = if label == "offline" { index as usize % n } else { index as usize };
                rows.features
                    .get(i)
                    .cloned()
                    .ok_or(EnvError::Exhausted { round: index, rows: n })
            }
        }
    }

    /// True mean of every arm at `round` for `context`.
    pub fn means(&self, round: u64, context: &[f64]) -> Result<Vec<f64>> {
        self.means_for(round as usize, context)
    }

    /// True means for an offline sample drawn by [`Env::offline_context`].
    pub fn offline_means(&self, index: u64, context: &[f64]) -> Result<Vec<f64>> {
        let row = self.row_limit().map_or(index as usize, |n| index as usize % n);
        self.means_for(row, context)
    }

    fn means_for(&self, row: usize, context: &[f64]) -> Result<Vec<f64>> {
        let arms = 0..self.spec.arm_count;
        match &self.truth {
            Truth::Mab(means) => Ok(means.clone()),
            Truth::Model { model, theta_star } => arms
                .map(|a| model.forward(theta_star, context, a).map_err(EnvError::from))
                .collect(),
            Truth::Dataset(rows) => {
                let label = *rows.labels.get(row).ok_or(EnvError::Exhausted {
                    round: row as u64,
                    rows: rows.labels.len(),
                })?;
                Ok(arms.map(|a| if a == label { 1.0 } else { 0.0 }).collect())
            }
        }
    }

    pub fn mean(&self, round: u64, context: &[f64], arm: usize) -> Result<f64> {
        self.check_arm(arm)?;
        Ok(self.means(round, context)?[arm])
    }

    /// Mean plus Gaussian noise keyed by `(round, arm)`.
    pub fn reward(&self, round: u64, context: &[f64], arm: usize) -> Result<f64> {
        let mean = self.mean(round, context, arm)?;
        Ok(mean + self.noise(round, arm))
    }

    /// Noise draw for `(round, arm)`; zero when `noise_std == 0`.
    pub fn noise(&self, round: u64, arm: usize) -> f64 {
        if self.spec.noise_std == 0.0 {
            return 0.0;
        }
        let key = seeding::derive(self.seed, "noise", round);
        let z: f64 = StandardNormal.sample(&mut seeding::rng_for(key, "arm", arm as u64));
        self.spec.noise_std * z
    }

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.spec.arm_count {
            return Err(ModelError::DimensionMismatch {
                what: "arm",
                expected: self.spec.arm_count,
                got: arm,
            }
            .into());
        }
        Ok(())
    }
}

fn explicit_or_drawn(model: &Model, theta: Option<&[f64]>, seed: u64) -> Result<ParamVector> {
    let p = model.param_count();
    match theta {
        Some(t) if t.len() != p => Err(EnvError::InvalidSpec(format!("theta_star has {} entries, expected {p}", t.len()))),
        Some(t) => Ok(t.to_vec().into()),
        None => {
            let mut rng = seeding::rng_for(seed, "theta_star", 0);
            let scale = 1.0 / (model.context_dim() as f64).sqrt();
            Ok((0..p)
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>()
                .into())
        }
    }
}

/// Dataset environment from a CSV with a header row and an integer label
/// column; the remaining columns are standardized numeric features.
pub fn load_dataset_bandit(path: &Path, label_column: &str, classes: usize, seed: u64) -> Result<Env> {
    let rows = read_dataset(path, label_column, classes, seed)?;
    let spec = EnvSpec {
        kind: EnvKind::Dataset {
            path: path.to_path_buf(),
            label_column: label_column.to_string(),
        },
        arm_count: classes,
        context_dim: rows.features.first().map_or(0, Vec::len),
        noise_std: 0.0,
        context_law: Some(ContextLaw::DatasetOrder),
    };
    spec.validate()?;
    Ok(Env {
        spec,
        seed,
        truth: Truth::Dataset(rows),
    })
}

fn read_dataset(path: &Path, label_column: &str, classes: usize, seed: u64) -> Result<DatasetRows> {
    let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, label_column, classes, seed)
}

/// Parses CSV text into shuffled, standardized rows.
pub fn parse_dataset(text: &str, label_column: &str, classes: usize, seed: u64) -> Result<DatasetRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let parse_err = |row, column: &str, message: String| EnvError::Parse {
        row,
        column: column.to_string(),
        message,
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(0, "header", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_err(0, label_column, "label column not in header".into()))?;
    if header.len() < 2 {
        return Err(parse_err(0, "header", "need at least one feature column".into()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, "*", e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(
                row,
                "*",
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let mut x = Vec::with_capacity(header.len() - 1);
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                let label: i64 = cell
                    .parse()
                    .map_err(|_| parse_err(row, &header[j], format!("{cell:?} is not an integer label")))?;
                if label < 0 || label as usize >= classes {
                    return Err(EnvError::LabelOutOfRange { row, label, classes });
                }
                labels.push(label as usize);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(row, &header[j], format!("{cell:?} is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(row, &header[j], "value is not finite".into()));
                }
                x.push(v);
            }
        }
        features.push(x);
    }
    if features.is_empty() {
        return Err(parse_err(1, "*", "no data rows".into()));
    }
    standardize(&mut features);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut seeding::rng_for(seed, "shuffle", 0));
    Ok(DatasetRows {
        features: order.iter().map(|&i| features[i].clone()).collect(),
        labels: order.iter().map(|&i| labels[i]).collect(),
        classes,
    })
}

/// Per-column mean 0, population std 1; constant columns are only centered.
fn standardize(rows: &mut [Vec<f64>]) {
    let n = rows.len() as f64;
    for j in 0..rows[0].len() {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in rows.iter_mut() {
            r[j] -= mean;
            if sd > 0.0 {
                r[j] /= sd;
            }
        }
    }
}

/// MLP simulator with the default shape and the given generator seed.
pub fn make_mlp_sim(seed: u64) -> Result<Env> {
    Env::new(EnvSpec::mlp_table2(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mab(means: Vec<f64>, noise: f64) -> Env {
        Env::new(
            EnvSpec {
                arm_count: means.len(),
                kind: EnvKind::Mab { means },
                context_dim: 1,
                noise_std: noise,
                context_law: None,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn mab_mean_and_noiseless_reward() {
        let env = mab(vec![0.1, 0.9], 0.0);
        assert_eq!(env.mean(0, &[1.0], 1).unwrap(), 0.9);
        assert_eq!(env.reward(7, &[1.0], 1).unwrap(), 0.9);
    }

    #[test]
    fn contexts_are_keyed_by_round() {
        let env = make_mlp_sim(5).unwrap();
        assert_eq!(env.context_at(12).unwrap(), env.context_at(12).unwrap());
        assert_ne!(env.context_at(12).unwrap(), env.context_at(13).unwrap());
        assert_ne!(env.context_at(12).unwrap(), env.offline_context(12).unwrap());
    }

    #[test]
    fn gaussian_context_moments() {
        let env = Env::new(
            EnvSpec {
                kind: EnvKind::Linear {
                    feature_map: FeatureMapSpec::DisjointOnehot,
                    theta_star: None,
                },
                arm_count: 2,
                context_dim: 3,
                noise_std: 0.0,
                context_law: Some(ContextLaw::Gaussian),
            },
            1,
        )
        .unwrap();
        let n = 100_000;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for r in 0..n {
            for (j, v) in env.context_at(r).unwrap().into_iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        for j in 0..3 {
            let mean = sum[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn uniform_contexts_stay_in_range() {
        let mut spec = EnvSpec::mlp_table2();
        spec.context_law = Some(ContextLaw::Uniform);
        let env = Env::new(spec, 2).unwrap();
        for r in 0..1000 {
            assert!(env.context_at(r).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn noise_moments_and_independence() {
        let env = mab(vec![0.2, 0.4], 0.05);
        let n = 100_000u64;
        let draws: Vec<f64> = (0..n).map(|r| env.reward(r, &[1.0], 0).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 0.05).abs() < 0.005);
        assert!((mean - 0.2).abs() < 4.0 * 0.05 / (n as f64).sqrt());
        assert_ne!(env.noise(4, 0), env.noise(4, 1));
        assert_eq!(env.noise(4, 1), env.noise(4, 1));
    }

    #[test]
    fn linear_mean_matches_forward() {
        let env = Env::new(
            EnvSpec {
                kind: EnvKind::Linear {
                    feature_map: FeatureMapSpec::DisjointOnehot,
                    theta_star: None,
                },
                arm_count: 3,
                context_dim: 4,
                noise_std: 0.1,
                context_law: None,
            },
            8,
        )
        .unwrap();
        let (model, theta) = env.theta_star().unwrap();
        let x = env.context_at(0).unwrap();
        for a in 0..3 {
            assert_eq!(env.mean(0, &x, a).unwrap(), model.forward(theta, &x, a).unwrap());
        }
    }

    #[test]
    fn mlp_sim_defaults_and_determinism() {
        let a = make_mlp_sim(11).unwrap();
        let b = make_mlp_sim(11).unwrap();
        assert_eq!((a.context_dim(), a.arm_count(), a.spec().noise_std), (10, 10, 0.05));
        assert_eq!(a.theta_star().unwrap().1, b.theta_star().unwrap().1);
    }

    #[test]
    fn mlp_sim_means_bounded() {
        for spec in [EnvSpec::mlp_table2(), EnvSpec::mlp_sim_deep()] {
            let env = Env::new(spec, 4).unwrap();
            for r in 0..10_000 {
                let x = env.context_at(r).unwrap();
                assert!(env.means(r, &x).unwrap().iter().all(|m| m.abs() <= 50.0));
            }
        }
    }

    #[test]
    fn dataset_toy_file() {
        let rows = parse_dataset("f1,f2,label\n1.0,3.0,0\n2.0,5.0,1\n", "label", 2, 0).unwrap();
        for j in 0..2 {
            let mean: f64 = rows.features.iter().map(|r| r[j]).sum::<f64>() / 2.0;
            assert!(mean.abs() < 1e-12);
        }
        assert_eq!(rows.classes, 2);
    }

    #[test]
    fn dataset_errors() {
        let err = parse_dataset("a,label\n1.0,0\nx,1\n", "label", 2, 0).unwrap_err();
        match err {
            EnvError::Parse { row, column, .. } => assert_eq!((row, column.as_str()), (2, "a")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_dataset("a,label\n1.0,3\n", "label", 2, 0),
            Err(EnvError::LabelOutOfRange { row: 1, label: 3, classes: 2 })
        ));
    }

    #[test]
    fn dataset_order_is_seeded_and_exhausts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(&path, "a,b,label\n1,2,0\n3,1,2\n0,0,1\n").unwrap();
        let e1 = load_dataset_bandit(&path, "label", 3, 9).unwrap();
        let e2 = load_dataset_bandit(&path, "label", 3, 9).unwrap();
        assert_eq!(e1.dataset(), e2.dataset());
        for r in 0..3 {
            e1.context_at(r).unwrap();
        }
        assert!(matches!(e1.context_at(3), Err(EnvError::Exhausted { .. })));
        let rows = e1.dataset().unwrap();
        let label = rows.labels[0];
        let x = e1.context_at(0).unwrap();
        assert_eq!(e1.mean(0, &x, label).unwrap(), 1.0);
        assert_eq!(e1.mean(0, &x, (label + 1) % 3).unwrap(), 0.0);
        let total: f64 = (0..3u64)
            .map(|r| {
                let x = e1.context_at(r).unwrap();
                e1.reward(r, &x, rows.labels[r as usize]).unwrap()
            })
            .sum();
        assert_eq!(total, 3.0);
    }
}
