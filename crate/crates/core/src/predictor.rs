//! Deterministic MLP `f(d, w)`, weight posteriors, and the weight file format.
//!
//! Flat weight layout: for every layer `l` mapping `n_in -> n_out`, the
//! `n_out x n_in` weight matrix in row-major order followed by the `n_out`
//! biases. Hidden layers apply the configured activation; the last layer is
//! always linear. Classification networks return logits.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::och::{Gate, Och, OchError, OchParams};
use crate::rng::CounterRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error on header line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("shape error in {field}: expected {expected}, got {actual}")]
    Shape { field: String, expected: usize, actual: usize },
    #[error("input dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("self-test failed: output {index} is {actual}, file records {expected}")]
    SelfTest { index: usize, expected: f64, actual: f64 },
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation {other:?}")),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub task: Task,
}

impl MlpSpec {
    pub fn new(layers: Vec<usize>, activation: Activation, task: Task) -> Result<Self, PredictorError> {
        let spec = Self { layers, activation, task };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.layers.len() < 2 {
            return Err(PredictorError::Invalid("an MLP needs at least 2 layer sizes".into()));
        }
        if self.layers.contains(&0) {
            return Err(PredictorError::Invalid("layer sizes must be positive".into()));
        }
        if self.task == Task::Classification && self.output_dim() < 2 {
            return Err(PredictorError::Invalid("classification needs at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layers.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Evaluates the network. Summation order is fixed, so equal inputs give
    /// bit-identical outputs.
    pub fn forward(&self, weights: &[f64], input: &[f64]) -> Result<Vec<f64>, PredictorError> {
        if weights.len() != self.param_count() {
            return Err(PredictorError::Shape {
                field: "weights".into(),
                expected: self.param_count(),
                actual: weights.len(),
            });
        }
        if input.len() != self.input_dim() {
            return Err(PredictorError::Dimension { expected: self.input_dim(), actual: input.len() });
        }
        let mut act = input.to_vec();
        let mut offset = 0;
        let last = self.layers.len() - 2;
        for (l, pair) in self.layers.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let matrix = &weights[offset..offset + n_in * n_out];
            let bias = &weights[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            act = matrix
                .chunks_exact(n_in)
                .zip(bias)
                .map(|(row, b)| {
                    let z = row.iter().zip(&act).fold(*b, |acc, (w, x)| acc + w * x);
                    if l == last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
        }
        Ok(act)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSample {
    pub id: u64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Posterior {
    Ensemble(Vec<WeightSample>),
    /// Independent normal per parameter.
    Gaussian { mean: Vec<f64>, log_var: Vec<f64> },
}

impl Posterior {
    pub fn point(weights: Vec<f64>) -> Self {
        Posterior::Ensemble(vec![WeightSample { id: 0, weights }])
    }

    pub fn ensemble(members: Vec<Vec<f64>>) -> Self {
        Posterior::Ensemble(
            members
                .into_iter()
                .enumerate()
                .map(|(i, weights)| WeightSample { id: i as u64, weights })
                .collect(),
        )
    }

    /// Gaussian around `mean` with the same log-variance on every parameter.
    pub fn isotropic(mean: Vec<f64>, log_var: f64) -> Self {
        let log_var = vec![log_var; mean.len()];
        Posterior::Gaussian { mean, log_var }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Posterior::Ensemble(m) => m.first().map_or(0, |s| s.weights.len()),
            Posterior::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn validate(&self, expected_params: usize) -> Result<(), PredictorError> {
        match self {
            Posterior::Ensemble(members) => {
                if members.is_empty() {
                    return Err(PredictorError::Invalid("empty ensemble".into()));
                }
                for m in members {
                    if m.weights.len() != expected_params {
                        return Err(PredictorError::Shape {
                            field: format!("ensemble member {}", m.id),
                            expected: expected_params,
                            actual: m.weights.len(),
                        });
                    }
                    if m.weights.iter().any(|w| !w.is_finite()) {
                        return Err(PredictorError::Invalid(format!("member {} has non-finite weights", m.id)));
                    }
                }
            }
            Posterior::Gaussian { mean, log_var } => {
                for (field, v) in [("mean", mean), ("log_var", log_var)] {
                    if v.len() != expected_params {
                        return Err(PredictorError::Shape {
                            field: field.into(),
                            expected: expected_params,
                            actual: v.len(),
                        });
                    }
                }
                if mean.iter().any(|x| !x.is_finite()) || log_var.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                    return Err(PredictorError::Invalid("gaussian posterior has non-finite parameters".into()));
                }
            }
        }
        Ok(())
    }

    /// Posterior mean; for ensembles the element-wise member average.
    pub fn point_estimate(&self) -> WeightSample {
        match self {
            Posterior::Ensemble(members) if members.len() == 1 => members[0].clone(),
            Posterior::Ensemble(members) => {
                let n = members.len() as f64;
                let mut acc = vec![0.0; members[0].weights.len()];
                for m in members {
                    for (a, w) in acc.iter_mut().zip(&m.weights) {
                        *a += w;
                    }
                }
                WeightSample { id: u64::MAX, weights: acc.into_iter().map(|a| a / n).collect() }
            }
            Posterior::Gaussian { mean, .. } => WeightSample { id: u64::MAX, weights: mean.clone() },
        }
    }

    /// One posterior draw. Ensembles pick a member uniformly (one draw);
    /// Gaussians return `mean + exp(log_var / 2) * z` with `z` standard normal
    /// and use the draw position as the sample id.
    pub fn sample(&self, rng: &mut CounterRng) -> WeightSample {
        match self {
            Posterior::Ensemble(members) => members[rng.below(members.len())].clone(),
            Posterior::Gaussian { mean, log_var } => {
                let id = rng.counter();
                let weights = mean
                    .iter()
                    .zip(log_var)
                    .map(|(m, lv)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + (0.5 * lv).exp() * z
                    })
                    .collect();
                WeightSample { id, weights }
            }
        }
    }
}

/// Quantizes a posterior into a histogram over weight space.
///
/// Draws `m_samples` weight vectors and feeds each with count 1. The
/// insertion gate is forced open until `k_target` codevectors have been
/// created, so a small sample cannot collapse onto a single bin.
pub fn build_posterior_och(
    posterior: &Posterior,
    m_samples: usize,
    params: OchParams,
    rng: &mut CounterRng,
) -> Result<Och, OchError> {
    if m_samples == 0 {
        return Err(OchError::Config("m_samples must be >= 1".into()));
    }
    let dim = posterior.param_count();
    let mut och = Och::new(dim, params)?;
    let mut inserted = 0;
    for _ in 0..m_samples {
        let w = posterior.sample(rng);
        let gate = if inserted < params.k_target { Gate::Always } else { params.insert_gate };
        let out = och.update_gated(&w.weights, 1.0, gate)?;
        if out.inserted_id.is_some() {
            inserted += 1;
        }
    }
    Ok(och)
}

/// A network shape together with its weight posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: MlpSpec,
    pub posterior: Posterior,
}

impl Model {
    pub fn new(spec: MlpSpec, posterior: Posterior) -> Result<Self, PredictorError> {
        spec.validate()?;
        posterior.validate(spec.param_count())?;
        Ok(Self { spec, posterior })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PredictorError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| PredictorError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        weight_file::decode(&bytes)
    }

    /// Writes the model with a self-test record computed on `probe`.
    pub fn save(&self, path: impl AsRef<Path>, probe: &[f64]) -> Result<(), PredictorError> {
        let path = path.as_ref();
        let bytes = weight_file::encode(self, probe)?;
        fs::write(path, bytes).map_err(|e| PredictorError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Weight file: an ASCII header of `key value...` lines terminated by
/// `end\n`, followed by a little-endian f64 payload.
///
/// ```text
/// dbnn-weights 1
/// layers 2 16 1
/// activation tanh            relu | tanh | identity
/// task regression            regression | classification
/// posterior gaussian         point | ensemble | gaussian
/// members 1                  ensemble size (1 for point and gaussian)
/// end
/// ```
///
/// Payload, with `P` the parameter count: `point` stores `P` values,
/// `ensemble` stores `members x P`, `gaussian` stores `P` means then `P`
/// log-variances. A self-test record follows: `input_dim` inputs then
/// `output_dim` expected outputs of the point estimate. Loading recomputes the
/// outputs and rejects the file on mismatch.
pub mod weight_file {
    use super::*;

    pub const MAGIC_LINE: &str = "dbnn-weights 1";
    const SELF_TEST_TOLERANCE: f64 = 1e-9;

    pub fn encode(model: &Model, probe: &[f64]) -> Result<Vec<u8>, PredictorError> {
        let spec = &model.spec;
        let expected = spec.forward(&model.posterior.point_estimate().weights, probe)?;
        let (kind, members, payload): (&str, usize, Vec<f64>) = match &model.posterior {
            Posterior::Ensemble(m) if m.len() == 1 => ("point", 1, m[0].weights.clone()),
            Posterior::Ensemble(m) => ("ensemble", m.len(), m.iter().flat_map(|s| s.weights.iter().copied()).collect()),
            Posterior::Gaussian { mean, log_var } => {
                ("gaussian", 1, mean.iter().chain(log_var).copied().collect())
            }
        };
        let layers: Vec<String> = spec.layers.iter().map(|l| l.to_string()).collect();
        let header = format!(
            "{MAGIC_LINE}\nlayers {}\nactivation {}\ntask {}\nposterior {kind}\nmembers {members}\nend\n",
            layers.join(" "),
            spec.activation,
            spec.task,
        );
        let mut out = header.into_bytes();
        for x in payload.iter().chain(probe).chain(&expected) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Model, PredictorError> {
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let rest = &bytes[pos..];
            let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
                return Err(PredictorError::Parse { line: lines.len() + 1, message: "header is not terminated by `end`".into() });
            };
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| PredictorError::Parse {
                line: lines.len() + 1,
                message: "header is not UTF-8".into(),
            })?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line.to_string());
        }
        if lines.first().map(String::as_str) != Some(MAGIC_LINE) {
            return Err(PredictorError::Parse { line: 1, message: format!("expected `{MAGIC_LINE}`") });
        }

        let mut layers = None;
        let mut activation = None;
        let mut task = None;
        let mut kind = None;
        let mut members = 1usize;
        for (i, line) in lines.iter().enumerate().skip(1) {
            let lineno = i + 1;
            let err = |message: String| PredictorError::Parse { line: lineno, message };
            let (key, value) = line.split_once(' ').ok_or_else(|| err(format!("malformed line {line:?}")))?;
            match key {
                "layers" => {
                    let sizes = value
                        .split_whitespace()
                        .map(|t| t.parse::<usize>().map_err(|e| err(format!("layers: {e}"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    layers = Some(sizes);
                }
                "activation" => activation = Some(value.parse::<Activation>().map_err(|e| err(format!("activation: {e}")))?),
                "task" => task = Some(value.parse::<Task>().map_err(|e| err(format!("task: {e}")))?),
                "posterior" => match value {
                    "point" | "ensemble" | "gaussian" => kind = Some(value.to_string()),
                    other => return Err(err(format!("posterior: unknown kind {other:?}"))),
                },
                "members" => members = value.parse().map_err(|e| err(format!("members: {e}")))?,
                other => return Err(err(format!("unknown field {other:?}"))),
            }
        }
        let missing = |field: &str| PredictorError::Parse { line: lines.len() + 1, message: format!("missing field `{field}`") };
        let spec = MlpSpec::new(
            layers.ok_or_else(|| missing("layers"))?,
            activation.ok_or_else(|| missing("activation"))?,
            task.ok_or_else(|| missing("task"))?,
        )?;
        let kind = kind.ok_or_else(|| missing("posterior"))?;

        let payload = &bytes[pos..];
        if !payload.len().is_multiple_of(8) {
            return Err(PredictorError::Shape { field: "payload bytes".into(), expected: payload.len() / 8 * 8 + 8, actual: payload.len() });
        }
        let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let p = spec.param_count();
        let weight_values = match kind.as_str() {
            "point" => p,
            "ensemble" => members * p,
            _ => 2 * p,
        };
        let expected_len = weight_values + spec.input_dim() + spec.output_dim();
        if values.len() != expected_len {
            return Err(PredictorError::Shape {
                field: format!("weights ({kind} posterior, {p} parameters per sample, plus self-test)"),
                expected: expected_len,
                actual: values.len(),
            });
        }
        let (weights, test) = values.split_at(weight_values);
        let posterior = match kind.as_str() {
            "point" => Posterior::point(weights.to_vec()),
            "ensemble" => Posterior::ensemble(weights.chunks_exact(p).map(<[f64]>::to_vec).collect()),
            _ => Posterior::Gaussian { mean: weights[..p].to_vec(), log_var: weights[p..].to_vec() },
        };
        let model = Model::new(spec, posterior)?;

        let (probe, expected) = test.split_at(model.spec.input_dim());
        let actual = model.spec.forward(&model.posterior.point_estimate().weights, probe)?;
        for (index, (a, e)) in actual.iter().zip(expected).enumerate() {
            if (a - e).abs() > SELF_TEST_TOLERANCE * e.abs().max(1.0) {
                return Err(PredictorError::SelfTest { index, expected: *e, actual: *a });
            }
        }
        Ok(model)
    }
}
