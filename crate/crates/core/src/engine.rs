//! Streaming inference modes.
//!
//! * `SP`: one forward pass with the posterior mean; confidence is the max
//!   softmax probability.
//! * `MU`: `mu_samples` posterior draws per record, one forward each.
//! * `DBNN`: histograms over the joint input `(d, w)` (`och_x`), the posterior
//!   (`och_x1`) and the outputs (`och_y`), with at most one forward pass per
//!   record. A step draws `w` from `och_x1`, updates `och_x` with `(d, w)`,
//!   runs the network only when `och_x` created a new codevector, looks up the
//!   cached prediction of the codevector whose data part is nearest to `d`,
//!   and feeds it to `och_y` with count `alpha = delta_n / N` taken from the
//!   `och_x` update.
//! * `DU`: DBNN with a point posterior.
//!
//! `alpha` can be negative when decay dominates; it is clamped to
//! `alpha_floor` before it reaches `och_y`, and clamps are counted.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::och::{Gate, Och, OchError, OchParams};
use crate::predictor::{build_posterior_och, softmax, Model, PredictorError, Task, WeightSample};
use crate::rng::CounterRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("snapshot format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error(transparent)]
    Och(#[from] OchError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "MU")]
    Mu,
    #[serde(rename = "DU")]
    Du,
    #[serde(rename = "DBNN")]
    Dbnn,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Sp, Mode::Mu, Mode::Du, Mode::Dbnn];

    fn uses_histograms(self) -> bool {
        matches!(self, Mode::Du | Mode::Dbnn)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sp => "SP",
            Mode::Mu => "MU",
            Mode::Du => "DU",
            Mode::Dbnn => "DBNN",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SP" => Ok(Mode::Sp),
            "MU" => Ok(Mode::Mu),
            "DU" => Ok(Mode::Du),
            "DBNN" => Ok(Mode::Dbnn),
            _ => Err(format!("unknown mode {s:?} (expected SP, MU, DU or DBNN)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub mode: Mode,
    pub mu_samples: usize,
    /// Observation precision of the regression likelihood; MU adds `1/tau`
    /// to its predictive variance.
    pub tau: f64,
    pub och_x_params: OchParams,
    pub och_y_params: OchParams,
    pub och_x1_params: OchParams,
    /// Posterior draws quantized into `och_x1`.
    pub m_samples: usize,
    pub confidence_threshold: f64,
    pub alpha_floor: f64,
    pub seed: u64,
    /// Minimum wall time of one forward pass, in microseconds (0 = none).
    pub forward_floor_us: u64,
}

pub const DEFAULT_ALPHA_FLOOR: f64 = 1e-6;

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Dbnn,
            mu_samples: 30,
            tau: 1.0,
            och_x_params: OchParams::default(),
            och_y_params: OchParams::default(),
            och_x1_params: default_posterior_params(),
            m_samples: 30,
            confidence_threshold: 0.9,
            alpha_floor: DEFAULT_ALPHA_FLOOR,
            seed: 0,
            forward_floor_us: 0,
        }
    }
}

/// Parameters of the posterior histogram: one bin per posterior draw and no
/// stochastic deletion, so `m_samples` draws stay represented.
pub fn default_posterior_params() -> OchParams {
    OchParams {
        k_target: 30,
        lambda: 1.0,
        phi_logit: 1.0,
        delete_gate: Gate::Never,
        ..OchParams::default()
    }
}

impl EngineConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.mu_samples < 1 {
            return Err(EngineError::Config("mu_samples must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(EngineError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.m_samples < 1 {
            return Err(EngineError::Config("m_samples must be >= 1".into()));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(EngineError::Config(format!(
                "confidence_threshold must lie in (0, 1), got {}",
                self.confidence_threshold
            )));
        }
        if !(self.alpha_floor > 0.0 && self.alpha_floor.is_finite()) {
            return Err(EngineError::Config("alpha_floor must be positive".into()));
        }
        for p in [&self.och_x_params, &self.och_y_params, &self.och_x1_params] {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub class_probs: Option<Vec<f64>>,
    pub confidence: f64,
    pub predicted_class: Option<usize>,
    pub dnn_executed: bool,
    /// Count fed to `och_y` this step (histogram modes only).
    pub alpha: Option<f64>,
}

impl PredictiveSummary {
    fn from_moments(mean: Vec<f64>, variance: Vec<f64>, class_probs: Option<Vec<f64>>) -> Self {
        let (confidence, predicted_class) = match &class_probs {
            Some(p) => {
                let (arg, max) = argmax(p);
                (max, Some(arg))
            }
            None => (regression_confidence(&variance), None),
        };
        Self { mean, variance, class_probs, confidence, predicted_class, dnn_executed: false, alpha: None }
    }
}

/// `1 / (1 + mean per-dimension variance)`.
pub fn regression_confidence(variance: &[f64]) -> f64 {
    let mean = variance.iter().sum::<f64>() / variance.len() as f64;
    1.0 / (1.0 + mean)
}

fn argmax(p: &[f64]) -> (usize, f64) {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
}

/// Weighted moments of an output histogram: `mean = sum pi_i c_i`,
/// `variance = sum pi_i (c_i - mean)^2` and, for classification,
/// `class_probs = sum pi_i softmax(c_i)`.
pub fn summarize_och_y(och_y: &Och, task: Task) -> Result<PredictiveSummary, EngineError> {
    if och_y.is_empty() {
        return Err(OchError::Empty.into());
    }
    let dim = och_y.dim();
    let total = och_y.total_count();
    let mut mean = vec![0.0; dim];
    for e in och_y.entries() {
        let pi = e.count / total;
        for (m, c) in mean.iter_mut().zip(&e.vector) {
            *m += pi * c;
        }
    }
    let mut variance = vec![0.0; dim];
    let mut probs = (task == Task::Classification).then(|| vec![0.0; dim]);
    for e in och_y.entries() {
        let pi = e.count / total;
        for ((v, c), m) in variance.iter_mut().zip(&e.vector).zip(&mean) {
            let d = c - m;
            *v += pi * d * d;
        }
        if let Some(p) = probs.as_mut() {
            for (acc, s) in p.iter_mut().zip(softmax(&e.vector)) {
                *acc += pi * s;
            }
        }
    }
    Ok(PredictiveSummary::from_moments(mean, variance, probs))
}

/// Counters exposed to benchmarks and reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: u64,
    pub forward_passes: u64,
    pub cache_hits: u64,
    pub alpha_clamps: u64,
    #[serde(skip)]
    pub forward_time: Duration,
    #[serde(skip)]
    pub histogram_time: Duration,
}

/// Codevector id of `och_x` to network output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionCache {
    outputs: BTreeMap<u64, Vec<f64>>,
}

impl PredictionCache {
    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.outputs.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.outputs.keys().copied()
    }
}

#[derive(Debug, Clone)]
struct Histograms {
    x1: Och,
    x: Och,
    y: Och,
    cache: PredictionCache,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    model: Model,
    point: WeightSample,
    hist: Option<Histograms>,
    rng: CounterRng,
    diag: Diagnostics,
}

const X_STREAM: u64 = 1;
const Y_STREAM: u64 = 2;
const X1_STREAM: u64 = 3;
const POSTERIOR_STREAM: u64 = 4;
const MU_STREAM: u64 = 5;

fn salted(params: OchParams, base: &CounterRng, stream: u64) -> OchParams {
    OchParams { rng_seed: params.rng_seed ^ base.fork(stream).seed(), ..params }
}

impl Engine {
    pub fn new(model: Model, config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let base = CounterRng::new(config.seed);
        let point = model.posterior.point_estimate();
        let hist = if config.mode.uses_histograms() {
            Some(Self::build_histograms(&model, &point, &config, &base)?)
        } else {
            None
        };
        Ok(Self { rng: base.fork(MU_STREAM), config, model, point, hist, diag: Diagnostics::default() })
    }

    fn build_histograms(
        model: &Model,
        point: &WeightSample,
        config: &EngineConfig,
        base: &CounterRng,
    ) -> Result<Histograms, EngineError> {
        let data_dim = model.spec.input_dim();
        let p = model.spec.param_count();
        let x1_params = salted(config.och_x1_params, base, X1_STREAM);
        let x1 = if config.mode == Mode::Du {
            Och::from_bins(p, x1_params, vec![(point.weights.clone(), 1.0)])?
        } else {
            let mut rng = base.fork(POSTERIOR_STREAM);
            build_posterior_och(&model.posterior, config.m_samples, x1_params, &mut rng)?
        };
        let mut x = Och::with_split(data_dim + p, data_dim, salted(config.och_x_params, base, X_STREAM))?;
        for e in x1.entries() {
            x.register_weight_sample(e.id, e.vector.clone())?;
        }
        let y = Och::new(model.spec.output_dim(), salted(config.och_y_params, base, Y_STREAM))?;
        Ok(Histograms { x1, x, y, cache: PredictionCache::default() })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diag
    }

    pub fn posterior_och(&self) -> Option<&Och> {
        self.hist.as_ref().map(|h| &h.x1)
    }

    pub fn input_och(&self) -> Option<&Och> {
        self.hist.as_ref().map(|h| &h.x)
    }

    pub fn output_och(&self) -> Option<&Och> {
        self.hist.as_ref().map(|h| &h.y)
    }

    pub fn cache(&self) -> Option<&PredictionCache> {
        self.hist.as_ref().map(|h| &h.cache)
    }

    /// Cache keys equal the live codevector ids of `och_x`.
    pub fn cache_is_coherent(&self) -> bool {
        match &self.hist {
            Some(h) => h.cache.ids().eq(h.x.entries().iter().map(|e| e.id)),
            None => true,
        }
    }

    /// Runs the configured mode on one record.
    pub fn step(&mut self, d: &[f64]) -> Result<PredictiveSummary, EngineError> {
        match self.config.mode {
            Mode::Sp => self.step_sp(d),
            Mode::Mu => self.step_mu(d),
            Mode::Du => self.step_du(d),
            Mode::Dbnn => self.step_dbnn(d),
        }
    }

    fn check_input(&self, d: &[f64]) -> Result<(), EngineError> {
        let expected = self.model.spec.input_dim();
        if d.len() != expected {
            return Err(EngineError::Input(format!("expected {expected} features, got {}", d.len())));
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(EngineError::Input("non-finite feature".into()));
        }
        Ok(())
    }

    fn forward(&mut self, weights: &[f64], d: &[f64]) -> Result<Vec<f64>, EngineError> {
        let start = Instant::now();
        let y = self.model.spec.forward(weights, d)?;
        if self.config.forward_floor_us > 0 {
            pad_until(start, Duration::from_micros(self.config.forward_floor_us));
        }
        self.diag.forward_passes += 1;
        self.diag.forward_time += start.elapsed();
        Ok(y)
    }

    /// Single forward pass with the posterior mean.
    pub fn step_sp(&mut self, d: &[f64]) -> Result<PredictiveSummary, EngineError> {
        self.check_input(d)?;
        let w = std::mem::take(&mut self.point.weights);
        let y = self.forward(&w, d);
        self.point.weights = w;
        let y = y?;
        self.diag.steps += 1;
        let dim = y.len();
        let mut s = match self.model.spec.task {
            Task::Classification => {
                let probs = softmax(&y);
                PredictiveSummary::from_moments(y, vec![0.0; dim], Some(probs))
            }
            Task::Regression => {
                let mut s = PredictiveSummary::from_moments(y, vec![0.0; dim], None);
                s.confidence = 1.0;
                s
            }
        };
        s.dnn_executed = true;
        Ok(s)
    }

    /// Monte Carlo over `mu_samples` posterior draws.
    pub fn step_mu(&mut self, d: &[f64]) -> Result<PredictiveSummary, EngineError> {
        self.check_input(d)?;
        let n = self.config.mu_samples;
        let mut outputs = Vec::with_capacity(n);
        for _ in 0..n {
            let w = self.model.posterior.sample(&mut self.rng);
            outputs.push(self.forward(&w.weights, d)?);
        }
        self.diag.steps += 1;
        let dim = outputs[0].len();
        let inv = 1.0 / n as f64;
        let mut mean = vec![0.0; dim];
        for y in &outputs {
            for (m, v) in mean.iter_mut().zip(y) {
                *m += v * inv;
            }
        }
        let mut variance = vec![0.0; dim];
        for y in &outputs {
            for ((acc, v), m) in variance.iter_mut().zip(y).zip(&mean) {
                *acc += (v - m) * (v - m) * inv;
            }
        }
        let mut s = match self.model.spec.task {
            Task::Classification => {
                let mut probs = vec![0.0; dim];
                for y in &outputs {
                    for (p, s) in probs.iter_mut().zip(softmax(y)) {
                        *p += s * inv;
                    }
                }
                PredictiveSummary::from_moments(mean, variance, Some(probs))
            }
            Task::Regression => {
                let noise = 1.0 / self.config.tau;
                let variance = variance.into_iter().map(|v| v + noise).collect();
                PredictiveSummary::from_moments(mean, variance, None)
            }
        };
        s.dnn_executed = true;
        Ok(s)
    }

    /// DBNN step; requires an engine configured for `DBNN`.
    pub fn step_dbnn(&mut self, d: &[f64]) -> Result<PredictiveSummary, EngineError> {
        if self.config.mode != Mode::Dbnn {
            return Err(EngineError::State(format!("engine was built for {}, not DBNN", self.config.mode)));
        }
        self.step_histograms(d)
    }

    /// DBNN step over a point posterior; requires an engine configured for `DU`.
    pub fn step_du(&mut self, d: &[f64]) -> Result<PredictiveSummary, EngineError> {
        if self.config.mode != Mode::Du {
            return Err(EngineError::State(format!("engine was built for {}, not DU", self.config.mode)));
        }
        self.step_histograms(d)
    }

    fn step_histograms(&mut self, d: &[f64]) -> Result<PredictiveSummary, EngineError> {
        self.check_input(d)?;
        let Some(mut h) = self.hist.take() else {
            return Err(EngineError::State("histograms are not initialized".into()));
        };
        let result = self.step_with(&mut h, d);
        self.hist = Some(h);
        result
    }

    fn step_with(&mut self, h: &mut Histograms, d: &[f64]) -> Result<PredictiveSummary, EngineError> {
        let start = Instant::now();
        let forward_before = self.diag.forward_time;

        let w = h.x1.sample()?;
        let (w_id, w_vec) = (w.id, w.vector.clone());
        let outcome = h.x.update_split(d, w_id, 1.0)?;
        for id in &outcome.deleted_ids {
            h.cache.outputs.remove(id);
        }

        let mut dnn_executed = false;
        if let Some(new_id) = outcome.inserted_id.filter(|&id| h.x.contains(id)) {
            let y = self.forward(&w_vec, d)?;
            h.cache.outputs.insert(new_id, y);
            dnn_executed = true;
        } else {
            self.diag.cache_hits += 1;
        }

        let star = h.x.nearest_on_prefix(d)?.id;
        let y_star = h
            .cache
            .get(star)
            .ok_or_else(|| EngineError::State(format!("no cached prediction for codevector {star}")))?
            .to_vec();

        let raw = outcome.alpha();
        let alpha = if raw.is_finite() && raw >= self.config.alpha_floor {
            raw
        } else {
            self.diag.alpha_clamps += 1;
            self.config.alpha_floor
        };
        h.y.update(&y_star, alpha)?;

        let mut s = summarize_och_y(&h.y, self.model.spec.task)?;
        s.dnn_executed = dnn_executed;
        s.alpha = Some(alpha);
        self.diag.steps += 1;
        let forward_spent = self.diag.forward_time - forward_before;
        self.diag.histogram_time += start.elapsed().saturating_sub(forward_spent);
        Ok(s)
    }

    /// Serializes the mutable engine state. The model itself is not included.
    pub fn snapshot(&self) -> Vec<u8> {
        snapshot::encode(self)
    }

    /// Rebuilds an engine from [`snapshot`](Self::snapshot) bytes and the
    /// model it was created with.
    pub fn restore(model: Model, bytes: &[u8]) -> Result<Self, EngineError> {
        snapshot::decode(model, bytes)
    }
}

fn pad_until(start: Instant, floor: Duration) {
    loop {
        let elapsed = start.elapsed();
        if elapsed >= floor {
            return;
        }
        let left = floor - elapsed;
        if left > Duration::from_micros(200) {
            std::thread::sleep(left - Duration::from_micros(100));
        } else {
            std::hint::spin_loop();
        }
    }
}

/// Snapshot layout (little-endian): magic `DBNE`, version u8 = 1, then
/// length-prefixed (u64) blocks: config as JSON, the three histograms in the
/// `OCH1` format (empty block when absent, order x1, x, y), and the cache as
/// `count u64` followed by `id u64 | len u32 | f64 x len`. Then the MU
/// generator `seed u64 | counter u64` and the counters `steps`,
/// `forward_passes`, `cache_hits`, `alpha_clamps` as u64.
mod snapshot {
    use super::*;

    const MAGIC: &[u8; 4] = b"DBNE";
    const VERSION: u8 = 1;

    fn block(out: &mut Vec<u8>, data: &[u8]) {
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        out.extend_from_slice(data);
    }

    pub fn encode(engine: &Engine) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        block(&mut out, &serde_json::to_vec(&engine.config).expect("config serializes"));
        let empty = Vec::new();
        let (x1, x, y) = match &engine.hist {
            Some(h) => (h.x1.to_bytes(), h.x.to_bytes(), h.y.to_bytes()),
            None => (empty.clone(), empty.clone(), empty),
        };
        for b in [&x1, &x, &y] {
            block(&mut out, b);
        }
        let mut cache = Vec::new();
        if let Some(h) = &engine.hist {
            cache.extend_from_slice(&(h.cache.len() as u64).to_le_bytes());
            for (id, y) in &h.cache.outputs {
                cache.extend_from_slice(&id.to_le_bytes());
                cache.extend_from_slice(&(y.len() as u32).to_le_bytes());
                for v in y {
                    cache.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        block(&mut out, &cache);
        for v in [
            engine.rng.seed(),
            engine.rng.counter(),
            engine.diag.steps,
            engine.diag.forward_passes,
            engine.diag.cache_hits,
            engine.diag.alpha_clamps,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    struct Reader<'a> {
        bytes: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8], EngineError> {
            if self.bytes.len().saturating_sub(self.pos) < n {
                return Err(EngineError::Format { offset: self.pos, reason: "truncated snapshot".into() });
            }
            let s = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }

        fn u64(&mut self) -> Result<u64, EngineError> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }

        fn block(&mut self) -> Result<(usize, &'a [u8]), EngineError> {
            let len = self.u64()? as usize;
            let at = self.pos;
            Ok((at, self.take(len)?))
        }
    }

    pub fn decode(model: Model, bytes: &[u8]) -> Result<Engine, EngineError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(EngineError::Format { offset: 0, reason: "bad magic, expected \"DBNE\"".into() });
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(EngineError::Format {
                offset: 4,
                reason: format!("unsupported version {version}, expected {VERSION}"),
            });
        }
        let (at, cfg) = r.block()?;
        let config: EngineConfig = serde_json::from_slice(cfg)
            .map_err(|e| EngineError::Format { offset: at, reason: format!("config: {e}") })?;
        config.validate()?;
        let mut blobs = Vec::new();
        for _ in 0..3 {
            blobs.push(r.block()?);
        }
        let (cache_at, cache_bytes) = r.block()?;

        let point = model.posterior.point_estimate();
        let hist = if config.mode.uses_histograms() {
            let och = |(at, b): (usize, &[u8])| {
                Och::from_bytes(b).map_err(|e| EngineError::Format { offset: at, reason: e.to_string() })
            };
            let x1 = och(blobs[0])?;
            let mut x = och(blobs[1])?;
            let y = och(blobs[2])?;
            for e in x1.entries() {
                x.register_weight_sample(e.id, e.vector.clone())?;
            }
            let mut c = Reader { bytes: cache_bytes, pos: 0 };
            let n = c.u64()?;
            let mut outputs = BTreeMap::new();
            for _ in 0..n {
                let id = c.u64()?;
                let len = u32::from_le_bytes(c.take(4)?.try_into().unwrap()) as usize;
                let y = c
                    .take(len * 8)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                outputs.insert(id, y);
            }
            Some(Histograms { x1, x, y, cache: PredictionCache { outputs } })
        } else {
            if !cache_bytes.is_empty() {
                return Err(EngineError::Format { offset: cache_at, reason: "cache present without histograms".into() });
            }
            None
        };
        let seed = r.u64()?;
        let counter = r.u64()?;
        let diag = Diagnostics {
            steps: r.u64()?,
            forward_passes: r.u64()?,
            cache_hits: r.u64()?,
            alpha_clamps: r.u64()?,
            ..Diagnostics::default()
        };
        if r.pos != bytes.len() {
            return Err(EngineError::Format { offset: r.pos, reason: "trailing bytes".into() });
        }
        let engine = Engine { config, model, point, hist, rng: CounterRng::from_parts(seed, counter), diag };
        if !engine.cache_is_coherent() {
            return Err(EngineError::Format { offset: cache_at, reason: "cache does not match och_x ids".into() });
        }
        Ok(engine)
    }
}
