//! Analytically constructed models paired with the streams they are
//! evaluated on. Nothing here is trained; weights are written down so that
//! the ground truth and the posterior spread are known.

use std::path::Path;

use dbnn_core::engine::default_posterior_params;
use dbnn_core::{Activation, EngineConfig, MlpSpec, Model, OchParams, Posterior, Task};
use serde::{Deserialize, Serialize};

use crate::gen::{gen_stream, GenParams, Labeler, StreamKind};
use crate::records::{self, Format, StreamRecord};
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub model: Model,
    pub stream: GenParams,
    pub config: EngineConfig,
}

impl Fixture {
    pub fn records(&self) -> Vec<StreamRecord> {
        gen_stream(self.stream.clone()).expect("fixture stream params are valid").collect()
    }

    /// Input stored in the weight file's self-test record.
    pub fn probe(&self) -> Vec<f64> {
        vec![0.25; self.model.spec.input_dim()]
    }

    /// Writes `model.dbnnw`, `stream.csv`, `stream.jsonl` and `config.json`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| HarnessError::Data { line: None, message: format!("{}: {e}", dir.display()) })?;
        self.model.save(dir.join("model.dbnnw"), &self.probe())?;
        let recs = self.records();
        records::write(&dir.join("stream.csv"), Format::Csv, &recs)?;
        records::write(&dir.join("stream.jsonl"), Format::Jsonl, &recs)?;
        let manifest = FixtureManifest { name: self.name.to_string(), stream: self.stream.clone(), config: self.config.clone() };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(dir.join("config.json"), json + "\n")
            .map_err(|e| HarnessError::Data { line: None, message: format!("{}: {e}", dir.display()) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub name: String,
    pub stream: GenParams,
    pub config: EngineConfig,
}

pub const NAMES: [&str; 3] = ["drift-regression", "noisy-boundary", "perfect-classifier"];

pub fn by_name(name: &str) -> Result<Fixture, HarnessError> {
    match name {
        "drift-regression" => Ok(drift_regression()),
        "noisy-boundary" => Ok(noisy_boundary()),
        "perfect-classifier" => Ok(perfect_classifier()),
        _ => Err(HarnessError::Config(format!("unknown fixture {name:?} (expected one of {})", NAMES.join(", ")))),
    }
}

/// Layout helper for a `[2, h, out]` network: per layer a row-major weight
/// matrix followed by the bias.
/// Biases start at zero.
struct TwoLayer {
    h: usize,
    w: Vec<f64>,
}

impl TwoLayer {
    fn new(h: usize, out: usize) -> Self {
        Self { h, w: vec![0.0; 2 * h + h + out * h + out] }
    }
    fn w1(&mut self, unit: usize, input: usize) -> &mut f64 {
        &mut self.w[unit * 2 + input]
    }
    fn b1_index(&self, unit: usize) -> usize {
        2 * self.h + unit
    }
    fn w2_index(&self, out: usize, unit: usize) -> usize {
        3 * self.h + out * self.h + unit
    }
    fn w2(&mut self, out: usize, unit: usize) -> &mut f64 {
        let i = self.w2_index(out, unit);
        &mut self.w[i]
    }
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Regression `1.5 tanh(0.8 m)` on a 2-D Gaussian whose mean drifts from
/// `(-1, -1)` to `(1, 1)` over 2,000 steps. The posterior is Gaussian around
/// those weights; a second hidden unit with zero mean output weight makes the
/// predictive spread grow with `|m|`.
pub fn drift_regression() -> Fixture {
    let mut t = TwoLayer::new(2, 1);
    for i in 0..2 {
        *t.w1(0, i) = 0.8 * INV_SQRT2;
        *t.w1(1, i) = 0.6 * INV_SQRT2;
    }
    *t.w2(0, 0) = 1.5;
    let spec = MlpSpec::new(vec![2, 2, 1], Activation::Tanh, Task::Regression).expect("valid spec");
    let mut log_var = vec![(0.01f64).ln(); t.w.len()];
    // output weight of the second unit carries most of the model uncertainty
    log_var[t.w2_index(0, 1)] = (0.25f64).ln();
    let model = Model::new(spec, Posterior::Gaussian { mean: t.w, log_var }).expect("valid model");
    let stream = GenParams {
        kind: StreamKind::DriftingGaussian,
        dim: 2,
        steps: 2000,
        start: -1.0,
        delta: 0.001,
        noise_sd: 0.05,
        labeler: Labeler::Regression { scale: 1.5, slope: 0.8, noise_sd: 1.0 },
        seed: 11,
        ..GenParams::default()
    };
    let config = EngineConfig {
        m_samples: 100,
        och_x1_params: OchParams { k_target: 100, lambda: 0.01, ..default_posterior_params() },
        och_y_params: OchParams { k_target: 50, lambda: 0.3, ..OchParams::default() },
        ..EngineConfig::default()
    };
    Fixture { name: "drift-regression", model, stream, config }
}

/// Binary classification on `m > 0` with labels flipped near the boundary.
/// The posterior is uncertain about the boundary offset.
pub fn noisy_boundary() -> Fixture {
    let mut t = TwoLayer::new(2, 2);
    for i in 0..2 {
        *t.w1(0, i) = 2.0 * INV_SQRT2;
    }
    *t.w2(1, 0) = 3.0;
    *t.w2(0, 0) = -3.0;
    let spec = MlpSpec::new(vec![2, 2, 2], Activation::Tanh, Task::Classification).expect("valid spec");
    let mut log_var = vec![(0.01f64).ln(); t.w.len()];
    // uncertain offset of the boundary unit
    log_var[t.b1_index(0)] = (0.5f64).ln();
    let model = Model::new(spec, Posterior::Gaussian { mean: t.w, log_var }).expect("valid model");
    let stream = GenParams {
        kind: StreamKind::PiecewiseConstant,
        dim: 2,
        steps: 2000,
        segment_len: 50,
        level_sd: 1.0,
        noise_sd: 0.1,
        labeler: Labeler::Threshold { flip_max: 0.45, band: 0.5 },
        seed: 23,
        ..GenParams::default()
    };
    Fixture { name: "noisy-boundary", model, stream, config: EngineConfig::default() }
}

/// Separable two-cluster stream and a sharp classifier that gets every record
/// right with confidence close to 1.
pub fn perfect_classifier() -> Fixture {
    // [2, 1, 2] layout: w1 (1x2) | b1 | w2 (2x1) | b2
    let w = vec![5.0 * INV_SQRT2, 5.0 * INV_SQRT2, 0.0, -10.0, 10.0, 0.0, 0.0];
    let spec = MlpSpec::new(vec![2, 1, 2], Activation::Tanh, Task::Classification).expect("valid spec");
    let model = Model::new(spec, Posterior::point(w)).expect("valid model");
    let stream = GenParams {
        kind: StreamKind::TwoClusterAlternating,
        dim: 2,
        steps: 1000,
        gap: 6.0,
        noise_sd: 0.3,
        labeler: Labeler::Threshold { flip_max: 0.0, band: 1.0 },
        seed: 5,
        ..GenParams::default()
    };
    Fixture { name: "perfect-classifier", model, stream, config: EngineConfig::default() }
}
