//! Synthetic streams with labels from fixed ground-truth functions.

use std::fmt;
use std::str::FromStr;

use dbnn_core::CounterRng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::records::{Label, StreamRecord};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    /// Mean starts at `start` on every coordinate and moves by `delta` per step.
    DriftingGaussian,
    /// Even records come from the cluster at `start - gap/2`, odd ones from
    /// `start + gap/2`.
    TwoClusterAlternating,
    /// Mean is redrawn from `N(start, level_sd^2)` every `segment_len` steps.
    PiecewiseConstant,
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamKind::DriftingGaussian => "drifting-gaussian",
            StreamKind::TwoClusterAlternating => "two-cluster-alternating",
            StreamKind::PiecewiseConstant => "piecewise-constant",
        })
    }
}

impl FromStr for StreamKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drifting-gaussian" => Ok(StreamKind::DriftingGaussian),
            "two-cluster-alternating" => Ok(StreamKind::TwoClusterAlternating),
            "piecewise-constant" => Ok(StreamKind::PiecewiseConstant),
            _ => Err(format!(
                "unknown stream kind {s:?} (expected drifting-gaussian, two-cluster-alternating or piecewise-constant)"
            )),
        }
    }
}

/// Ground truth attached to generated records. Both labelers look at the
/// projection `m = sum(x) / sqrt(dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Labeler {
    None,
    /// Class `1` when `m > 0`, flipped with probability
    /// `flip_max * exp(-(m / band)^2)`, so label noise sits at the boundary.
    Threshold { flip_max: f64, band: f64 },
    /// Target `scale * tanh(slope * m)` plus Gaussian noise.
    Regression { scale: f64, slope: f64, noise_sd: f64 },
}

impl Labeler {
    pub fn projection(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / (x.len() as f64).sqrt()
    }

    fn label(&self, x: &[f64], rng: &mut CounterRng) -> Option<Label> {
        let m = Self::projection(x);
        match *self {
            Labeler::None => None,
            Labeler::Threshold { flip_max, band } => {
                let clean = usize::from(m > 0.0);
                let flip = rng.bernoulli(flip_max * (-(m / band).powi(2)).exp());
                Some(Label::Class(if flip { 1 - clean } else { clean }))
            }
            Labeler::Regression { scale, slope, noise_sd } => {
                let z: f64 = rng.sample(StandardNormal);
                Some(Label::Target(vec![scale * (slope * m).tanh() + noise_sd * z]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub kind: StreamKind,
    pub dim: usize,
    pub steps: usize,
    pub start: f64,
    pub delta: f64,
    pub noise_sd: f64,
    pub gap: f64,
    pub segment_len: usize,
    pub level_sd: f64,
    pub labeler: Labeler,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            kind: StreamKind::DriftingGaussian,
            dim: 2,
            steps: 1000,
            start: 0.0,
            delta: 0.0,
            noise_sd: 0.1,
            gap: 2.0,
            segment_len: 100,
            level_sd: 1.0,
            labeler: Labeler::None,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd));
        }
        if !self.start.is_finite() || !self.delta.is_finite() || !self.gap.is_finite() {
            return bad("start, delta and gap must be finite".into());
        }
        if self.kind == StreamKind::PiecewiseConstant && self.segment_len == 0 {
            return bad("segment_len must be >= 1".into());
        }
        if !(self.level_sd >= 0.0 && self.level_sd.is_finite()) {
            return bad("level_sd must be finite and >= 0".into());
        }
        match self.labeler {
            Labeler::Threshold { flip_max, band } if !(0.0..=1.0).contains(&flip_max) || band <= 0.0 => {
                bad("threshold labeler needs flip_max in [0, 1] and band > 0".into())
            }
            Labeler::Regression { noise_sd, .. } if noise_sd < 0.0 => bad("labeler noise_sd must be >= 0".into()),
            _ => Ok(()),
        }
    }

    /// Mean of the generating distribution at step `t`.
    pub fn mean_at(&self, t: usize) -> Vec<f64> {
        match self.kind {
            StreamKind::DriftingGaussian => vec![self.start + self.delta * t as f64; self.dim],
            StreamKind::TwoClusterAlternating => {
                let side = if t.is_multiple_of(2) { -0.5 } else { 0.5 };
                vec![self.start + side * self.gap; self.dim]
            }
            StreamKind::PiecewiseConstant => {
                let mut rng = CounterRng::new(self.seed).fork(1 + (t / self.segment_len) as u64);
                (0..self.dim)
                    .map(|_| self.start + self.level_sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
    }
}

/// Lazily generated stream; deterministic per `params.seed`.
pub struct Generator {
    params: GenParams,
    rng: CounterRng,
    label_rng: CounterRng,
    t: usize,
    segment_mean: Option<(usize, Vec<f64>)>,
}

pub fn gen_stream(params: GenParams) -> Result<Generator, HarnessError> {
    params.validate()?;
    let base = CounterRng::new(params.seed);
    Ok(Generator { rng: base.fork(0x5EED), label_rng: base.fork(0x1ABE1), params, t: 0, segment_mean: None })
}

impl Iterator for Generator {
    type Item = StreamRecord;

    fn next(&mut self) -> Option<StreamRecord> {
        if self.t >= self.params.steps {
            return None;
        }
        let t = self.t;
        self.t += 1;
        let mean = if self.params.kind == StreamKind::PiecewiseConstant {
            let segment = t / self.params.segment_len;
            match &self.segment_mean {
                Some((s, m)) if *s == segment => m.clone(),
                _ => {
                    let m = self.params.mean_at(t);
                    self.segment_mean = Some((segment, m.clone()));
                    m
                }
            }
        } else {
            self.params.mean_at(t)
        };
        let features: Vec<f64> = mean
            .iter()
            .map(|mu| mu + self.params.noise_sd * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let label = self.params.labeler.label(&features, &mut self.label_rng);
        Some(StreamRecord { features, label, timestamp: Some(t as u64) })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.params.steps - self.t;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let p = GenParams { steps: 50, labeler: Labeler::Threshold { flip_max: 0.4, band: 0.5 }, ..Default::default() };
        let a: Vec<_> = gen_stream(p.clone()).unwrap().collect();
        let b: Vec<_> = gen_stream(p.clone()).unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<_> = gen_stream(GenParams { seed: 1, ..p }).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn parity_selects_cluster() {
        let p = GenParams { kind: StreamKind::TwoClusterAlternating, gap: 10.0, noise_sd: 0.5, steps: 200, ..Default::default() };
        for (t, r) in gen_stream(p).unwrap().enumerate() {
            assert_eq!(r.features[0] > 0.0, t % 2 == 1);
        }
    }

    #[test]
    fn piecewise_mean_is_constant_within_segments() {
        let p = GenParams { kind: StreamKind::PiecewiseConstant, segment_len: 10, noise_sd: 0.0, steps: 40, ..Default::default() };
        let r: Vec<_> = gen_stream(p).unwrap().collect();
        assert_eq!(r[0].features, r[9].features);
        assert_ne!(r[9].features, r[10].features);
    }

    #[test]
    fn invalid_params() {
        assert!(gen_stream(GenParams { dim: 0, ..Default::default() }).is_err());
        assert!(gen_stream(GenParams { noise_sd: -1.0, ..Default::default() }).is_err());
        let p = GenParams { labeler: Labeler::Threshold { flip_max: 2.0, band: 1.0 }, ..Default::default() };
        assert!(gen_stream(p).is_err());
    }
}
