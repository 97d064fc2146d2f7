//! DBNN runs over a grid of output-histogram hyperparameters.

use std::fmt;
use std::str::FromStr;

use dbnn_core::{EngineConfig, Mode, Model, OchParams};
use serde::{Deserialize, Serialize};

use crate::eval::{run_eval, EvalOptions};
use crate::records::StreamRecord;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMetric {
    Accuracy,
    AccuracyAtThreshold,
    /// Negated so that larger is better for every metric.
    NegRmseVsTruth,
    NegRmseVsOracle,
}

impl fmt::Display for SweepMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMetric::Accuracy => "accuracy",
            SweepMetric::AccuracyAtThreshold => "accuracy-at-threshold",
            SweepMetric::NegRmseVsTruth => "neg-rmse-vs-truth",
            SweepMetric::NegRmseVsOracle => "neg-rmse-vs-oracle",
        })
    }
}

impl FromStr for SweepMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(SweepMetric::Accuracy),
            "accuracy-at-threshold" => Ok(SweepMetric::AccuracyAtThreshold),
            "neg-rmse-vs-truth" => Ok(SweepMetric::NegRmseVsTruth),
            "neg-rmse-vs-oracle" => Ok(SweepMetric::NegRmseVsOracle),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub k_target: Vec<usize>,
    pub lambda: Vec<f64>,
    pub phi_logit: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn points(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for &k in &self.k_target {
            for &l in &self.lambda {
                for &p in &self.phi_logit {
                    out.push((k, l, p));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k_target: usize,
    pub lambda: f64,
    pub phi_logit: f64,
    pub seed: u64,
    pub value: Option<f64>,
    pub error: Option<String>,
}

/// Runs DBNN once per grid point and seed, varying `och_y_params`. Failed
/// points are recorded and the sweep continues.
pub fn run_sweep(
    model: &Model,
    base: &EngineConfig,
    records: &[StreamRecord],
    grid: &SweepGrid,
    metric: SweepMetric,
) -> Result<Vec<SweepRow>, HarnessError> {
    let points = grid.points();
    if points.is_empty() || grid.seeds.is_empty() {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }
    let jobs: Vec<(usize, f64, f64, u64)> =
        grid.seeds.iter().flat_map(|&s| points.iter().map(move |&(k, l, p)| (k, l, p, s))).collect();
    let run = |&(k, lambda, phi_logit, seed): &(usize, f64, f64, u64)| {
        let cfg = EngineConfig {
            seed,
            och_y_params: OchParams { k_target: k, lambda, phi_logit, ..base.och_y_params },
            ..base.clone()
        };
        let opts = EvalOptions { modes: vec![Mode::Dbnn], parallel: false, ..EvalOptions::default() };
        let value = run_eval(model, &cfg, records, &EvalOptions {
            oracle: if metric == SweepMetric::NegRmseVsOracle { Mode::Mu } else { Mode::Dbnn },
            ..opts
        })
        .and_then(|o| {
            let m = o.report.mode(Mode::Dbnn).cloned().ok_or_else(|| HarnessError::Internal("missing DBNN row".into()))?;
            if let Some(e) = m.error {
                return Err(HarnessError::Internal(e));
            }
            let v = match metric {
                SweepMetric::Accuracy => m.accuracy,
                SweepMetric::AccuracyAtThreshold => m.accuracy_at_threshold,
                SweepMetric::NegRmseVsTruth => m.rmse_vs_truth.map(|x| -x),
                SweepMetric::NegRmseVsOracle => m.rmse_vs_oracle.map(|x| -x),
            };
            v.ok_or_else(|| HarnessError::Config(format!("metric {metric} is undefined for this stream")))
        });
        let (value, error) = match value {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        SweepRow { k_target: k, lambda, phi_logit, seed, value, error }
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let chunk = jobs.len().div_ceil(workers);
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs.chunks(chunk).map(|c| scope.spawn(move || c.iter().map(run).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    Ok(rows)
}

pub fn rows_to_csv(rows: &[SweepRow], metric: SweepMetric) -> String {
    let mut s = format!("k_target,lambda,phi_logit,seed,{metric},error\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:?},{:?},{},{},{}\n",
            r.k_target,
            r.lambda,
            r.phi_logit,
            r.seed,
            r.value.map_or(String::new(), |v| format!("{v:?}")),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    s
}
