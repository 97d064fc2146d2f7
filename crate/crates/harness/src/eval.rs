//! Runs several modes over one stream and reports per-mode metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use dbnn_core::engine::Diagnostics;
use dbnn_core::{Engine, EngineConfig, Mode, Model, Task};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics;
use crate::records::{Label, StreamRecord};
use crate::HarnessError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Per-step outputs of one mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
    pub confidence: Vec<f64>,
    pub predicted_class: Vec<Option<usize>>,
    pub dnn_executed: Vec<bool>,
    pub alpha: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub trace: Trace,
    pub diagnostics: Diagnostics,
    pub feature_checksum: String,
    pub elapsed: Duration,
}

/// Steps a fresh engine in `mode` over `records`.
pub fn run_mode(model: &Model, config: &EngineConfig, mode: Mode, records: &[StreamRecord]) -> Result<ModeRun, HarnessError> {
    let config = EngineConfig { mode, ..config.clone() };
    let mut engine = Engine::new(model.clone(), config)?;
    let mut trace = Trace::default();
    let mut hasher = Sha256::new();
    let start = Instant::now();
    for r in records {
        for x in &r.features {
            hasher.update(x.to_le_bytes());
        }
        let s = engine.step(&r.features)?;
        trace.mean.push(s.mean);
        trace.variance.push(s.variance);
        trace.confidence.push(s.confidence);
        trace.predicted_class.push(s.predicted_class);
        trace.dnn_executed.push(s.dnn_executed);
        trace.alpha.push(s.alpha);
    }
    let elapsed = start.elapsed();
    Ok(ModeRun {
        trace,
        diagnostics: engine.diagnostics().clone(),
        feature_checksum: hex::encode(hasher.finalize()),
        elapsed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
    pub records_per_second: f64,
    pub histogram_seconds: f64,
    pub forward_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub status: String,
    pub error: Option<String>,
    pub records: usize,
    pub accuracy: Option<f64>,
    pub accuracy_at_threshold: Option<f64>,
    pub coverage_at_threshold: Option<f64>,
    pub mean_confidence: Option<f64>,
    pub rmse_vs_truth: Option<f64>,
    /// RMSE between this mode's predictive mean and the oracle's.
    pub rmse_vs_oracle: Option<f64>,
    /// Spearman correlation of per-step mean variance with the oracle's.
    pub variance_rank_correlation_vs_oracle: Option<f64>,
    pub rms_spread: Option<f64>,
    pub forward_pass_count: u64,
    pub forward_passes_per_record: Option<f64>,
    pub cache_hits: u64,
    pub alpha_clamps: u64,
    pub feature_checksum: Option<String>,
    pub timing: Option<Timing>,
}

impl ModeReport {
    fn failed(mode: Mode, error: String) -> Self {
        Self {
            mode,
            status: "failed".into(),
            error: Some(error),
            records: 0,
            accuracy: None,
            accuracy_at_threshold: None,
            coverage_at_threshold: None,
            mean_confidence: None,
            rmse_vs_truth: None,
            rmse_vs_oracle: None,
            variance_rank_correlation_vs_oracle: None,
            rms_spread: None,
            forward_pass_count: 0,
            forward_passes_per_record: None,
            cache_hits: 0,
            alpha_clamps: 0,
            feature_checksum: None,
            timing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub task: String,
    pub records: usize,
    pub confidence_threshold: f64,
    pub oracle: Mode,
    pub config: EngineConfig,
    pub modes: Vec<ModeReport>,
}

impl MetricsReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub modes: Vec<Mode>,
    pub oracle: Mode,
    /// Wall-clock fields make reports differ between runs; off by default.
    pub include_timing: bool,
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { modes: Mode::ALL.to_vec(), oracle: Mode::Mu, include_timing: false, parallel: true }
    }
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub runs: Vec<(Mode, Result<ModeRun, String>)>,
}

fn check_labels(model: &Model, records: &[StreamRecord]) -> Result<(), HarnessError> {
    let out = model.spec.output_dim();
    for (i, r) in records.iter().enumerate() {
        if r.features.len() != model.spec.input_dim() {
            return Err(HarnessError::Data {
                line: None,
                message: format!("record {i} has {} features, model expects {}", r.features.len(), model.spec.input_dim()),
            });
        }
        let ok = match (&r.label, model.spec.task) {
            (None, _) => true,
            (Some(Label::Class(c)), Task::Classification) => *c < out,
            (Some(Label::Target(t)), Task::Regression) => t.len() == out,
            _ => false,
        };
        if !ok {
            return Err(HarnessError::Data {
                line: None,
                message: format!("record {i} has a label incompatible with a {} model with {out} outputs", model.spec.task),
            });
        }
    }
    Ok(())
}

pub fn run_eval(
    model: &Model,
    config: &EngineConfig,
    records: &[StreamRecord],
    options: &EvalOptions,
) -> Result<EvalOutcome, HarnessError> {
    config.validate()?;
    check_labels(model, records)?;
    let mut modes = options.modes.clone();
    if !modes.contains(&options.oracle) {
        modes.push(options.oracle);
    }
    let runs: Vec<(Mode, Result<ModeRun, String>)> = if options.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = modes
                .iter()
                .map(|&mode| (mode, scope.spawn(move || run_mode(model, config, mode, records))))
                .collect();
            handles
                .into_iter()
                .map(|(mode, h)| {
                    let r = match h.join() {
                        Ok(r) => r.map_err(|e| e.to_string()),
                        Err(_) => Err("worker panicked".to_string()),
                    };
                    (mode, r)
                })
                .collect()
        })
    } else {
        modes.iter().map(|&mode| (mode, run_mode(model, config, mode, records).map_err(|e| e.to_string()))).collect()
    };

    let checksums: Vec<&str> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).map(|r| r.feature_checksum.as_str()).collect();
    if checksums.windows(2).any(|w| w[0] != w[1]) {
        return Err(HarnessError::Internal("modes consumed different record sequences".into()));
    }

    let oracle = runs.iter().find(|(m, _)| *m == options.oracle).and_then(|(_, r)| r.as_ref().ok());
    let task = model.spec.task;
    let threshold = config.confidence_threshold;
    let mut reports = Vec::new();
    for (mode, run) in &runs {
        if !options.modes.contains(mode) {
            continue;
        }
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                reports.push(ModeReport::failed(*mode, e.clone()));
                continue;
            }
        };
        reports.push(mode_report(*mode, run, oracle.filter(|_| *mode != options.oracle), records, task, threshold, options.include_timing));
    }

    let report = MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        task: task.to_string(),
        records: records.len(),
        confidence_threshold: threshold,
        oracle: options.oracle,
        config: config.clone(),
        modes: reports,
    };
    Ok(EvalOutcome { report, runs })
}

fn mean_variance(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mode_report(
    mode: Mode,
    run: &ModeRun,
    oracle: Option<&ModeRun>,
    records: &[StreamRecord],
    task: Task,
    threshold: f64,
    include_timing: bool,
) -> ModeReport {
    let t = &run.trace;
    let n = records.len();
    let (mut accuracy, mut accuracy_at, mut coverage) = (None, None, None);
    let mut rmse_vs_truth = None;
    match task {
        Task::Classification => {
            let (conf, correct): (Vec<f64>, Vec<bool>) = records
                .iter()
                .zip(t.predicted_class.iter().zip(&t.confidence))
                .filter_map(|(r, (p, &c))| match &r.label {
                    Some(Label::Class(y)) => Some((c, *p == Some(*y))),
                    _ => None,
                })
                .unzip();
            if !correct.is_empty() {
                let s = metrics::selective(&conf, &correct, threshold);
                accuracy = metrics::accuracy(&correct);
                accuracy_at = s.accuracy;
                coverage = Some(s.coverage);
            }
        }
        Task::Regression => {
            let (pred, truth): (Vec<Vec<f64>>, Vec<Vec<f64>>) = records
                .iter()
                .zip(&t.mean)
                .filter_map(|(r, m)| match &r.label {
                    Some(Label::Target(y)) => Some((m.clone(), y.clone())),
                    _ => None,
                })
                .unzip();
            rmse_vs_truth = metrics::rmse(&pred, &truth);
            if n > 0 {
                coverage = Some(metrics::selective(&t.confidence, &vec![true; n], threshold).coverage);
            }
        }
    }
    let (rmse_vs_oracle, corr) = match oracle {
        Some(o) => {
            let a: Vec<f64> = t.variance.iter().map(|v| mean_variance(v)).collect();
            let b: Vec<f64> = o.trace.variance.iter().map(|v| mean_variance(v)).collect();
            (metrics::rmse(&t.mean, &o.trace.mean), metrics::spearman(&a, &b))
        }
        None => (None, None),
    };
    let d = &run.diagnostics;
    ModeReport {
        mode,
        status: "ok".into(),
        error: None,
        records: n,
        accuracy,
        accuracy_at_threshold: accuracy_at,
        coverage_at_threshold: coverage,
        mean_confidence: (n > 0).then(|| t.confidence.iter().sum::<f64>() / n as f64),
        rmse_vs_truth,
        rmse_vs_oracle,
        variance_rank_correlation_vs_oracle: corr,
        rms_spread: metrics::rms_spread(&t.variance),
        forward_pass_count: d.forward_passes,
        forward_passes_per_record: (n > 0).then(|| d.forward_passes as f64 / n as f64),
        cache_hits: d.cache_hits,
        alpha_clamps: d.alpha_clamps,
        feature_checksum: Some(run.feature_checksum.clone()),
        timing: include_timing.then(|| Timing {
            seconds: run.elapsed.as_secs_f64(),
            records_per_second: n as f64 / run.elapsed.as_secs_f64().max(f64::MIN_POSITIVE),
            histogram_seconds: d.histogram_time.as_secs_f64(),
            forward_seconds: d.forward_time.as_secs_f64(),
        }),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::Data { line: None, message: format!("{}: {e}", path.display()) })
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Data { line: None, message: format!("{}: {e}", path.display()) }
}

pub fn write_report_json(path: &Path, report: &MetricsReport) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    w.write_all(report.to_json().as_bytes()).map_err(io(path))?;
    w.flush().map_err(io(path))
}

/// Mode comparison table, one row per mode.
pub fn write_report_csv(path: &Path, report: &MetricsReport) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    writeln!(
        w,
        "mode,status,accuracy,accuracy_at_threshold,coverage_at_threshold,rmse_vs_truth,rmse_vs_oracle,variance_rank_correlation_vs_oracle,forward_passes_per_record"
    )
    .map_err(io(path))?;
    for m in &report.modes {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            m.mode,
            m.status,
            opt(m.accuracy),
            opt(m.accuracy_at_threshold),
            opt(m.coverage_at_threshold),
            opt(m.rmse_vs_truth),
            opt(m.rmse_vs_oracle),
            opt(m.variance_rank_correlation_vs_oracle),
            opt(m.forward_passes_per_record)
        )
        .map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Per-step outputs of every successful mode, long format.
pub fn write_trace_csv(path: &Path, runs: &[(Mode, Result<ModeRun, String>)]) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    writeln!(w, "mode,step,mean,variance,confidence,dnn_executed,alpha").map_err(io(path))?;
    for (mode, run) in runs {
        let Ok(run) = run else { continue };
        let t = &run.trace;
        for i in 0..t.mean.len() {
            writeln!(
                w,
                "{mode},{i},{:?},{:?},{:?},{},{}",
                t.mean[i].iter().sum::<f64>() / t.mean[i].len() as f64,
                mean_variance(&t.variance[i]),
                t.confidence[i],
                t.dnn_executed[i],
                opt(t.alpha[i])
            )
            .map_err(io(path))?;
        }
    }
    w.flush().map_err(io(path))
}
