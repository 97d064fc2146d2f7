//! Single-worker throughput measurement.

use std::time::Instant;

use dbnn_core::{Engine, EngineConfig, Mode, Model};
use serde::{Deserialize, Serialize};

use crate::records::StreamRecord;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: Mode,
    pub records: usize,
    pub seconds: f64,
    pub records_per_second: f64,
    pub forward_passes: u64,
    pub forward_passes_per_record: f64,
    pub forward_seconds: f64,
    pub histogram_seconds: f64,
    /// Histogram time over total step time.
    pub och_overhead_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub modes: Vec<Mode>,
    pub forward_floor_us: u64,
    /// Records stepped per mode.
    pub records: usize,
    /// Override for MU, whose steps cost `mu_samples` forwards each.
    pub mu_records: Option<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { modes: Mode::ALL.to_vec(), forward_floor_us: 0, records: 200, mu_records: None }
    }
}

pub fn run_bench(
    model: &Model,
    config: &EngineConfig,
    records: &[StreamRecord],
    options: &BenchOptions,
) -> Result<Vec<BenchRow>, HarnessError> {
    let mut rows = Vec::new();
    for &mode in &options.modes {
        let n = match mode {
            Mode::Mu => options.mu_records.unwrap_or(options.records),
            _ => options.records,
        }
        .min(records.len());
        let cfg = EngineConfig { mode, forward_floor_us: options.forward_floor_us, ..config.clone() };
        let mut engine = Engine::new(model.clone(), cfg)?;
        let start = Instant::now();
        for r in &records[..n] {
            engine.step(&r.features)?;
        }
        let seconds = start.elapsed().as_secs_f64();
        let d = engine.diagnostics();
        rows.push(BenchRow {
            mode,
            records: n,
            seconds,
            records_per_second: n as f64 / seconds.max(f64::MIN_POSITIVE),
            forward_passes: d.forward_passes,
            forward_passes_per_record: d.forward_passes as f64 / n.max(1) as f64,
            forward_seconds: d.forward_time.as_secs_f64(),
            histogram_seconds: d.histogram_time.as_secs_f64(),
            och_overhead_fraction: d.histogram_time.as_secs_f64() / seconds.max(f64::MIN_POSITIVE),
        });
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(
        "mode,records,seconds,records_per_second,forward_passes,forward_passes_per_record,forward_seconds,histogram_seconds,och_overhead_fraction\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{:?},{:?},{},{:?},{:?},{:?},{:?}\n",
            r.mode,
            r.records,
            r.seconds,
            r.records_per_second,
            r.forward_passes,
            r.forward_passes_per_record,
            r.forward_seconds,
            r.histogram_seconds,
            r.och_overhead_fraction
        ));
    }
    s
}
