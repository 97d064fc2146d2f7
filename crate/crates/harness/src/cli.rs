//! Command-line front end. Engine flags are named after the `EngineConfig`
//! and `OchParams` fields (`--mu-samples`, `--och-y-k-target`, ...). A
//! `--config` JSON file is applied on top of the flags.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dbnn_core::{EngineConfig, Mode, Model};
use serde_json::{Map, Value};

use crate::bench::{self, BenchOptions};
use crate::eval::{self, EvalOptions};
use crate::fixtures::{self, Fixture};
use crate::gen::{gen_stream, GenParams, Labeler, StreamKind};
use crate::records::{self, Format, StreamRecord};
use crate::sweep::{self, SweepGrid, SweepMetric};
use crate::{merge_json, HarnessError};

#[derive(Debug, Parser)]
#[command(name = "dbnn", version, about = "Streaming Bayesian inference with online codevector histograms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run inference modes over a stream and write a metrics report.
    Eval(EvalArgs),
    /// Measure throughput per mode.
    Bench(BenchArgs),
    /// Run DBNN over a grid of output-histogram parameters.
    Sweep(SweepArgs),
    /// Write a synthetic stream.
    Gen(GenArgs),
    /// Write a built-in fixture (model, stream, config) to a directory.
    Fixture(FixtureArgs),
}

/// Where the model, records and base config come from.
#[derive(Debug, Args)]
pub struct Source {
    /// Built-in fixture; supplies model, stream and base config.
    #[arg(long, conflicts_with_all = ["model", "data"])]
    pub fixture: Option<String>,
    /// Weight file.
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    /// Record stream (.csv or .jsonl).
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
    /// Input format; inferred from the extension when absent.
    #[arg(long)]
    pub format: Option<Format>,
    /// Z-score features with statistics of the first N records.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Use only the first N records.
    #[arg(long)]
    pub limit: Option<usize>,
}

macro_rules! och_flags {
    ($name:ident, $p:literal) => {
        #[derive(Debug, Default, Args)]
        pub struct $name {
            #[arg(id = concat!($p, "-k-target"), long = concat!($p, "-k-target"))]
            pub k_target: Option<usize>,
            #[arg(id = concat!($p, "-lambda"), long = concat!($p, "-lambda"))]
            pub lambda: Option<f64>,
            #[arg(id = concat!($p, "-phi-logit"), long = concat!($p, "-phi-logit"), allow_hyphen_values = true)]
            pub phi_logit: Option<f64>,
            #[arg(id = concat!($p, "-count-floor"), long = concat!($p, "-count-floor"))]
            pub count_floor: Option<f64>,
            #[arg(id = concat!($p, "-rng-seed"), long = concat!($p, "-rng-seed"))]
            pub rng_seed: Option<u64>,
            /// stochastic | always | never
            #[arg(id = concat!($p, "-insert-gate"), long = concat!($p, "-insert-gate"))]
            pub insert_gate: Option<String>,
            /// stochastic | always | never
            #[arg(id = concat!($p, "-delete-gate"), long = concat!($p, "-delete-gate"))]
            pub delete_gate: Option<String>,
        }

        impl $name {
            fn patch(&self) -> Value {
                let mut m = Map::new();
                put(&mut m, "k_target", self.k_target.map(Value::from));
                put(&mut m, "lambda", self.lambda.map(Value::from));
                put(&mut m, "phi_logit", self.phi_logit.map(Value::from));
                put(&mut m, "count_floor", self.count_floor.map(Value::from));
                put(&mut m, "rng_seed", self.rng_seed.map(Value::from));
                put(&mut m, "insert_gate", self.insert_gate.clone().map(Value::from));
                put(&mut m, "delete_gate", self.delete_gate.clone().map(Value::from));
                Value::Object(m)
            }
        }
    };
}

och_flags!(OchXFlags, "och-x");
och_flags!(OchYFlags, "och-y");
och_flags!(OchX1Flags, "och-x1");

fn put(m: &mut Map<String, Value>, key: &str, v: Option<Value>) {
    if let Some(v) = v {
        m.insert(key.to_string(), v);
    }
}

#[derive(Debug, Default, Args)]
pub struct EngineFlags {
    #[arg(long)]
    pub mu_samples: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub m_samples: Option<usize>,
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    #[arg(long)]
    pub alpha_floor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub forward_floor_us: Option<u64>,
    #[command(flatten)]
    pub och_x: OchXFlags,
    #[command(flatten)]
    pub och_y: OchYFlags,
    #[command(flatten)]
    pub och_x1: OchX1Flags,
    /// JSON file with `EngineConfig` fields; overrides flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl EngineFlags {
    fn patch(&self) -> Value {
        let mut m = Map::new();
        put(&mut m, "mu_samples", self.mu_samples.map(Value::from));
        put(&mut m, "tau", self.tau.map(Value::from));
        put(&mut m, "m_samples", self.m_samples.map(Value::from));
        put(&mut m, "confidence_threshold", self.confidence_threshold.map(Value::from));
        put(&mut m, "alpha_floor", self.alpha_floor.map(Value::from));
        put(&mut m, "seed", self.seed.map(Value::from));
        put(&mut m, "forward_floor_us", self.forward_floor_us.map(Value::from));
        m.insert("och_x_params".into(), self.och_x.patch());
        m.insert("och_y_params".into(), self.och_y.patch());
        m.insert("och_x1_params".into(), self.och_x1.patch());
        Value::Object(m)
    }

    /// `base`, then flags, then the config file.
    pub fn resolve(&self, base: &EngineConfig) -> Result<EngineConfig, HarnessError> {
        let mut v = serde_json::to_value(base).expect("config serializes");
        merge_json(&mut v, &self.patch());
        if let Some(path) = &self.config {
            let file = read_json(path)?;
            // a fixture manifest carries its engine config under "config"
            let file = match file.get("config") {
                Some(c) if file.get("stream").is_some() => c.clone(),
                _ => file,
            };
            check_known_keys(&v, &file, "")?;
            merge_json(&mut v, &file);
        }
        let cfg: EngineConfig = serde_json::from_value(v).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_json(path: &Path) -> Result<Value, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Rejects keys in `patch` that `reference` does not have, so typos in a
/// config file are not silently ignored.
fn check_known_keys(reference: &Value, patch: &Value, at: &str) -> Result<(), HarnessError> {
    let (Value::Object(r), Value::Object(p)) = (reference, patch) else {
        return Ok(());
    };
    for (k, v) in p {
        let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
        match r.get(k) {
            Some(rv) => check_known_keys(rv, v, &path)?,
            None => return Err(HarnessError::Config(format!("unknown config key {path:?}"))),
        }
    }
    Ok(())
}

fn parse_modes(s: &str) -> Result<Vec<Mode>, String> {
    s.split(',').map(|m| m.trim().parse::<Mode>()).collect()
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',').map(|x| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}"))).collect()
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub engine: EngineFlags,
    /// Comma-separated modes.
    #[arg(long, default_value = "SP,MU,DU,DBNN", value_parser = parse_modes)]
    pub modes: Vec<Vec<Mode>>,
    /// Reference mode for rmse_vs_oracle.
    #[arg(long, default_value = "MU")]
    pub oracle: Mode,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-mode summary table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-step predictions of every mode.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Add wall-clock timings (makes the report run-dependent).
    #[arg(long)]
    pub include_timing: bool,
    /// Run modes one after another instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub engine: EngineFlags,
    #[arg(long, default_value = "SP,MU,DU,DBNN", value_parser = parse_modes)]
    pub modes: Vec<Vec<Mode>>,
    /// Records stepped per mode.
    #[arg(long, default_value_t = 200)]
    pub records: usize,
    /// Records stepped for MU.
    #[arg(long)]
    pub mu_records: Option<usize>,
    /// Throughput table CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub engine: EngineFlags,
    /// accuracy | accuracy-at-threshold | neg-rmse-vs-truth | neg-rmse-vs-oracle
    #[arg(long, default_value = "accuracy")]
    pub metric: SweepMetric,
    #[arg(long, default_value = "1,5,25", value_parser = parse_list::<usize>)]
    pub grid_k_target: Vec<Vec<usize>>,
    #[arg(long, default_value = "0.5,5,50", value_parser = parse_list::<f64>)]
    pub grid_lambda: Vec<Vec<f64>>,
    #[arg(long, default_value = "1", value_parser = parse_list::<f64>, allow_hyphen_values = true)]
    pub grid_phi_logit: Vec<Vec<f64>>,
    #[arg(long, default_value = "0", value_parser = parse_list::<u64>)]
    pub seeds: Vec<Vec<u64>>,
    /// Sweep table CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "drifting-gaussian")]
    pub kind: StreamKind,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub gap: Option<f64>,
    #[arg(long)]
    pub segment_len: Option<usize>,
    #[arg(long)]
    pub level_sd: Option<f64>,
    /// none | threshold | regression
    #[arg(long, default_value = "none")]
    pub labeler: String,
    #[arg(long, default_value_t = 0.0)]
    pub flip_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub band: f64,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub slope: f64,
    #[arg(long, default_value_t = 0.0)]
    pub label_noise_sd: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with `GenParams` fields; overrides flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Fixture name, or `all`.
    pub name: String,
    /// Output directory; `all` writes one subdirectory per fixture.
    #[arg(long)]
    pub out: PathBuf,
}

struct Loaded {
    model: Model,
    records: Vec<StreamRecord>,
    base: EngineConfig,
}

fn load_source(s: &Source) -> Result<Loaded, HarnessError> {
    let mut loaded = match (&s.fixture, &s.model, &s.data) {
        (Some(name), _, _) => {
            let f: Fixture = fixtures::by_name(name)?;
            let mut records = f.records();
            if let Some(w) = s.warmup {
                records = records::ZScored::new(records.into_iter().map(Ok), w)?.collect::<Result<_, _>>()?;
            }
            Loaded { records, model: f.model, base: f.config }
        }
        (None, Some(model), Some(data)) => {
            let model = Model::load(model)?;
            let format = s.format.unwrap_or_else(|| Format::from_path(data));
            let records = records::load(data, format, s.warmup)?;
            Loaded { model, records, base: EngineConfig::default() }
        }
        _ => return Err(HarnessError::Config("either --fixture or both --model and --data are required".into())),
    };
    if let Some(n) = s.limit {
        loaded.records.truncate(n);
    }
    Ok(loaded)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| HarnessError::Data { line: None, message: format!("{}: {e}", p.display()) }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| HarnessError::Internal(format!("stdout: {e}"))),
    }
}

pub fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Eval(a) => {
            let src = load_source(&a.source)?;
            let cfg = a.engine.resolve(&src.base)?;
            let opts = EvalOptions { modes: a.modes.concat(), oracle: a.oracle, include_timing: a.include_timing, parallel: !a.sequential };
            let outcome = eval::run_eval(&src.model, &cfg, &src.records, &opts)?;
            emit(a.out.as_deref(), &outcome.report.to_json())?;
            if let Some(p) = &a.csv {
                eval::write_report_csv(p, &outcome.report)?;
            }
            if let Some(p) = &a.trace {
                eval::write_trace_csv(p, &outcome.runs)?;
            }
            Ok(())
        }
        Command::Bench(a) => {
            let src = load_source(&a.source)?;
            let cfg = a.engine.resolve(&src.base)?;
            let opts = BenchOptions {
                modes: a.modes.concat(),
                forward_floor_us: cfg.forward_floor_us,
                records: a.records,
                mu_records: a.mu_records,
            };
            let rows = bench::run_bench(&src.model, &cfg, &src.records, &opts)?;
            emit(a.out.as_deref(), &bench::rows_to_csv(&rows))
        }
        Command::Sweep(a) => {
            let src = load_source(&a.source)?;
            let cfg = a.engine.resolve(&src.base)?;
            let grid = SweepGrid {
                k_target: a.grid_k_target.concat(),
                lambda: a.grid_lambda.concat(),
                phi_logit: a.grid_phi_logit.concat(),
                seeds: a.seeds.concat(),
            };
            let rows = sweep::run_sweep(&src.model, &cfg, &src.records, &grid, a.metric)?;
            emit(a.out.as_deref(), &sweep::rows_to_csv(&rows, a.metric))
        }
        Command::Gen(a) => {
            let params = gen_params(&a)?;
            let records: Vec<StreamRecord> = gen_stream(params)?.collect();
            let format = a.format.unwrap_or_else(|| Format::from_path(&a.out));
            records::write(&a.out, format, &records)
        }
        Command::Fixture(a) => {
            if a.name == "all" {
                for name in fixtures::NAMES {
                    fixtures::by_name(name)?.write_to(&a.out.join(name))?;
                }
                Ok(())
            } else {
                fixtures::by_name(&a.name)?.write_to(&a.out)
            }
        }
    }
}

fn gen_params(a: &GenArgs) -> Result<GenParams, HarnessError> {
    let labeler = match a.labeler.as_str() {
        "none" => Labeler::None,
        "threshold" => Labeler::Threshold { flip_max: a.flip_max, band: a.band },
        "regression" => Labeler::Regression { scale: a.scale, slope: a.slope, noise_sd: a.label_noise_sd },
        other => return Err(HarnessError::Config(format!("unknown labeler {other:?} (expected none, threshold or regression)"))),
    };
    let mut v = serde_json::to_value(GenParams { kind: a.kind, labeler, ..GenParams::default() }).expect("params serialize");
    let mut m = Map::new();
    put(&mut m, "dim", a.dim.map(Value::from));
    put(&mut m, "steps", a.steps.map(Value::from));
    put(&mut m, "start", a.start.map(Value::from));
    put(&mut m, "delta", a.delta.map(Value::from));
    put(&mut m, "noise_sd", a.noise_sd.map(Value::from));
    put(&mut m, "gap", a.gap.map(Value::from));
    put(&mut m, "segment_len", a.segment_len.map(Value::from));
    put(&mut m, "level_sd", a.level_sd.map(Value::from));
    put(&mut m, "seed", a.seed.map(Value::from));
    merge_json(&mut v, &Value::Object(m));
    if let Some(path) = &a.config {
        let file = read_json(path)?;
        // a fixture manifest carries its stream under "stream"
        let file = match file.get("stream") {
            Some(s) if file.get("config").is_some() => s.clone(),
            _ => file,
        };
        // labeler variants are checked by deserialization; only top-level keys here
        let mut top = file.clone();
        if let Some(o) = top.as_object_mut() {
            if let Some(l) = o.remove("labeler") {
                v["labeler"] = l;
            }
        }
        check_known_keys(&v, &top, "")?;
        merge_json(&mut v, &top);
    }
    let params: GenParams = serde_json::from_value(v).map_err(|e| HarnessError::Config(e.to_string()))?;
    params.validate()?;
    Ok(params)
}
