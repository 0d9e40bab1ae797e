use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use hsdla::pipeline::{BuildStats, PhaseTime};
use hsdla::{PipelineConfig, ProblemDims};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub err_h: f64,
    pub err_s: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub devices: Vec<String>,
    pub dims: ProblemDims,
    pub phases: Vec<PhaseTime>,
    pub wall_seconds: f64,
    /// Ledger total over wall time.
    pub gflops: f64,
    /// Modeled seconds, with simulated devices' busy time instead of wall.
    pub model_seconds: f64,
    pub model_gflops: f64,
    pub ledger_total: u64,
    pub ledger: BTreeMap<String, u64>,
    pub flop_model_total: u64,
    pub peak_temp_bytes: u64,
    pub cpu_rate: f64,
    pub dispatched_ops: usize,
    pub warnings: Vec<String>,
    pub verification: Option<Verification>,
}

fn rate(flops: u64, secs: f64) -> f64 {
    if secs > 0.0 {
        flops as f64 / secs / 1e9
    } else {
        0.0
    }
}

impl RunReport {
    pub fn new(cfg: &PipelineConfig, dims: ProblemDims, stats: &BuildStats, model_total: u64) -> Self {
        let total = stats.ledger.total();
        let wall = stats.wall_seconds();
        let model = stats.model_seconds();
        let dispatched_ops = stats
            .kernels
            .iter()
            .map(|k| {
                k.dispatch.as_ref().map_or(0, |d| d.log.len())
                    + k.split.as_ref().and_then(|s| s.accel_dispatch.as_ref()).map_or(0, |d| d.log.len())
            })
            .sum();
        Self {
            config: cfg.clone(),
            devices: cfg.pool.describe(),
            dims,
            phases: stats.phases.clone(),
            wall_seconds: wall,
            gflops: rate(total, wall),
            model_seconds: model,
            model_gflops: rate(total, model),
            ledger_total: total,
            ledger: stats.ledger.counts.clone(),
            flop_model_total: model_total,
            peak_temp_bytes: stats.peak_temp_bytes,
            cpu_rate: stats.cpu_rate,
            dispatched_ops,
            warnings: stats.warnings.clone(),
            verification: None,
        }
    }
}

/// Dispatch-log text for every tile-scheduled kernel of a run, one
/// `# phase/kernel` header per kernel.
pub fn dispatch_log(stats: &BuildStats) -> String {
    let mut out = String::new();
    for k in &stats.kernels {
        let report = k.dispatch.as_ref().or_else(|| k.split.as_ref().and_then(|s| s.accel_dispatch.as_ref()));
        if let Some(r) = report {
            out.push_str(&format!("# {}/{}\n", k.phase, k.kernel));
            for e in &r.log {
                out.push_str(&e.to_line());
                out.push('\n');
            }
        }
    }
    out
}

/// One cell of a benchmark sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub preset: String,
    pub scale: f64,
    pub n_atoms: usize,
    pub n_l: usize,
    pub n_g: usize,
    pub variant: String,
    pub strategy: String,
    pub devices: usize,
    pub status: String,
    pub wall_s: f64,
    pub gflops: f64,
    pub model_s: f64,
    pub model_gflops: f64,
    pub ledger_total: u64,
    /// Original-CPU wall time over this cell's, same dims.
    pub speedup: f64,
}
