//! Compute devices: the host CPU and simulated accelerators.
//!
//! A simulated accelerator runs the same tile routines as the CPU on its own
//! executor thread, on packed copies of its operands. What it simulates is
//! time: each op is charged
//! `flops / (rate_factor · cpu_rate) + transfer_cost · bytes + latency`
//! seconds on a virtual clock owned by the caller, and queue occupancy and
//! resident memory are judged against that clock.

mod ops;
mod sim;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::KernelError;
use crate::kernels::micro::{self, Region};
use crate::matrix::{ComplexMatrix, MatMut, MatRef, C64, ZERO};

pub use ops::{BlockOp, OpKind, Panel};
pub(crate) use ops::{execute, view_for};
pub use sim::{wait_all, Admission, Completed, Enqueue, PackedOp, SimDevice};

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("invalid device spec `{spec}`: {reason}")]
    Parse { spec: String, reason: String },
    #[error("invalid device configuration: {0}")]
    Config(String),
    #[error("device {device}: op needs {bytes} bytes but capacity is {capacity}")]
    Rejected { device: usize, bytes: u64, capacity: u64 },
    #[error("region {rows}x{cols} at ({row0},{col0}) exceeds {src_rows}x{src_cols} matrix")]
    OutOfBounds {
        row0: usize,
        col0: usize,
        rows: usize,
        cols: usize,
        src_rows: usize,
        src_cols: usize,
    },
    #[error("device {device}: {source}")]
    Kernel { device: usize, source: KernelError },
    #[error("device {0} executor stopped unexpectedly")]
    Lost(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Cpu,
    SimulatedAccelerator,
}

/// Allowed block sizes on a device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BlockConstraint {
    #[default]
    None,
    DivisibleBy { d: usize, not: Option<usize> },
}

impl BlockConstraint {
    pub fn allows(&self, b: usize) -> bool {
        match *self {
            BlockConstraint::None => b > 0,
            BlockConstraint::DivisibleBy { d, not } => b > 0 && b.is_multiple_of(d) && not.is_none_or(|e| !b.is_multiple_of(e)),
        }
    }

    /// Largest allowed size `≤ limit`.
    pub fn largest_at_most(&self, limit: usize) -> Option<usize> {
        match *self {
            BlockConstraint::None => (limit > 0).then_some(limit),
            BlockConstraint::DivisibleBy { d, .. } => (1..=limit / d).rev().map(|q| q * d).find(|&b| self.allows(b)),
        }
    }

    /// Smallest allowed size.
    pub fn smallest(&self) -> usize {
        match *self {
            BlockConstraint::None => 1,
            BlockConstraint::DivisibleBy { d, .. } => (1..).map(|q| q * d).find(|&b| self.allows(b)).unwrap(),
        }
    }
}

impl fmt::Display for BlockConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BlockConstraint::None => Ok(()),
            BlockConstraint::DivisibleBy { d, not: None } => write!(f, "block{d}"),
            BlockConstraint::DivisibleBy { d, not: Some(e) } => write!(f, "block{d}not{e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub kind: DeviceKind,
    /// Throughput as a multiple of one reference CPU worker.
    pub rate_factor: f64,
    pub memory_capacity: u64,
    pub queue_depth: usize,
    pub block_constraint: BlockConstraint,
    /// Seconds per transferred byte.
    pub transfer_cost: f64,
    /// Fixed seconds per op.
    pub latency: f64,
    pub threads: usize,
}

pub const DEFAULT_QUEUE_DEPTH: usize = 4;

impl DeviceDescriptor {
    /// Host CPU; its modeled rate defaults to its thread count.
    pub fn cpu(threads: usize) -> Self {
        Self {
            kind: DeviceKind::Cpu,
            rate_factor: threads.max(1) as f64,
            memory_capacity: u64::MAX,
            queue_depth: 1,
            block_constraint: BlockConstraint::None,
            transfer_cost: 0.0,
            latency: 0.0,
            threads: threads.max(1),
        }
    }

    pub fn simulated(rate_factor: f64, memory_capacity: u64) -> Self {
        Self {
            kind: DeviceKind::SimulatedAccelerator,
            rate_factor,
            memory_capacity,
            queue_depth: DEFAULT_QUEUE_DEPTH,
            block_constraint: BlockConstraint::None,
            transfer_cost: 0.0,
            latency: 0.0,
            threads: 1,
        }
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate_factor = rate;
        self
    }

    pub fn with_queue_depth(mut self, depth: usize) -> Self {
        self.queue_depth = depth;
        self
    }

    pub fn with_constraint(mut self, c: BlockConstraint) -> Self {
        self.block_constraint = c;
        self
    }

    pub fn with_transfer(mut self, per_byte: f64, latency: f64) -> Self {
        self.transfer_cost = per_byte;
        self.latency = latency;
        self
    }

    pub fn is_cpu(&self) -> bool {
        self.kind == DeviceKind::Cpu
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.rate_factor > 0.0 && self.rate_factor.is_finite()) {
            return Err(DeviceError::Config(format!("rate must be positive, got {}", self.rate_factor)));
        }
        if self.queue_depth == 0 {
            return Err(DeviceError::Config("queue depth must be at least 1".into()));
        }
        if self.memory_capacity == 0 {
            return Err(DeviceError::Config("memory capacity must be positive".into()));
        }
        if !(self.transfer_cost >= 0.0 && self.latency >= 0.0) {
            return Err(DeviceError::Config("transfer cost and latency must be non-negative".into()));
        }
        Ok(())
    }

    /// Modeled seconds for an op.
    pub fn op_seconds(&self, flops: u64, bytes: u64, cpu_rate: f64) -> f64 {
        flops as f64 / (self.rate_factor * cpu_rate) + self.transfer_cost * bytes as f64 + self.latency
    }
}

/// Parses sizes like `6G`, `512M`, `4096`. Suffixes are powers of 1024.
pub fn parse_bytes(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, mul) = match s.chars().last()? {
        'k' | 'K' => (&s[..s.len() - 1], 1u64 << 10),
        'm' | 'M' => (&s[..s.len() - 1], 1 << 20),
        'g' | 'G' => (&s[..s.len() - 1], 1 << 30),
        't' | 'T' => (&s[..s.len() - 1], 1 << 40),
        _ => (s, 1),
    };
    if let Ok(v) = num.parse::<u64>() {
        return v.checked_mul(mul);
    }
    let v: f64 = num.parse().ok()?;
    let bytes = v * mul as f64;
    (bytes >= 0.0 && bytes < u64::MAX as f64).then_some(bytes as u64)
}

fn parse_constraint(s: &str) -> Option<BlockConstraint> {
    let rest = s.strip_prefix("block")?;
    let (d, not) = match rest.split_once("not") {
        Some((d, e)) => (d, Some(e.parse().ok()?)),
        None => (rest, None),
    };
    let d: usize = d.parse().ok()?;
    (d > 0 && not != Some(0)).then_some(BlockConstraint::DivisibleBy { d, not })
}

impl FromStr for DeviceDescriptor {
    type Err = DeviceError;

    /// `cpu[:threads=N,rate=R]` or
    /// `sim[:rate=R,mem=SIZE,queue=N,blockDnotE,xfer=S,latency=S]`.
    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| DeviceError::Parse { spec: spec.to_string(), reason };
        let (kind, opts) = spec.trim().split_once(':').unwrap_or((spec.trim(), ""));
        let mut d = match kind {
            "cpu" => DeviceDescriptor::cpu(1),
            "sim" => DeviceDescriptor::simulated(1.0, 6 << 30),
            other => return Err(err(format!("unknown device kind `{other}`"))),
        };
        let mut rate_set = false;
        for opt in opts.split(',').map(str::trim).filter(|o| !o.is_empty()) {
            if let Some(c) = parse_constraint(opt) {
                d.block_constraint = c;
                continue;
            }
            let (key, val) = opt.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{opt}`")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad number `{v}` for {key}")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad integer `{v}` for {key}")));
            match key {
                "threads" => {
                    d.threads = int(val)?.max(1);
                    if !rate_set && d.is_cpu() {
                        d.rate_factor = d.threads as f64;
                    }
                }
                "rate" => {
                    d.rate_factor = num(val)?;
                    rate_set = true;
                }
                "mem" => d.memory_capacity = parse_bytes(val).ok_or_else(|| err(format!("bad size `{val}`")))?,
                "queue" => d.queue_depth = int(val)?,
                "xfer" => d.transfer_cost = num(val)?,
                "latency" => d.latency = num(val)?,
                _ => return Err(err(format!("unknown option `{key}`"))),
            }
        }
        d.validate().map_err(|e| err(e.to_string()))?;
        Ok(d)
    }
}

impl fmt::Display for DeviceDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DeviceKind::Cpu => write!(f, "cpu:threads={},rate={}", self.threads, self.rate_factor),
            DeviceKind::SimulatedAccelerator => {
                write!(f, "sim:rate={},mem={},queue={}", self.rate_factor, self.memory_capacity, self.queue_depth)?;
                if self.block_constraint != BlockConstraint::None {
                    write!(f, ",{}", self.block_constraint)?;
                }
                write!(f, ",xfer={},latency={}", self.transfer_cost, self.latency)
            }
        }
    }
}

/// Devices available to a run. At most one entry is the CPU; its presence
/// means the host also computes tiles.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DevicePool {
    pub devices: Vec<DeviceDescriptor>,
}

impl DevicePool {
    pub fn new(devices: Vec<DeviceDescriptor>) -> Result<Self, DeviceError> {
        let pool = Self { devices };
        pool.validate()?;
        Ok(pool)
    }

    pub fn cpu_only(threads: usize) -> Self {
        Self { devices: vec![DeviceDescriptor::cpu(threads)] }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.devices.is_empty() {
            return Err(DeviceError::Config("device pool is empty".into()));
        }
        if self.devices.iter().filter(|d| d.is_cpu()).count() > 1 {
            return Err(DeviceError::Config("at most one cpu device".into()));
        }
        self.devices.iter().try_for_each(DeviceDescriptor::validate)
    }

    pub fn cpu(&self) -> Option<(usize, &DeviceDescriptor)> {
        self.devices.iter().enumerate().find(|(_, d)| d.is_cpu())
    }

    pub fn accelerators(&self) -> impl Iterator<Item = (usize, &DeviceDescriptor)> {
        self.devices.iter().enumerate().filter(|(_, d)| !d.is_cpu())
    }

    pub fn accelerator_rate(&self) -> f64 {
        self.accelerators().map(|(_, d)| d.rate_factor).sum()
    }

    /// The same pool without the CPU entry.
    pub fn without_cpu(&self) -> DevicePool {
        DevicePool { devices: self.devices.iter().filter(|d| !d.is_cpu()).cloned().collect() }
    }

    pub fn describe(&self) -> Vec<String> {
        self.devices.iter().map(|d| d.to_string()).collect()
    }
}

static CPU_RATE: OnceLock<f64> = OnceLock::new();

/// Reference flop rate of one CPU worker, in flops per second. Measured once
/// per process by timing a fixed tile product unless set beforehand.
pub fn calibrated_cpu_rate() -> f64 {
    *CPU_RATE.get_or_init(measure_cpu_rate)
}

/// Fixes the reference rate. Returns false if it was already set or measured.
pub fn set_calibrated_cpu_rate(rate: f64) -> bool {
    assert!(rate > 0.0);
    CPU_RATE.set(rate).is_ok()
}

fn measure_cpu_rate() -> f64 {
    const N: usize = 192;
    let a = ComplexMatrix::from_fn(N, N, |i, j| C64::new((i as f64 * 0.37).sin(), (j as f64 * 0.11).cos()));
    let mut c = ComplexMatrix::zeros(N, N);
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let t = Instant::now();
        micro::tile_gemm(C64::new(1.0, 0.0), a.as_ref(), a.as_ref(), ZERO, &mut c.as_mut());
        best = best.min(t.elapsed().as_secs_f64());
    }
    (8 * N * N * N) as f64 / best.max(1e-9)
}

/// Column-major copy of a region.
pub fn pack_block(m: MatRef<'_>, row0: usize, col0: usize, rows: usize, cols: usize) -> Result<Vec<C64>, DeviceError> {
    if row0.checked_add(rows).is_none_or(|e| e > m.rows()) || col0.checked_add(cols).is_none_or(|e| e > m.cols()) {
        return Err(DeviceError::OutOfBounds {
            row0,
            col0,
            rows,
            cols,
            src_rows: m.rows(),
            src_cols: m.cols(),
        });
    }
    let v = m.submatrix(row0, col0, rows, cols);
    let mut out = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        out.extend_from_slice(v.col(j));
    }
    Ok(out)
}

/// Inverse of [`pack_block`]: writes `buf` (rows×cols) into `dest`, limited
/// to `region`.
pub fn unpack_block(buf: &[C64], dest: &mut MatMut<'_>, region: Region) {
    let (rows, cols) = (dest.rows(), dest.cols());
    assert_eq!(buf.len(), rows * cols, "packed buffer does not match destination");
    for j in 0..cols {
        let src = &buf[j * rows..(j + 1) * rows];
        let start = if region == Region::Lower { j.min(rows) } else { 0 };
        dest.col_mut(j)[start..].copy_from_slice(&src[start..]);
    }
}
