//! Presets, device pools and run settings from flags or a key=value file.

use std::path::Path;

use hsdla::device::{DeviceDescriptor, DevicePool};
use hsdla::{PipelineConfig, Strategy, Variant};

use crate::CliError;

/// `(name, N_A, N_L, N_G at K_max = 2.5, 3.0, 3.5, 4.0)`.
const SYSTEMS: [(&str, usize, usize, [usize; 4]); 3] = [
    ("nacl", 512, 49, [2256, 3893, 6217, 9273]),
    ("auag", 108, 121, [3275, 5638, 8970, 13379]),
    ("tio2", 384, 81, [7094, 12293, 19553, 29144]),
];
const KMAX: [&str; 4] = ["2.5", "3.0", "3.5", "4.0"];

pub fn preset_names() -> Vec<String> {
    SYSTEMS.iter().flat_map(|(s, ..)| KMAX.iter().map(move |k| format!("{s}-{k}"))).collect()
}

fn scaled(d: usize, f: f64) -> usize {
    // Guard against products like 100·0.01 landing just above an integer.
    ((d as f64 * f - 1e-9).ceil() as usize).max(1)
}

/// Dimensions `(N_A, N_L, N_G)` of a preset, each multiplied by `scale` and
/// rounded up.
pub fn preset_dims(name: &str, scale: f64) -> Result<(usize, usize, usize), CliError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CliError::Config(format!("scale must be positive, got {scale}")));
    }
    let lower = name.to_ascii_lowercase();
    let (sys, k) = lower
        .split_once('-')
        .ok_or_else(|| CliError::Config(format!("unknown preset `{name}`; expected one of {}", preset_names().join(", "))))?;
    let (_, na, nl, ngs) = SYSTEMS
        .iter()
        .find(|(s, ..)| *s == sys)
        .ok_or_else(|| CliError::Config(format!("unknown system in preset `{name}`")))?;
    let ki = KMAX
        .iter()
        .position(|&x| k.parse::<f64>().ok() == x.parse::<f64>().ok())
        .ok_or_else(|| CliError::Config(format!("unknown K_max in preset `{name}`")))?;
    Ok((scaled(*na, scale), scaled(*nl, scale), scaled(ngs[ki], scale)))
}

pub fn parse_variant(s: &str) -> Result<Variant, CliError> {
    match s {
        "original" => Ok(Variant::Original),
        "refined" => Ok(Variant::Refined),
        _ => Err(CliError::Config(format!("unknown variant `{s}`"))),
    }
}

pub fn parse_ratio(s: &str) -> Result<f64, CliError> {
    let v = s.strip_prefix("m=").unwrap_or(s);
    v.parse::<f64>()
        .ok()
        .filter(|m| *m > 0.0 && m.is_finite())
        .ok_or_else(|| CliError::Config(format!("bad split ratio `{s}`")))
}

fn parse_bool(s: &str) -> Result<bool, CliError> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("expected a boolean, got `{s}`"))),
    }
}

/// Thread count for the CPU pool: `HSDLA_THREADS` capped by the machine.
pub fn cpu_threads() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("HSDLA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => n.min(avail),
        _ => avail,
    }
}

/// Run settings before they are turned into a [`PipelineConfig`].
#[derive(Clone, Debug, Default)]
pub struct RunSettings {
    pub variant: Option<String>,
    pub strategy: Option<String>,
    pub devices: Vec<String>,
    pub no_cpu: bool,
    pub split_ratio: Option<String>,
    pub split_calibrate: bool,
    pub block: Option<usize>,
    pub cpu_rate: Option<f64>,
}

impl RunSettings {
    /// Reads `key = value` lines; `#` starts a comment. `device` may repeat.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut s = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| CliError::Config(format!("{}:{}: {msg}", path.display(), no + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (k, v) = (k.trim(), v.trim().to_string());
            match k {
                "variant" => s.variant = Some(v),
                "strategy" => s.strategy = Some(v),
                "device" => s.devices.push(v),
                "no_cpu" => s.no_cpu = parse_bool(&v)?,
                "split_ratio" => s.split_ratio = Some(v),
                "split_calibrate" => s.split_calibrate = parse_bool(&v)?,
                "block" => s.block = Some(v.parse().map_err(|_| bad("bad block size"))?),
                "cpu_rate" => s.cpu_rate = Some(v.parse().map_err(|_| bad("bad cpu rate"))?),
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        Ok(s)
    }

    /// Flags win over the file; device lists are concatenated.
    pub fn merge(mut self, flags: RunSettings) -> Self {
        self.variant = flags.variant.or(self.variant);
        self.strategy = flags.strategy.or(self.strategy);
        self.devices.extend(flags.devices);
        self.no_cpu |= flags.no_cpu;
        self.split_ratio = flags.split_ratio.or(self.split_ratio);
        self.split_calibrate |= flags.split_calibrate;
        self.block = flags.block.or(self.block);
        self.cpu_rate = flags.cpu_rate.or(self.cpu_rate);
        self
    }

    pub fn pool(&self) -> Result<DevicePool, CliError> {
        let mut devices = Vec::new();
        for spec in &self.devices {
            devices.push(spec.parse::<DeviceDescriptor>().map_err(|e| CliError::Config(e.to_string()))?);
        }
        if self.no_cpu {
            devices.retain(|d| !d.is_cpu());
        } else if !devices.iter().any(|d| d.is_cpu()) {
            devices.insert(0, DeviceDescriptor::cpu(cpu_threads()));
        }
        DevicePool::new(devices).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_config(&self) -> Result<PipelineConfig, CliError> {
        let variant = parse_variant(self.variant.as_deref().unwrap_or("refined"))?;
        let strategy = match self.strategy.as_deref().unwrap_or("cpu") {
            "cpu" => Strategy::Cpu,
            "static" => Strategy::Static {
                ratio: self.split_ratio.as_deref().map(parse_ratio).transpose()?,
                calibrate: self.split_calibrate,
            },
            "dynamic" => Strategy::Dynamic { block: self.block },
            other => return Err(CliError::Config(format!("unknown strategy `{other}`"))),
        };
        let pool = self.pool()?;
        if matches!(strategy, Strategy::Cpu) && pool.cpu().is_none() {
            return Err(CliError::Config("the cpu strategy needs a CPU in the pool".into()));
        }
        let mut cfg = PipelineConfig::new(variant, strategy, pool);
        cfg.cpu_rate = self.cpu_rate;
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}
