mod config;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use hsdla::format;
use hsdla::matrix::C64;
use hsdla::oracle::{self, MAX_ORACLE_NG};
use hsdla::pipeline::flop_model_for;
use hsdla::{build_hs, generate_problem, HSResult, PipelineConfig, PipelineError, ProblemInstance, Variant};

use config::{preset_dims, RunSettings};
use report::{dispatch_log, BenchRow, RunReport, Verification};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Verify(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "hsdla", version, about = "Build FLAPW Hamiltonian and overlap matrices")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem file.
    Gen(GenArgs),
    /// Build H and S and print a JSON report.
    Run(RunArgs),
    /// Build H and S and compare against direct evaluation.
    Verify(VerifyArgs),
    /// Sweep presets, strategies and device counts into CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Table preset such as nacl-2.5, auag-4.0 or tio2-3.0.
    #[arg(long, conflicts_with_all = ["na", "nl", "ng"])]
    preset: Option<String>,
    /// Multiply preset dimensions by this factor, rounding up.
    #[arg(long, default_value_t = 1.0, requires = "preset")]
    scale: f64,
    #[arg(long, requires_all = ["nl", "ng"])]
    na: Option<usize>,
    #[arg(long)]
    nl: Option<usize>,
    #[arg(long)]
    ng: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of atoms whose T^[AA] is not positive definite.
    #[arg(long, default_value_t = 0)]
    n_not_hpd: usize,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct PipelineArgs {
    /// original or refined.
    #[arg(long)]
    variant: Option<String>,
    /// cpu, static or dynamic.
    #[arg(long)]
    strategy: Option<String>,
    /// Device spec, e.g. `cpu:threads=4` or `sim:rate=1.5,mem=6G,queue=4,block64not256`.
    #[arg(long = "device")]
    devices: Vec<String>,
    /// Key=value file with the same settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Leave the host CPU out of the device pool.
    #[arg(long)]
    no_cpu: bool,
    /// Accelerator-to-CPU rate ratio for the static split, `m=<real>`.
    #[arg(long)]
    split_ratio: Option<String>,
    /// Measure the static split ratio with a probe run.
    #[arg(long)]
    split_calibrate: bool,
    /// Tile size for the dynamic scheduler.
    #[arg(long)]
    block: Option<usize>,
    /// Reference CPU rate in flop/s for the time model; measured if absent.
    #[arg(long)]
    cpu_rate: Option<f64>,
}

impl PipelineArgs {
    fn to_config(&self) -> Result<PipelineConfig, CliError> {
        let flags = RunSettings {
            variant: self.variant.clone(),
            strategy: self.strategy.clone(),
            devices: self.devices.clone(),
            no_cpu: self.no_cpu,
            split_ratio: self.split_ratio.clone(),
            split_calibrate: self.split_calibrate,
            block: self.block,
            cpu_rate: self.cpu_rate,
        };
        let base = match &self.config {
            Some(p) => RunSettings::from_file(p)?,
            None => RunSettings::default(),
        };
        base.merge(flags).to_config()
    }
}

#[derive(Args)]
struct RunArgs {
    problem: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Write the tile dispatch log here.
    #[arg(long)]
    dispatch_log: Option<PathBuf>,
    /// Append a one-line CSV summary here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Compare against direct evaluation (N_G up to 512).
    #[arg(long)]
    verify: bool,
    #[arg(long, hide = true)]
    corrupt_h: bool,
}

#[derive(Args)]
struct VerifyArgs {
    problem: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, hide = true)]
    corrupt_h: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long = "preset", default_values_t = ["nacl-2.5".to_string()])]
    presets: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    scale: f64,
    /// Comma-separated `variant-strategy` cells.
    #[arg(long, value_delimiter = ',', default_values_t = ["original-cpu".to_string(), "refined-cpu".to_string(), "refined-static".to_string(), "refined-dynamic".to_string()])]
    cells: Vec<String>,
    /// Accelerator counts for the hybrid cells.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4])]
    devices: Vec<usize>,
    /// Spec of each simulated accelerator.
    #[arg(long, default_value = "sim:rate=1.5")]
    sim_spec: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of atoms with a non-positive-definite T^[AA].
    #[arg(long, default_value_t = 0.5)]
    not_hpd_frac: f64,
    /// Runs per cell; the median wall time is reported.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    cpu_rate: Option<f64>,
    /// CSV output path; stdout if absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let (na, nl, ng) = match (&a.preset, a.na, a.nl, a.ng) {
        (Some(p), ..) => preset_dims(p, a.scale)?,
        (None, Some(na), Some(nl), Some(ng)) => (na, nl, ng),
        _ => return Err(CliError::Config("give --preset or all of --na, --nl, --ng".into())),
    };
    let p = generate_problem(na, nl, ng, a.seed, a.n_not_hpd).map_err(|e| CliError::Config(e.to_string()))?;
    format::save(&a.out, &p).map_err(|e| io_err(&a.out, e))?;
    println!("wrote {} (N_A={na}, N_L={nl}, N_G={ng}, {} bytes)", a.out.display(), format::encoded_len(p.dims));
    Ok(())
}

fn load(path: &Path) -> Result<ProblemInstance, CliError> {
    format::load(path).map_err(|e| io_err(path, e))
}

fn check_oracle_size(p: &ProblemInstance) -> Result<(), CliError> {
    if p.dims.n_g > MAX_ORACLE_NG {
        return Err(CliError::Config(format!(
            "verification refused: N_G = {} exceeds the direct-evaluation limit of {MAX_ORACLE_NG}",
            p.dims.n_g
        )));
    }
    Ok(())
}

fn corrupt(r: &mut HSResult) {
    let n = r.h.order();
    r.h.matrix_mut()[(n - 1, 0)] += C64::new(1.0, 0.5);
}

fn verification(p: &ProblemInstance, r: &HSResult) -> Result<Verification, CliError> {
    let (err_h, err_s) = oracle::compare(p, &r.h, &r.s).map_err(|e| CliError::Config(e.to_string()))?;
    let tolerance = 1e-10 * (p.dims.n_g as f64).sqrt();
    Ok(Verification { err_h, err_s, tolerance, pass: err_h <= tolerance && err_s <= tolerance })
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let cfg = a.pipeline.to_config()?;
    let p = load(&a.problem)?;
    if a.verify {
        check_oracle_size(&p)?;
    }
    let mut r = build_hs(&p, &cfg)?;
    let mut rep = RunReport::new(&cfg, p.dims, &r.stats, flop_model_for(&p, cfg.variant).total());
    if a.corrupt_h {
        corrupt(&mut r);
    }
    if a.verify {
        rep.verification = Some(verification(&p, &r)?);
    }
    if let Some(path) = &a.dispatch_log {
        std::fs::write(path, dispatch_log(&r.stats)).map_err(|e| io_err(path, e))?;
    }
    if let Some(path) = &a.csv {
        append_csv(path, &rep, &a.problem)?;
    }
    let json = serde_json::to_string_pretty(&rep).map_err(|e| CliError::Io(e.to_string()))?;
    // A closed pipe on stdout is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{json}");
    match &rep.verification {
        Some(v) if !v.pass => Err(CliError::Verify(format!(
            "verification failed: err_h={:.3e} err_s={:.3e} tolerance={:.3e}",
            v.err_h, v.err_s, v.tolerance
        ))),
        _ => Ok(()),
    }
}

fn append_csv(path: &Path, rep: &RunReport, problem: &Path) -> Result<(), CliError> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let err = |e: csv::Error| io_err(path, e);
    if fresh {
        w.write_record([
            "problem", "n_atoms", "n_l", "n_g", "variant", "strategy", "devices", "wall_s", "gflops", "model_s", "model_gflops",
            "ledger_total", "peak_temp_bytes",
        ])
        .map_err(err)?;
    }
    let variant = match rep.config.variant {
        Variant::Original => "original",
        Variant::Refined => "refined",
    };
    w.write_record([
        problem.display().to_string(),
        rep.dims.n_atoms.to_string(),
        rep.dims.n_l.to_string(),
        rep.dims.n_g.to_string(),
        variant.to_string(),
        rep.config.strategy.name().to_string(),
        rep.config.pool.accelerators().count().to_string(),
        rep.wall_seconds.to_string(),
        rep.gflops.to_string(),
        rep.model_seconds.to_string(),
        rep.model_gflops.to_string(),
        rep.ledger_total.to_string(),
        rep.peak_temp_bytes.to_string(),
    ])
    .map_err(err)?;
    w.flush().map_err(|e| io_err(path, e))
}

fn cmd_verify(a: VerifyArgs) -> Result<(), CliError> {
    let cfg = a.pipeline.to_config()?;
    let p = load(&a.problem)?;
    check_oracle_size(&p)?;
    let mut r = build_hs(&p, &cfg)?;
    if a.corrupt_h {
        corrupt(&mut r);
    }
    let v = verification(&p, &r)?;
    println!("err_h={:.3e} err_s={:.3e} tolerance={:.3e}", v.err_h, v.err_s, v.tolerance);
    if v.pass {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::Verify("error above tolerance".into()))
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

struct CellResult {
    wall: f64,
    model: f64,
    total: u64,
}

fn run_cell(p: &ProblemInstance, cfg: &PipelineConfig, repeat: usize) -> Result<CellResult, CliError> {
    let mut walls = Vec::with_capacity(repeat);
    let mut last = None;
    for _ in 0..repeat.max(1) {
        let r = build_hs(p, cfg)?;
        walls.push(r.stats.wall_seconds());
        last = Some(r.stats);
    }
    let stats = last.expect("at least one run");
    Ok(CellResult { wall: median(walls), model: stats.model_seconds(), total: stats.ledger.total() })
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.not_hpd_frac) {
        return Err(CliError::Config("--not-hpd-frac must lie in [0, 1]".into()));
    }
    let mut cells = Vec::new();
    for c in &a.cells {
        let (v, s) = c.split_once('-').ok_or_else(|| CliError::Config(format!("bad cell `{c}`")))?;
        let variant = config::parse_variant(v)?;
        let counts: Vec<usize> = if s == "cpu" { vec![0] } else { a.devices.clone() };
        for n in counts {
            cells.push((variant, v.to_string(), s.to_string(), n));
        }
    }
    let mut rows = Vec::new();
    for preset in &a.presets {
        let (na, nl, ng) = preset_dims(preset, a.scale)?;
        let n_not = (a.not_hpd_frac * na as f64).round() as usize;
        let p = generate_problem(na, nl, ng, a.seed, n_not).map_err(|e| CliError::Config(e.to_string()))?;
        let settings = |variant: &str, strategy: &str, n: usize| RunSettings {
            variant: Some(variant.to_string()),
            strategy: Some(strategy.to_string()),
            devices: vec![a.sim_spec.clone(); n],
            block: a.block,
            cpu_rate: a.cpu_rate,
            ..Default::default()
        };
        let baseline = settings("original", "cpu", 0).to_config().and_then(|cfg| run_cell(&p, &cfg, a.repeat));
        let base_wall = baseline.as_ref().map(|b| b.wall).ok();
        for (variant, vname, sname, n) in &cells {
            let result = if *variant == Variant::Original && sname == "cpu" {
                baseline.as_ref().map(|b| CellResult { wall: b.wall, model: b.model, total: b.total }).map_err(|e| CliError::Config(e.to_string()))
            } else {
                settings(vname, sname, *n).to_config().and_then(|cfg| run_cell(&p, &cfg, a.repeat))
            };
            let mut row = BenchRow {
                preset: preset.clone(),
                scale: a.scale,
                n_atoms: na,
                n_l: nl,
                n_g: ng,
                variant: vname.clone(),
                strategy: sname.clone(),
                devices: *n,
                status: "ok".into(),
                wall_s: f64::NAN,
                gflops: f64::NAN,
                model_s: f64::NAN,
                model_gflops: f64::NAN,
                ledger_total: 0,
                speedup: f64::NAN,
            };
            match result {
                Ok(c) => {
                    row.wall_s = c.wall;
                    row.gflops = c.total as f64 / c.wall / 1e9;
                    row.model_s = c.model;
                    row.model_gflops = c.total as f64 / c.model / 1e9;
                    row.ledger_total = c.total;
                    row.speedup = base_wall.map_or(f64::NAN, |b| b / c.wall);
                }
                Err(e) => row.status = format!("failed: {e}"),
            }
            rows.push(row);
        }
    }
    let sink: Box<dyn Write> = match &a.out {
        Some(path) => Box::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Capping the global pool bounds the kernels' parallelism too.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(config::cpu_threads()).build_global();
    let result = match cli.cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hsdla::Strategy;

    #[test]
    fn strategy_names_are_cli_words() {
        assert_eq!(Strategy::Cpu.name(), "cpu");
        assert_eq!(Strategy::Dynamic { block: None }.name(), "dynamic");
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 3.0);
    }
}
