//! Construction of H and S.
//!
//! Two variants:
//!
//! * `Original`: back up A and B, build `H_AB+BA+BB` by stacking
//!   `Z_a = T^[BA]·A_a + ½·T^[BB]·B_a` into A, restore, build S, then split
//!   `H_AA` between a Cholesky path (`herk`) and a fallback path (`gemm`).
//! * `Refined`: S first, one temporary buffer X reused for every stacked
//!   operand, and `H_AA` through `herkx` with no factorization.
//!
//! The large rank updates go through the configured [`Strategy`]; the
//! per-atom products always run on the CPU.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{self, DeviceError, DevicePool};
use crate::dynamic::{DispatchReport, DynamicScheduler};
use crate::error::{KernelError, ProblemError};
use crate::kernels::{KernelVariant, Kernels, Side, Trans, Uplo, DEFAULT_BLOCK};
use crate::ledger::{
    gemm_flops, hemm_flops, her2k_flops, herk_flops, potrf_flops, scaling_flops, trmm_flops, FlopLedger, LedgerSnapshot,
};
use crate::matrix::{ComplexMatrix, HermitianView, MatMut, MatRef, C64, ONE, ZERO};
use crate::problem::{ProblemDims, ProblemInstance};
use crate::static_split::{HybridStats, StaticSplitter};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Original,
    Refined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Cpu,
    Static { ratio: Option<f64>, calibrate: bool },
    Dynamic { block: Option<usize> },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Cpu => "cpu",
            Strategy::Static { .. } => "static",
            Strategy::Dynamic { .. } => "dynamic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub strategy: Strategy,
    pub pool: DevicePool,
    pub kernel: KernelVariant,
    /// Largest block the dynamic scheduler picks on its own.
    pub block_cap: usize,
    /// Reference CPU rate for the time model; measured when `None`.
    pub cpu_rate: Option<f64>,
}

impl PipelineConfig {
    pub fn new(variant: Variant, strategy: Strategy, pool: DevicePool) -> Self {
        Self { variant, strategy, pool, kernel: KernelVariant::default(), block_cap: DEFAULT_BLOCK, cpu_rate: None }
    }

    pub fn cpu(variant: Variant) -> Self {
        Self::new(variant, Strategy::Cpu, DevicePool::cpu_only(1))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.pool.validate()?;
        match &self.strategy {
            Strategy::Cpu => {}
            Strategy::Static { ratio, .. } => {
                if let Some(m) = ratio {
                    if !(*m > 0.0 && m.is_finite()) {
                        return Err(PipelineError::Config(format!("split ratio must be positive, got {m}")));
                    }
                }
            }
            Strategy::Dynamic { block } => {
                if *block == Some(0) {
                    return Err(PipelineError::Config("block size must be positive".into()));
                }
            }
        }
        if self.block_cap == 0 {
            return Err(PipelineError::Config("block cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub phase: String,
    pub wall_seconds: f64,
    /// Modeled seconds of the phase's kernels.
    pub model_seconds: f64,
}

/// One large kernel call made through the strategy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub phase: String,
    pub kernel: String,
    pub flops: u64,
    pub model_seconds: f64,
    pub split: Option<HybridStats>,
    pub dispatch: Option<DispatchReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub ledger: LedgerSnapshot,
    pub peak_temp_bytes: u64,
    pub phases: Vec<PhaseTime>,
    pub kernels: Vec<KernelRecord>,
    pub warnings: Vec<String>,
    pub cpu_rate: f64,
}

impl BuildStats {
    pub fn wall_seconds(&self) -> f64 {
        self.phases.iter().map(|p| p.wall_seconds).sum()
    }

    pub fn model_seconds(&self) -> f64 {
        self.phases.iter().map(|p| p.model_seconds).sum()
    }
}

#[derive(Clone, Debug)]
pub struct HSResult {
    pub h: HermitianView,
    pub s: HermitianView,
    pub stats: BuildStats,
}

/// Current and peak bytes of pipeline temporaries.
#[derive(Debug, Default)]
pub struct TempTracker {
    current: Cell<u64>,
    peak: Cell<u64>,
}

impl TempTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Tracked<'_> {
        self.track(ComplexMatrix::zeros(rows, cols))
    }

    pub fn track(&self, m: ComplexMatrix) -> Tracked<'_> {
        let bytes = m.byte_len() as u64;
        self.current.set(self.current.get() + bytes);
        self.peak.set(self.peak.get().max(self.current.get()));
        Tracked { m, bytes, tracker: self }
    }

    pub fn current(&self) -> u64 {
        self.current.get()
    }

    pub fn peak(&self) -> u64 {
        self.peak.get()
    }
}

/// A matrix counted by a [`TempTracker`] until dropped.
pub struct Tracked<'t> {
    m: ComplexMatrix,
    bytes: u64,
    tracker: &'t TempTracker,
}

impl Deref for Tracked<'_> {
    type Target = ComplexMatrix;
    fn deref(&self) -> &ComplexMatrix {
        &self.m
    }
}

impl DerefMut for Tracked<'_> {
    fn deref_mut(&mut self) -> &mut ComplexMatrix {
        &mut self.m
    }
}

impl Drop for Tracked<'_> {
    fn drop(&mut self) {
        self.tracker.current.set(self.tracker.current.get() - self.bytes);
    }
}

fn rows_mut(m: &mut ComplexMatrix, row0: usize, rows: usize) -> MatMut<'_> {
    let cols = m.cols();
    m.as_mut().submatrix_mut(row0, 0, rows, cols)
}

fn rows_ref(m: &ComplexMatrix, row0: usize, rows: usize) -> MatRef<'_> {
    m.as_ref().submatrix(row0, 0, rows, m.cols())
}

/// Routes the large rank updates through the configured strategy and keeps
/// the time model.
struct Engine<'c> {
    cfg: &'c PipelineConfig,
    cpu_rate: f64,
    records: Vec<KernelRecord>,
    warnings: Vec<String>,
    phase: &'static str,
    phase_model: f64,
}

impl<'c> Engine<'c> {
    fn new(cfg: &'c PipelineConfig) -> Self {
        let cpu_rate = cfg.cpu_rate.unwrap_or_else(device::calibrated_cpu_rate);
        Self { cfg, cpu_rate, records: Vec::new(), warnings: Vec::new(), phase: "", phase_model: 0.0 }
    }

    fn cpu_seconds(&self, flops: u64) -> f64 {
        let rate = self.cfg.pool.cpu().map_or(1.0, |(_, d)| d.rate_factor);
        flops as f64 / (rate * self.cpu_rate)
    }

    fn kernels<'l>(&self, ledger: &'l FlopLedger) -> Kernels<'l> {
        Kernels::new(self.cfg.kernel, ledger)
    }

    /// Charges the model for CPU-side work done outside the strategy.
    fn cpu_work(&mut self, flops: u64) {
        self.phase_model += self.cpu_seconds(flops);
    }

    fn record(&mut self, kernel: &str, flops: u64, model: f64, split: Option<HybridStats>, dispatch: Option<DispatchReport>) {
        if let Some(s) = &split {
            self.warnings.extend(s.warnings.iter().cloned());
        }
        self.phase_model += model;
        self.records.push(KernelRecord {
            phase: self.phase.to_string(),
            kernel: kernel.to_string(),
            flops,
            model_seconds: model,
            split,
            dispatch,
        });
    }

    fn splitter(&self, ratio: Option<f64>, calibrate: bool) -> StaticSplitter<'c> {
        StaticSplitter {
            pool: &self.cfg.pool,
            ratio,
            calibrate,
            variant: self.cfg.kernel,
            cpu_rate: self.cpu_rate,
            cap: self.cfg.block_cap,
        }
    }

    fn scheduler(&self, block: Option<usize>) -> DynamicScheduler<'c> {
        DynamicScheduler { pool: &self.cfg.pool, block, cap: self.cfg.block_cap, cpu_rate: self.cpu_rate }
    }

    fn herk(&mut self, ledger: &FlopLedger, alpha: f64, a: MatRef<'_>, beta: f64, c: MatMut<'_>) -> Result<(), PipelineError> {
        let flops = herk_flops(a.cols(), a.rows());
        match self.cfg.strategy.clone() {
            Strategy::Cpu => {
                self.kernels(ledger).herk(alpha, a, Trans::ConjTrans, beta, c)?;
                let t = self.cpu_seconds(flops);
                self.record("zherk", flops, t, None, None);
            }
            Strategy::Static { ratio, calibrate } => {
                let s = self.splitter(ratio, calibrate).herk(ledger, alpha, a, beta, c)?;
                self.record("zherk", flops, s.span(), Some(s), None);
            }
            Strategy::Dynamic { block } => {
                let r = self.scheduler(block).herk(ledger, alpha, a, beta, c)?;
                self.record("zherk", flops, r.span, None, Some(r));
            }
        }
        Ok(())
    }

    fn her2k(&mut self, ledger: &FlopLedger, alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) -> Result<(), PipelineError> {
        let flops = her2k_flops(a.cols(), a.rows());
        match self.cfg.strategy.clone() {
            Strategy::Cpu => {
                self.kernels(ledger).her2k(alpha, a, b, Trans::ConjTrans, beta, c)?;
                let t = self.cpu_seconds(flops);
                self.record("zher2k", flops, t, None, None);
            }
            Strategy::Static { ratio, calibrate } => {
                let s = self.splitter(ratio, calibrate).her2k(ledger, alpha, a, b, beta, c)?;
                self.record("zher2k", flops, s.span(), Some(s), None);
            }
            Strategy::Dynamic { block } => {
                let r = self.scheduler(block).her2k(ledger, alpha, a, b, beta, c)?;
                self.record("zher2k", flops, r.span, None, Some(r));
            }
        }
        Ok(())
    }

    fn herkx(&mut self, ledger: &FlopLedger, alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) -> Result<(), PipelineError> {
        let flops = herk_flops(a.cols(), a.rows());
        match self.cfg.strategy.clone() {
            Strategy::Cpu => {
                self.kernels(ledger).herkx(alpha, a, b, Trans::ConjTrans, beta, c)?;
                let t = self.cpu_seconds(flops);
                self.record("zherkx", flops, t, None, None);
            }
            Strategy::Static { ratio, calibrate } => {
                let s = self.splitter(ratio, calibrate).herkx(ledger, alpha, a, b, beta, c)?;
                self.record("zherkx", flops, s.span(), Some(s), None);
            }
            Strategy::Dynamic { block } => {
                let r = self.scheduler(block).herkx(ledger, alpha, a, b, beta, c)?;
                self.record("zherkx", flops, r.span, None, Some(r));
            }
        }
        Ok(())
    }

    /// `C := Aᴴ·B`, full output. The static strategy has no general-matrix
    /// split, so it runs this on the CPU like the paper's CPU `zgemm`.
    fn gemm_full(&mut self, ledger: &FlopLedger, a: MatRef<'_>, b: MatRef<'_>, c: MatMut<'_>) -> Result<(), PipelineError> {
        let flops = gemm_flops(a.cols(), b.cols(), a.rows());
        match self.cfg.strategy.clone() {
            Strategy::Cpu | Strategy::Static { .. } => {
                self.kernels(ledger).gemm(ONE, a, Trans::ConjTrans, b, Trans::No, ZERO, c)?;
                let t = self.cpu_seconds(flops);
                self.record("zgemm", flops, t, None, None);
            }
            Strategy::Dynamic { block } => {
                let r = self.scheduler(block).gemm(ledger, ONE, a, b, ZERO, c)?;
                self.record("zgemm", flops, r.span, None, Some(r));
            }
        }
        Ok(())
    }
}

struct Phases {
    ledger: FlopLedger,
    times: Vec<PhaseTime>,
}

impl Phases {
    fn run<T>(
        &mut self,
        eng: &mut Engine<'_>,
        name: &'static str,
        f: impl FnOnce(&mut Engine<'_>, &FlopLedger) -> Result<T, PipelineError>,
    ) -> Result<T, PipelineError> {
        eng.phase = name;
        eng.phase_model = 0.0;
        let local = FlopLedger::new();
        let t = Instant::now();
        let out = f(eng, &local)?;
        let wall = t.elapsed().as_secs_f64();
        self.ledger.absorb(name, &local);
        self.times.push(PhaseTime { phase: name.to_string(), wall_seconds: wall, model_seconds: eng.phase_model });
        Ok(out)
    }
}

fn check_outputs(p: &ProblemInstance, h: &HermitianView, s: &HermitianView) -> Result<(), PipelineError> {
    p.validate()?;
    let ng = p.dims.n_g;
    if h.order() != ng || s.order() != ng {
        return Err(PipelineError::Config(format!("H and S must be {ng}x{ng}, got {} and {}", h.order(), s.order())));
    }
    Ok(())
}

/// `H_AB+BA+BB`: per atom, `Z_a = T^[BA]·A_a + ½·T^[BB]·B_a` written into
/// the rows of `z` that belong to atom `a`.
fn stack_z(p: &ProblemInstance, kern: Kernels<'_>, z: &mut ComplexMatrix) -> Result<(), PipelineError> {
    let nl = p.dims.n_l;
    for atom in 0..p.dims.n_atoms {
        let mut za = rows_mut(z, atom * nl, nl);
        kern.gemm(ONE, p.t_ab[atom].as_ref(), Trans::ConjTrans, p.a_block(atom), Trans::No, ZERO, za.rb_mut())?;
        kern.hemm(Side::Left, C64::new(0.5, 0.0), p.t_bb[atom].as_ref(), p.b_block(atom), ONE, za)?;
    }
    Ok(())
}

/// Refined construction into caller-provided outputs; only the lower
/// triangles of `h` and `s` are written.
pub fn build_hs_refined_into(
    p: &ProblemInstance,
    cfg: &PipelineConfig,
    h: &mut HermitianView,
    s: &mut HermitianView,
) -> Result<BuildStats, PipelineError> {
    cfg.validate()?;
    check_outputs(p, h, s)?;
    let d = p.dims;
    let (nl, rows) = (d.n_l, d.stacked_rows());
    let tracker = TempTracker::new();
    let mut eng = Engine::new(cfg);
    let mut ph = Phases { ledger: FlopLedger::new(), times: Vec::new() };
    let mut x = tracker.zeros(rows, d.n_g);

    ph.run(&mut eng, "s", |eng, l| {
        eng.herk(l, 1.0, p.a.as_ref(), 0.0, s.as_mut())?;
        eng.kernels(l).diag_scale(&p.u_stacked(), p.b.as_ref(), x.as_mut())?;
        eng.cpu_work(scaling_flops(rows, d.n_g));
        eng.herk(l, 1.0, x.as_ref(), 1.0, s.as_mut())
    })?;

    ph.run(&mut eng, "h_ab", |eng, l| {
        stack_z(p, eng.kernels(l), &mut x)?;
        eng.cpu_work(d.n_atoms as u64 * (gemm_flops(nl, d.n_g, nl) + hemm_flops(nl, d.n_g)));
        eng.her2k(l, ONE, x.as_ref(), p.b.as_ref(), 0.0, h.as_mut())
    })?;

    ph.run(&mut eng, "h_aa", |eng, l| {
        let kern = eng.kernels(l);
        for atom in 0..d.n_atoms {
            kern.hemm(Side::Left, ONE, p.t_aa[atom].as_ref(), p.a_block(atom), ZERO, rows_mut(&mut x, atom * nl, nl))?;
        }
        eng.cpu_work(d.n_atoms as u64 * hemm_flops(nl, d.n_g));
        eng.herkx(l, ONE, p.a.as_ref(), x.as_ref(), 1.0, h.as_mut())
    })?;

    drop(x);
    Ok(finish(ph, eng, &tracker))
}

/// Original construction into caller-provided outputs.
///
/// The instance itself plays the role of the backups; A and B are worked on
/// in two tracked copies that are overwritten and restored as in the
/// original formulation.
pub fn build_hs_original_into(
    p: &ProblemInstance,
    cfg: &PipelineConfig,
    h: &mut HermitianView,
    s: &mut HermitianView,
) -> Result<BuildStats, PipelineError> {
    cfg.validate()?;
    check_outputs(p, h, s)?;
    let d = p.dims;
    let (nl, ng) = (d.n_l, d.n_g);
    let tracker = TempTracker::new();
    let mut eng = Engine::new(cfg);
    let mut ph = Phases { ledger: FlopLedger::new(), times: Vec::new() };
    let mut a = tracker.track(p.a.clone());
    let mut b = tracker.track(p.b.clone());

    ph.run(&mut eng, "h_ab", |eng, l| {
        stack_z(p, eng.kernels(l), &mut a)?;
        eng.cpu_work(d.n_atoms as u64 * (gemm_flops(nl, ng, nl) + hemm_flops(nl, ng)));
        eng.her2k(l, ONE, a.as_ref(), b.as_ref(), 0.0, h.as_mut())
    })?;

    ph.run(&mut eng, "s", |eng, l| {
        a.as_mut().copy_from(p.a.as_ref());
        b.as_mut().copy_from(p.b.as_ref());
        eng.herk(l, 1.0, a.as_ref(), 0.0, s.as_mut())?;
        eng.kernels(l).diag_scale(&p.u_stacked(), p.b.as_ref(), b.as_mut())?;
        eng.cpu_work(scaling_flops(d.stacked_rows(), ng));
        eng.herk(l, 1.0, b.as_ref(), 1.0, s.as_mut())
    })?;

    ph.run(&mut eng, "h_aa", |eng, l| {
        let kern = eng.kernels(l);
        // B_T fills B from the top, B_B from the bottom; A is compressed to
        // the atoms whose factorization failed.
        let n_hpd_atoms = p.hpd.iter().filter(|&&x| x).count();
        let mut top = 0;
        let mut bottom = n_hpd_atoms;
        let mut compressed = 0;
        let mut cpu_flops = 0;
        for atom in 0..d.n_atoms {
            cpu_flops += potrf_flops(nl);
            match kern.potrf(p.t_aa[atom].as_ref()) {
                Ok(chol) => {
                    let mut z = rows_mut(&mut b, top * nl, nl);
                    z.copy_from(p.a_block(atom));
                    kern.trmm(Side::Left, Uplo::Lower, Trans::ConjTrans, ONE, chol.as_ref(), z)?;
                    cpu_flops += trmm_flops(nl, ng);
                    top += 1;
                }
                Err(KernelError::NotPositiveDefinite { .. }) => {
                    let z = rows_mut(&mut b, bottom * nl, nl);
                    kern.hemm(Side::Left, ONE, p.t_aa[atom].as_ref(), p.a_block(atom), ZERO, z)?;
                    rows_mut(&mut a, compressed * nl, nl).copy_from(p.a_block(atom));
                    cpu_flops += hemm_flops(nl, ng);
                    bottom += 1;
                    compressed += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
        eng.cpu_work(cpu_flops);
        if top > 0 {
            eng.herk(l, 1.0, rows_ref(&b, 0, top * nl), 1.0, h.as_mut())?;
        }
        if compressed > 0 {
            let mut full = tracker.zeros(ng, ng);
            eng.gemm_full(l, rows_ref(&a, 0, compressed * nl), rows_ref(&b, top * nl, compressed * nl), full.as_mut())?;
            let hm = h.matrix_mut();
            for j in 0..ng {
                for i in j..ng {
                    hm[(i, j)] += full[(i, j)];
                }
                hm[(j, j)].im = 0.0;
            }
        }
        Ok(())
    })?;

    drop(a);
    drop(b);
    Ok(finish(ph, eng, &tracker))
}

fn finish(ph: Phases, eng: Engine<'_>, tracker: &TempTracker) -> BuildStats {
    BuildStats {
        ledger: ph.ledger.snapshot(),
        peak_temp_bytes: tracker.peak(),
        phases: ph.times,
        kernels: eng.records,
        warnings: eng.warnings,
        cpu_rate: eng.cpu_rate,
    }
}

fn build_with(
    p: &ProblemInstance,
    cfg: &PipelineConfig,
    f: fn(&ProblemInstance, &PipelineConfig, &mut HermitianView, &mut HermitianView) -> Result<BuildStats, PipelineError>,
) -> Result<HSResult, PipelineError> {
    let ng = p.dims.n_g;
    let mut h = HermitianView::zeros(ng);
    let mut s = HermitianView::zeros(ng);
    let stats = f(p, cfg, &mut h, &mut s)?;
    Ok(HSResult { h, s, stats })
}

/// Refined construction. `cfg.variant` is not consulted.
pub fn build_hs_refined(p: &ProblemInstance, cfg: &PipelineConfig) -> Result<HSResult, PipelineError> {
    build_with(p, cfg, build_hs_refined_into)
}

/// Original construction. `cfg.variant` is not consulted.
pub fn build_hs_original(p: &ProblemInstance, cfg: &PipelineConfig) -> Result<HSResult, PipelineError> {
    build_with(p, cfg, build_hs_original_into)
}

/// Runs the variant named in `cfg`.
pub fn build_hs(p: &ProblemInstance, cfg: &PipelineConfig) -> Result<HSResult, PipelineError> {
    match cfg.variant {
        Variant::Original => build_hs_original(p, cfg),
        Variant::Refined => build_hs_refined(p, cfg),
    }
}

/// Predicted ledger of a run, keyed `phase/kernel`. `hpd` gives the outcome
/// of each atom's factorization (original variant only).
pub fn flop_model(dims: ProblemDims, hpd: &[bool], variant: Variant) -> LedgerSnapshot {
    let (na, nl, ng) = (dims.n_atoms, dims.n_l, dims.n_g);
    let rows = dims.stacked_rows();
    let mut m = LedgerSnapshot::default();
    m.add("s/zherk", 2 * herk_flops(ng, rows));
    m.add("s/scaling", scaling_flops(rows, ng));
    m.add("h_ab/zgemm", na as u64 * gemm_flops(nl, ng, nl));
    m.add("h_ab/zhemm", na as u64 * hemm_flops(nl, ng));
    m.add("h_ab/zher2k", her2k_flops(ng, rows));
    match variant {
        Variant::Refined => {
            m.add("h_aa/zhemm", na as u64 * hemm_flops(nl, ng));
            m.add("h_aa/zherkx", herk_flops(ng, rows));
        }
        Variant::Original => {
            let n_hpd = hpd.iter().filter(|&&x| x).count();
            let n_not = na - n_hpd;
            m.add("h_aa/zpotrf", na as u64 * potrf_flops(nl));
            m.add("h_aa/ztrmm", n_hpd as u64 * trmm_flops(nl, ng));
            m.add("h_aa/zhemm", n_not as u64 * hemm_flops(nl, ng));
            m.add("h_aa/zherk", herk_flops(ng, n_hpd * nl));
            m.add("h_aa/zgemm", gemm_flops(ng, ng, n_not * nl));
        }
    }
    m
}

/// Flop model for an instance, using its recorded factorization outcomes.
pub fn flop_model_for(p: &ProblemInstance, variant: Variant) -> LedgerSnapshot {
    flop_model(p.dims, &p.hpd, variant)
}
