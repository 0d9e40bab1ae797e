//! Static CPU/accelerator split of Hermitian rank updates.
//!
//! The output is cut as
//!
//! ```text
//!        n_g    n − n_g
//!      ┌──────┬───────┐
//! n_g  │ C00  │       │   C00: accelerators
//!      ├──────┼───────┤
//!      │ C10  │  C11  │   C10, C11: CPU
//!      └──────┴───────┘
//! ```
//!
//! and both sides run concurrently. `C00` is dispatched in tiles over the
//! accelerators only; the CPU side uses the ordinary blocked kernels.

use serde::{Deserialize, Serialize};

use crate::device::{self, DeviceError, DevicePool};
use crate::dynamic::{choose_block_size, dispatch, plan_her2k, plan_herk, plan_herkx, DispatchReport};
use crate::error::KernelError;
use crate::kernels::{KernelVariant, Kernels, DEFAULT_BLOCK};
use crate::ledger::{her2k_flops, herk_flops, FlopLedger};
use crate::matrix::{ComplexMatrix, MatMut, MatRef, C64, ONE};

/// Order of the accelerator block:
/// `n_g = clamp(round(sqrt((m·n² + 4m)/(m + 1))), 0, n)`, ties rounding up.
/// `k` does not enter the closed form.
pub fn compute_split(n: usize, _k: usize, m: f64) -> usize {
    assert!(m > 0.0, "rate ratio must be positive");
    let nf = n as f64;
    let v = ((m * nf * nf + 4.0 * m) / (m + 1.0)).sqrt();
    let r = (v + 0.5).floor();
    if r >= nf {
        n
    } else {
        r.max(0.0) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankUpdate {
    /// `C := α·Aᴴ·A + β·C`.
    Herk(f64),
    /// `C := α·Aᴴ·B + ᾱ·Bᴴ·A + β·C`.
    Her2k(C64),
    /// `C := α·Aᴴ·B + β·C`, product known Hermitian.
    Herkx(C64),
}

impl RankUpdate {
    pub fn kernel(self) -> &'static str {
        match self {
            RankUpdate::Herk(_) => "zherk",
            RankUpdate::Her2k(_) => "zher2k",
            RankUpdate::Herkx(_) => "zherkx",
        }
    }

    /// Flops of the whole update.
    pub fn flops(self, n: usize, k: usize) -> u64 {
        match self {
            RankUpdate::Her2k(_) => her2k_flops(n, k),
            _ => herk_flops(n, k),
        }
    }

    /// Flops of the CPU side for split `n_g`.
    pub fn cpu_flops(self, n: usize, k: usize, n_g: usize) -> u64 {
        let per = match self {
            RankUpdate::Her2k(_) => 8,
            _ => 4,
        };
        let (n1, ng, k) = ((n - n_g) as u64, n_g as u64, k as u64);
        per * k * (n1 * n1 + 2 * ng * n1)
    }

    fn operand_panels(self) -> u64 {
        match self {
            RankUpdate::Herk(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HybridStats {
    pub n: usize,
    pub n_g: usize,
    /// Accelerator/CPU rate ratio used to size the split.
    pub m: f64,
    /// Modeled seconds on each side.
    pub busy_cpu: f64,
    pub busy_accel: f64,
    pub cpu_flops: u64,
    pub accel_flops: u64,
    pub warnings: Vec<String>,
    pub accel_dispatch: Option<DispatchReport>,
}

impl HybridStats {
    pub fn span(&self) -> f64 {
        self.busy_cpu.max(self.busy_accel)
    }

    /// `|busy_accel − busy_cpu| / max`.
    pub fn imbalance(&self) -> f64 {
        let s = self.span();
        if s == 0.0 {
            0.0
        } else {
            (self.busy_accel - self.busy_cpu).abs() / s
        }
    }
}

#[derive(Clone, Debug)]
pub struct StaticSplitter<'p> {
    pub pool: &'p DevicePool,
    /// Fixed accelerator/CPU ratio; derived from the pool when `None`.
    pub ratio: Option<f64>,
    /// Estimate the ratio from a run at `n/8` instead.
    pub calibrate: bool,
    pub variant: KernelVariant,
    pub cpu_rate: f64,
    pub cap: usize,
}

fn dim_err(kernel: &'static str, detail: String) -> DeviceError {
    DeviceError::Kernel { device: usize::MAX, source: KernelError::Dimension { kernel, detail } }
}

impl<'p> StaticSplitter<'p> {
    pub fn new(pool: &'p DevicePool) -> Self {
        Self {
            pool,
            ratio: None,
            calibrate: false,
            variant: KernelVariant::default(),
            cpu_rate: device::calibrated_cpu_rate(),
            cap: DEFAULT_BLOCK,
        }
    }

    fn cpu_rate_factor(&self) -> f64 {
        self.pool.cpu().map_or(1.0, |(_, d)| d.rate_factor)
    }

    /// Ratio from the pool's rate factors.
    pub fn pool_ratio(&self) -> f64 {
        self.pool.accelerator_rate() / self.cpu_rate_factor()
    }

    pub fn herk(&self, ledger: &FlopLedger, alpha: f64, a: MatRef<'_>, beta: f64, c: MatMut<'_>) -> Result<HybridStats, DeviceError> {
        self.update(ledger, RankUpdate::Herk(alpha), None, a, a, beta, c)
    }

    pub fn her2k(
        &self,
        ledger: &FlopLedger,
        alpha: C64,
        a: MatRef<'_>,
        b: MatRef<'_>,
        beta: f64,
        c: MatMut<'_>,
    ) -> Result<HybridStats, DeviceError> {
        self.update(ledger, RankUpdate::Her2k(alpha), None, a, b, beta, c)
    }

    pub fn herkx(
        &self,
        ledger: &FlopLedger,
        alpha: C64,
        a: MatRef<'_>,
        b: MatRef<'_>,
        beta: f64,
        c: MatMut<'_>,
    ) -> Result<HybridStats, DeviceError> {
        self.update(ledger, RankUpdate::Herkx(alpha), None, a, b, beta, c)
    }

    /// Runs `op` with the split given by `n_g`, or computed from the ratio
    /// when `n_g` is `None`. For `Herk`, `b` is ignored.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &self,
        ledger: &FlopLedger,
        op: RankUpdate,
        n_g: Option<usize>,
        a: MatRef<'_>,
        b: MatRef<'_>,
        beta: f64,
        c: MatMut<'_>,
    ) -> Result<HybridStats, DeviceError> {
        let b = if matches!(op, RankUpdate::Herk(_)) { a } else { b };
        let (k, n) = a.shape();
        if b.shape() != a.shape() || c.rows() != n || c.cols() != n {
            return Err(dim_err(
                op.kernel(),
                format!("A {}x{}, B {}x{}, C {}x{}", a.rows(), a.cols(), b.rows(), b.cols(), c.rows(), c.cols()),
            ));
        }
        let mut stats = HybridStats { n, ..Default::default() };
        let has_accel = self.pool.accelerators().next().is_some();
        let has_cpu = self.pool.cpu().is_some();
        let mut ng = match n_g {
            Some(g) => g.min(n),
            None => {
                let m = match (self.ratio, self.calibrate) {
                    (Some(m), _) => m,
                    (None, true) if has_accel && has_cpu => self.calibrate_ratio(op, a, b)?,
                    _ => self.pool_ratio(),
                };
                stats.m = m;
                if m > 0.0 && m.is_finite() {
                    compute_split(n, k, m)
                } else {
                    0
                }
            }
        };
        if !has_accel {
            ng = 0;
        } else if !has_cpu {
            ng = n;
        }
        if ng > 0 {
            ng = self.fit_memory(op, ng, k, &mut stats.warnings);
        }
        stats.n_g = ng;

        let accel_pool = self.pool.without_cpu();
        let block = if ng > 0 { choose_block_size(&accel_pool, ng, k, self.cap)? } else { 1 };
        let scratch = FlopLedger::new();
        let kern = Kernels::new(self.variant, &scratch);
        let (a0, a1) = (a.submatrix(0, 0, k, ng), a.submatrix(0, ng, k, n - ng));
        let (b0, b1) = (b.submatrix(0, 0, k, ng), b.submatrix(0, ng, k, n - ng));
        let (left, right) = c.split_at_col(ng);
        let (c00, c10) = left.split_at_row(ng);
        let (_, c11) = right.split_at_row(ng);
        let cpu_rate = self.cpu_rate;

        let accel = std::thread::scope(|s| {
            let accel = (ng > 0).then(|| {
                let pool = &accel_pool;
                s.spawn(move || {
                    let plan = match op {
                        RankUpdate::Herk(al) => plan_herk(ng, k, block, al, beta),
                        RankUpdate::Her2k(al) => plan_her2k(ng, k, block, al, beta),
                        RankUpdate::Herkx(al) => plan_herkx(ng, k, block, al, beta),
                    };
                    dispatch(&plan, a0, b0, c00, pool, cpu_rate)
                })
            });
            if ng < n {
                let bc = C64::new(beta, 0.0);
                match op {
                    RankUpdate::Herk(al) => {
                        kern.run_herk(al, a1, beta, c11);
                        kern.run_gemm_ch(C64::new(al, 0.0), a1, a0, bc, c10);
                    }
                    RankUpdate::Her2k(al) => {
                        kern.run_her2k(al, a1, b1, beta, c11);
                        let mut c10 = c10;
                        kern.run_gemm_ch(al.conj(), b1, a0, bc, c10.rb_mut());
                        kern.run_gemm_ch(al, a1, b0, ONE, c10);
                    }
                    RankUpdate::Herkx(al) => {
                        kern.run_herkx(al, a1, b1, beta, c11);
                        kern.run_gemm_ch(al, a1, b0, bc, c10);
                    }
                }
            }
            accel.map(|h| h.join().expect("accelerator branch panicked")).transpose()
        })?;

        stats.cpu_flops = op.cpu_flops(n, k, ng);
        stats.accel_flops = op.flops(n, k) - stats.cpu_flops;
        stats.busy_cpu = stats.cpu_flops as f64 / (self.cpu_rate_factor() * cpu_rate);
        stats.busy_accel = accel.as_ref().map_or(0.0, |r| r.span);
        stats.accel_dispatch = accel.map(|mut r| {
            r.remap_devices(&self.pool.accelerators().map(|(i, _)| i).collect::<Vec<_>>());
            r
        });
        ledger.charge(op.kernel(), op.flops(n, k));
        Ok(stats)
    }

    /// Shrinks `n_g` until `C00` and its operand panels fit in the combined
    /// accelerator memory, keeping it an allowed block multiple.
    fn fit_memory(&self, op: RankUpdate, ng: usize, k: usize, warnings: &mut Vec<String>) -> usize {
        let capacity: u64 = self.pool.accelerators().map(|(_, d)| d.memory_capacity).fold(0, u64::saturating_add);
        let need = |g: usize| 16 * ((g * g) as u64 + op.operand_panels() * (k * g) as u64);
        if need(ng) <= capacity {
            return ng;
        }
        let allowed = |g: usize| self.pool.accelerators().all(|(_, d)| d.block_constraint.allows(g));
        let fallback = (1..ng).rev().find(|&g| need(g) <= capacity && allowed(g)).unwrap_or(0);
        warnings.push(format!(
            "accelerator block of order {ng} needs {} bytes, capacity {capacity}; reduced to {fallback}",
            need(ng)
        ));
        fallback
    }

    /// Accelerator/CPU ratio measured from modeled busy times of the same
    /// update at one eighth of the size, run once on each side.
    fn calibrate_ratio(&self, op: RankUpdate, a: MatRef<'_>, b: MatRef<'_>) -> Result<f64, DeviceError> {
        let (k, n) = a.shape();
        let np = (n / 8).max(1);
        let (ap, bp) = (a.submatrix(0, 0, k, np), b.submatrix(0, 0, k, np));
        let probe = StaticSplitter { ratio: Some(1.0), calibrate: false, ..self.clone() };
        let scratch = FlopLedger::new();
        let mut c = ComplexMatrix::zeros(np, np);
        let cpu = probe.update(&scratch, op, Some(0), ap, bp, 0.0, c.as_mut())?;
        let acc = probe.update(&scratch, op, Some(np), ap, bp, 0.0, c.as_mut())?;
        if acc.busy_accel > 0.0 {
            Ok(cpu.busy_cpu / acc.busy_accel)
        } else {
            Ok(self.pool_ratio())
        }
    }
}
