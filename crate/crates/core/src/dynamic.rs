//! Tile scheduler: square tiling of the output, memory-driven block size,
//! round-robin dispatch to accelerator queues, and CPU participation once
//! every queue is full.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::device::{
    self, execute, pack_block, unpack_block, view_for, wait_all, Admission, BlockOp, Completed, DeviceError, DevicePool,
    Enqueue, OpKind, PackedOp, Panel, SimDevice,
};
use crate::error::KernelError;
use crate::kernels::DEFAULT_BLOCK;
use crate::ledger::{gemm_flops, her2k_flops, herk_flops, FlopLedger};
use crate::matrix::{tile_bounds, MatMut, MatRef, C64, ZERO};

/// Tiles resident per device when sizing blocks: two inputs, one output,
/// one staging buffer.
pub const TILES_RESIDENT: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Herk,
    Her2k,
    Herkx,
    Gemm,
}

/// Block ops covering one kernel call. Operands are `k × rows` (left) and
/// `k × cols` (right).
#[derive(Clone, Debug, PartialEq)]
pub struct TilePlan {
    pub kind: PlanKind,
    pub block: usize,
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub k_bounds: Vec<usize>,
    pub ops: Vec<BlockOp>,
}

impl TilePlan {
    pub fn row_bounds(&self) -> Vec<usize> {
        tile_bounds(self.rows, self.block)
    }

    pub fn col_bounds(&self) -> Vec<usize> {
        tile_bounds(self.cols, self.block)
    }

    pub fn is_triangular(&self) -> bool {
        self.kind != PlanKind::Gemm
    }

    pub fn flops(&self) -> u64 {
        self.ops.iter().map(|o| o.flops(self.k)).sum()
    }

    /// Largest per-op device footprint.
    pub fn max_footprint(&self) -> u64 {
        let kc = self.chunk();
        self.ops.iter().map(|o| o.footprint(kc)).max().unwrap_or(0)
    }

    fn chunk(&self) -> usize {
        self.k_bounds.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }
}

fn k_bounds(k: usize, b: usize) -> Vec<usize> {
    if k == 0 {
        vec![0, 0]
    } else {
        tile_bounds(k, b)
    }
}

#[allow(clippy::too_many_arguments)]
fn triangular_plan(kind: PlanKind, diag: OpKind, off: OpKind, n: usize, k: usize, b: usize, alpha: C64, beta: f64) -> TilePlan {
    assert!(b > 0, "block size must be positive");
    let bounds = tile_bounds(n, b);
    let t = bounds.len() - 1;
    let mut ops = Vec::with_capacity(t * (t + 1) / 2);
    for tj in 0..t {
        for ti in tj..t {
            ops.push(BlockOp {
                kind: if ti == tj { diag } else { off },
                tile: (ti, tj),
                row0: bounds[ti],
                rows: bounds[ti + 1] - bounds[ti],
                col0: bounds[tj],
                cols: bounds[tj + 1] - bounds[tj],
                alpha,
                beta: C64::new(beta, 0.0),
            });
        }
    }
    TilePlan { kind, block: b, rows: n, cols: n, k, k_bounds: k_bounds(k, b), ops }
}

/// Lower tiles of `C := α·Aᴴ·A + β·C`, `A` is `k × n`.
pub fn plan_herk(n: usize, k: usize, b: usize, alpha: f64, beta: f64) -> TilePlan {
    triangular_plan(PlanKind::Herk, OpKind::HerkTile, OpKind::Gemm, n, k, b, C64::new(alpha, 0.0), beta)
}

/// Lower tiles of `C := α·Aᴴ·B + ᾱ·Bᴴ·A + β·C`.
pub fn plan_her2k(n: usize, k: usize, b: usize, alpha: C64, beta: f64) -> TilePlan {
    triangular_plan(PlanKind::Her2k, OpKind::Her2kTile, OpKind::Gemm2, n, k, b, alpha, beta)
}

/// Lower tiles of `C := α·Aᴴ·B + β·C` for a Hermitian product.
pub fn plan_herkx(n: usize, k: usize, b: usize, alpha: C64, beta: f64) -> TilePlan {
    triangular_plan(PlanKind::Herkx, OpKind::HerkxTile, OpKind::Gemm, n, k, b, alpha, beta)
}

/// All tiles of `C := α·Aᴴ·B + β·C`, `C` is `m × n`.
pub fn plan_gemm(m: usize, n: usize, k: usize, b: usize, alpha: C64, beta: C64) -> TilePlan {
    assert!(b > 0, "block size must be positive");
    let rb = tile_bounds(m, b);
    let cb = tile_bounds(n, b);
    let mut ops = Vec::with_capacity((rb.len() - 1) * (cb.len() - 1));
    for tj in 0..cb.len() - 1 {
        for ti in 0..rb.len() - 1 {
            ops.push(BlockOp {
                kind: OpKind::Gemm,
                tile: (ti, tj),
                row0: rb[ti],
                rows: rb[ti + 1] - rb[ti],
                col0: cb[tj],
                cols: cb[tj + 1] - cb[tj],
                alpha,
                beta,
            });
        }
    }
    TilePlan { kind: PlanKind::Gemm, block: b, rows: m, cols: n, k, k_bounds: k_bounds(k, b), ops }
}

/// Largest block size `≤ min(b_mem, cap, n)` allowed on every device, with
/// `b_mem = ⌊sqrt(min accelerator memory / (4·16))⌋`. When `n` is below a
/// device's smallest allowed size, that size is used as long as it fits in
/// memory (the whole output is then a single remainder tile).
pub fn choose_block_size(pool: &DevicePool, n: usize, _k: usize, cap: usize) -> Result<usize, DeviceError> {
    if pool.devices.is_empty() {
        return Err(DeviceError::Config("device pool is empty".into()));
    }
    let min_mem = pool.accelerators().map(|(_, d)| d.memory_capacity).min();
    let b_mem = match min_mem {
        Some(m) => ((m / (TILES_RESIDENT * 16)) as f64).sqrt().floor() as usize,
        None => usize::MAX,
    };
    let allows_all = |b: usize| pool.devices.iter().all(|d| d.block_constraint.allows(b));
    let limit = b_mem.min(cap.max(1)).min(n.max(1));
    if let Some(b) = (1..=limit).rev().find(|&b| allows_all(b)) {
        return Ok(b);
    }
    // n smaller than every allowed size: take the smallest size all devices accept.
    let step = pool.devices.iter().map(|d| d.block_constraint.smallest()).max().unwrap_or(1);
    let lim = b_mem.min(cap.max(step));
    (step..=lim)
        .find(|&b| allows_all(b))
        .ok_or_else(|| DeviceError::Config(format!("no block size fits device memory (b_mem={b_mem}) and constraints")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub op_kind: OpKind,
    pub dest_tile: (usize, usize),
    pub device_id: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl LogEntry {
    /// `op_kind,ti:tj,device_id,t_start,t_end`
    pub fn to_line(&self) -> String {
        format!(
            "{},{}:{},{},{:.9e},{:.9e}",
            self.op_kind.name(),
            self.dest_tile.0,
            self.dest_tile.1,
            self.device_id,
            self.t_start,
            self.t_end
        )
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let mut f = line.trim().split(',');
        let op_kind = OpKind::from_name(f.next()?)?;
        let (ti, tj) = f.next()?.split_once(':')?;
        let e = LogEntry {
            op_kind,
            dest_tile: (ti.parse().ok()?, tj.parse().ok()?),
            device_id: f.next()?.parse().ok()?,
            t_start: f.next()?.parse().ok()?,
            t_end: f.next()?.parse().ok()?,
        };
        f.next().is_none().then_some(e)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceUsage {
    pub device_id: usize,
    pub ops: usize,
    pub flops: u64,
    /// Modeled seconds.
    pub busy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub block: usize,
    pub log: Vec<LogEntry>,
    /// Modeled seconds until the last op finishes.
    pub span: f64,
    pub usage: Vec<DeviceUsage>,
}

impl DispatchReport {
    pub fn usage_of(&self, device_id: usize) -> Option<&DeviceUsage> {
        self.usage.iter().find(|u| u.device_id == device_id)
    }

    /// Renames device `i` to `ids[i]`, for reports made on a sub-pool.
    pub fn remap_devices(&mut self, ids: &[usize]) {
        for e in &mut self.log {
            e.device_id = ids[e.device_id];
        }
        for u in &mut self.usage {
            u.device_id = ids[u.device_id];
        }
    }
}

fn plan_error(detail: String) -> DeviceError {
    DeviceError::Config(format!("operands do not match plan: {detail}"))
}

/// Executes `plan` on `pool`, writing into `dest`. `left` is `k × rows`,
/// `right` is `k × cols`. Numerical results do not depend on which device
/// ran which tile.
pub fn dispatch(
    plan: &TilePlan,
    left: MatRef<'_>,
    right: MatRef<'_>,
    dest: MatMut<'_>,
    pool: &DevicePool,
    cpu_rate: f64,
) -> Result<DispatchReport, DeviceError> {
    pool.validate()?;
    if left.rows() != plan.k || right.rows() != plan.k || left.cols() != plan.rows || right.cols() != plan.cols {
        return Err(plan_error(format!(
            "left {}x{}, right {}x{}, plan k={} {}x{}",
            left.rows(),
            left.cols(),
            right.rows(),
            right.cols(),
            plan.k,
            plan.rows,
            plan.cols
        )));
    }
    if dest.rows() != plan.rows || dest.cols() != plan.cols {
        return Err(plan_error(format!("destination {}x{}", dest.rows(), dest.cols())));
    }
    let triangular = plan.is_triangular();
    let mut tiles: HashMap<(usize, usize), MatMut<'_>> = dest
        .into_tiles(&plan.row_bounds(), &plan.col_bounds(), |i, j| !triangular || i >= j)
        .into_iter()
        .map(|(i, j, t)| ((i, j), t))
        .collect();

    let mut devs: Vec<SimDevice> =
        pool.accelerators().map(|(id, d)| SimDevice::spawn(id, d.clone(), cpu_rate)).collect();
    let cpu = pool.cpu();
    let mut cpu_usage = cpu.map(|(id, _)| DeviceUsage { device_id: id, ..Default::default() });
    let mut dev_usage: Vec<DeviceUsage> =
        devs.iter().map(|d| DeviceUsage { device_id: d.id(), ..Default::default() }).collect();
    let mut log = Vec::with_capacity(plan.ops.len());
    let mut now = 0.0f64;
    let mut rr = 0usize;
    let kc = plan.chunk();

    let unpack = |tiles: &mut HashMap<(usize, usize), MatMut<'_>>, c: Completed| {
        let t = tiles.get_mut(&c.op.tile).expect("tile of a planned op");
        unpack_block(&c.dest, t, c.op.region());
    };

    for (tag, op) in plan.ops.iter().enumerate() {
        let fp = op.footprint(kc);
        loop {
            let mut may_fit = false;
            let mut placed = false;
            for t in 0..devs.len() {
                let d = (rr + t) % devs.len();
                match devs[d].admission(now, fp) {
                    Admission::Ready => {
                        let packed = pack_op(tag, op, plan, left, right, &tiles)?;
                        match devs[d].try_enqueue(now, packed)? {
                            Enqueue::Accepted { start, end } => {
                                log.push(LogEntry {
                                    op_kind: op.kind,
                                    dest_tile: op.tile,
                                    device_id: devs[d].id(),
                                    t_start: start,
                                    t_end: end,
                                });
                                dev_usage[d].ops += 1;
                                dev_usage[d].flops += op.flops(plan.k);
                                rr = (d + 1) % devs.len();
                                placed = true;
                            }
                            other => unreachable!("admitted op not accepted: {other:?}"),
                        }
                        break;
                    }
                    Admission::QueueFull => may_fit = true,
                    Admission::Rejected => {}
                }
            }
            if placed {
                break;
            }
            if let (Some((id, desc)), Some(usage)) = (cpu, cpu_usage.as_mut()) {
                let tile = tiles.get_mut(&op.tile).expect("tile of a planned op");
                let views: Vec<MatRef<'_>> = op.panels().map(|(p, first, w)| view_for(p, left, right, first, w)).collect();
                execute(op, &plan.k_bounds, &views, tile);
                let flops = op.flops(plan.k);
                let cost = desc.op_seconds(flops, 0, cpu_rate);
                log.push(LogEntry { op_kind: op.kind, dest_tile: op.tile, device_id: id, t_start: now, t_end: now + cost });
                usage.ops += 1;
                usage.flops += flops;
                usage.busy += cost;
                now += cost;
                break;
            }
            if !may_fit {
                let d = &devs[0];
                return Err(DeviceError::Rejected { device: d.id(), bytes: fp, capacity: d.descriptor().memory_capacity });
            }
            now = devs.iter().filter_map(|d| d.next_completion(now)).min_by(f64::total_cmp).unwrap_or(now);
        }
        for d in devs.iter_mut() {
            for r in d.drain() {
                unpack(&mut tiles, r?);
            }
        }
    }
    for c in wait_all(&mut devs)? {
        unpack(&mut tiles, c);
    }

    let mut usage: Vec<DeviceUsage> = cpu_usage.into_iter().chain(dev_usage).collect();
    for (u, d) in usage.iter_mut().filter(|u| cpu.is_none_or(|c| c.0 != u.device_id)).zip(&devs) {
        u.busy = d.busy();
    }
    usage.sort_by_key(|u| u.device_id);
    let span = devs.iter().map(SimDevice::finish_time).fold(now, f64::max);
    Ok(DispatchReport { block: plan.block, log, span, usage })
}

fn pack_op(
    tag: usize,
    op: &BlockOp,
    plan: &TilePlan,
    left: MatRef<'_>,
    right: MatRef<'_>,
    tiles: &HashMap<(usize, usize), MatMut<'_>>,
) -> Result<PackedOp, DeviceError> {
    let k = plan.k;
    let panels = op
        .panels()
        .map(|(p, first, w)| {
            let src = match p {
                Panel::LeftRows | Panel::LeftCols => left,
                Panel::RightRows | Panel::RightCols => right,
            };
            pack_block(src, 0, first, k, w)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dest = if op.beta == ZERO {
        vec![ZERO; op.rows * op.cols]
    } else {
        let t = &tiles[&op.tile];
        pack_block(t.rb(), 0, 0, op.rows, op.cols)?
    };
    Ok(PackedOp { tag, op: *op, k_bounds: plan.k_bounds.clone(), panels, dest })
}

/// Kernel front end that runs herk-family and gemm calls through
/// [`dispatch`] and charges the ledger once per call.
#[derive(Clone, Debug)]
pub struct DynamicScheduler<'p> {
    pub pool: &'p DevicePool,
    /// Fixed block size; chosen per call when `None`.
    pub block: Option<usize>,
    pub cap: usize,
    pub cpu_rate: f64,
}

fn dim_err(kernel: &'static str, detail: String) -> DeviceError {
    DeviceError::Kernel { device: usize::MAX, source: KernelError::Dimension { kernel, detail } }
}

fn check_rank(kernel: &'static str, a: MatRef<'_>, b: MatRef<'_>, c: &MatMut<'_>) -> Result<(), DeviceError> {
    if a.shape() != b.shape() || c.rows() != c.cols() || c.rows() != a.cols() {
        return Err(dim_err(
            kernel,
            format!("A {}x{}, B {}x{}, C {}x{}", a.rows(), a.cols(), b.rows(), b.cols(), c.rows(), c.cols()),
        ));
    }
    Ok(())
}

impl<'p> DynamicScheduler<'p> {
    pub fn new(pool: &'p DevicePool, block: Option<usize>) -> Self {
        Self { pool, block, cap: DEFAULT_BLOCK, cpu_rate: device::calibrated_cpu_rate() }
    }

    fn block_for(&self, n: usize, k: usize) -> Result<usize, DeviceError> {
        match self.block {
            Some(0) => Err(DeviceError::Config("block size must be positive".into())),
            Some(b) => Ok(b),
            None => choose_block_size(self.pool, n, k, self.cap),
        }
    }

    pub fn herk(&self, ledger: &FlopLedger, alpha: f64, a: MatRef<'_>, beta: f64, c: MatMut<'_>) -> Result<DispatchReport, DeviceError> {
        check_rank("zherk", a, a, &c)?;
        let (k, n) = a.shape();
        let plan = plan_herk(n, k, self.block_for(n, k)?, alpha, beta);
        let r = dispatch(&plan, a, a, c, self.pool, self.cpu_rate)?;
        ledger.charge("zherk", herk_flops(n, k));
        Ok(r)
    }

    pub fn her2k(
        &self,
        ledger: &FlopLedger,
        alpha: C64,
        a: MatRef<'_>,
        b: MatRef<'_>,
        beta: f64,
        c: MatMut<'_>,
    ) -> Result<DispatchReport, DeviceError> {
        check_rank("zher2k", a, b, &c)?;
        let (k, n) = a.shape();
        let plan = plan_her2k(n, k, self.block_for(n, k)?, alpha, beta);
        let r = dispatch(&plan, a, b, c, self.pool, self.cpu_rate)?;
        ledger.charge("zher2k", her2k_flops(n, k));
        Ok(r)
    }

    pub fn herkx(
        &self,
        ledger: &FlopLedger,
        alpha: C64,
        a: MatRef<'_>,
        b: MatRef<'_>,
        beta: f64,
        c: MatMut<'_>,
    ) -> Result<DispatchReport, DeviceError> {
        check_rank("zherkx", a, b, &c)?;
        let (k, n) = a.shape();
        let plan = plan_herkx(n, k, self.block_for(n, k)?, alpha, beta);
        let r = dispatch(&plan, a, b, c, self.pool, self.cpu_rate)?;
        ledger.charge("zherkx", herk_flops(n, k));
        Ok(r)
    }

    /// `C := α·Aᴴ·B + β·C`, full output.
    pub fn gemm(
        &self,
        ledger: &FlopLedger,
        alpha: C64,
        a: MatRef<'_>,
        b: MatRef<'_>,
        beta: C64,
        c: MatMut<'_>,
    ) -> Result<DispatchReport, DeviceError> {
        if a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols() {
            return Err(dim_err(
                "zgemm",
                format!("Aᴴ {}x{}, B {}x{}, C {}x{}", a.cols(), a.rows(), b.rows(), b.cols(), c.rows(), c.cols()),
            ));
        }
        let (k, m, n) = (a.rows(), a.cols(), b.cols());
        let plan = plan_gemm(m, n, k, self.block_for(m.max(n), k)?, alpha, beta);
        let r = dispatch(&plan, a, b, c, self.pool, self.cpu_rate)?;
        ledger.charge("zgemm", gemm_flops(m, n, k));
        Ok(r)
    }
}
