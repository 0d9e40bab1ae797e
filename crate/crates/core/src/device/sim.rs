//! Simulated accelerator: one executor thread plus virtual-time bookkeeping.

use std::thread::JoinHandle;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};

use super::ops::{execute, BlockOp};
use super::{DeviceDescriptor, DeviceError};
use crate::error::KernelError;
use crate::matrix::{MatMut, MatRef, C64};

/// A block op with its operands packed into owned buffers.
#[derive(Debug)]
pub struct PackedOp {
    /// Caller's handle, echoed back in [`Completed`].
    pub tag: usize,
    pub op: BlockOp,
    /// Inner-dimension chunk boundaries, `[0, …, k]`.
    pub k_bounds: Vec<usize>,
    /// One `k × width` column-major buffer per panel of `op.kind`.
    pub panels: Vec<Vec<C64>>,
    /// `rows × cols` destination tile.
    pub dest: Vec<C64>,
}

impl PackedOp {
    pub fn k(&self) -> usize {
        *self.k_bounds.last().unwrap_or(&0)
    }

    fn chunk(&self) -> usize {
        self.k_bounds.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn footprint(&self) -> u64 {
        self.op.footprint(self.chunk())
    }
}

#[derive(Debug)]
pub struct Completed {
    pub tag: usize,
    pub device: usize,
    pub op: BlockOp,
    pub dest: Vec<C64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Ready,
    QueueFull,
    /// The op can never fit on this device.
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Enqueue {
    Accepted { start: f64, end: f64 },
    QueueFull,
    Rejected { bytes: u64, capacity: u64 },
}

pub struct SimDevice {
    id: usize,
    desc: DeviceDescriptor,
    cpu_rate: f64,
    tx: Option<Sender<PackedOp>>,
    rx: Receiver<Result<Completed, DeviceError>>,
    handle: Option<JoinHandle<()>>,
    /// `(virtual end time, resident bytes)` of ops not yet retired.
    in_flight: Vec<(f64, u64)>,
    avail_at: f64,
    busy: f64,
    accepted: usize,
    outstanding: usize,
}

fn run_packed(device: usize, p: PackedOp) -> Result<Completed, DeviceError> {
    let k = p.k();
    let op = p.op;
    let widths: Vec<usize> = op.panels().map(|(_, _, w)| w).collect();
    let bad = |detail: String| DeviceError::Kernel {
        device,
        source: KernelError::Dimension { kernel: op.kind.name(), detail },
    };
    if widths.len() != p.panels.len() {
        return Err(bad(format!("{} panels, expected {}", p.panels.len(), widths.len())));
    }
    for (buf, &w) in p.panels.iter().zip(&widths) {
        if buf.len() != k * w {
            return Err(bad(format!("panel of {} values, expected {k}x{w}", buf.len())));
        }
    }
    if p.dest.len() != op.rows * op.cols {
        return Err(bad(format!("tile of {} values, expected {}x{}", p.dest.len(), op.rows, op.cols)));
    }
    let PackedOp { tag, k_bounds, panels, mut dest, .. } = p;
    let views: Vec<MatRef<'_>> = panels.iter().zip(&widths).map(|(b, &w)| MatRef::from_slice(b, k, w, k.max(1))).collect();
    let mut out = MatMut::from_slice(&mut dest, op.rows, op.cols, op.rows.max(1));
    execute(&op, &k_bounds, &views, &mut out);
    Ok(Completed { tag, device, op, dest })
}

impl SimDevice {
    pub fn spawn(id: usize, desc: DeviceDescriptor, cpu_rate: f64) -> Self {
        let (tx, jobs) = bounded::<PackedOp>(2 * desc.queue_depth.max(1));
        let (done_tx, rx) = unbounded();
        let handle = std::thread::Builder::new()
            .name(format!("sim-device-{id}"))
            .spawn(move || {
                for job in jobs {
                    if done_tx.send(run_packed(id, job)).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn device executor");
        Self {
            id,
            desc,
            cpu_rate,
            tx: Some(tx),
            rx,
            handle: Some(handle),
            in_flight: Vec::new(),
            avail_at: 0.0,
            busy: 0.0,
            accepted: 0,
            outstanding: 0,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn descriptor(&self) -> &DeviceDescriptor {
        &self.desc
    }

    /// Modeled seconds spent computing.
    pub fn busy(&self) -> f64 {
        self.busy
    }

    /// Virtual time at which the last accepted op finishes.
    pub fn finish_time(&self) -> f64 {
        self.avail_at
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    fn retire(&mut self, now: f64) {
        self.in_flight.retain(|&(end, _)| end > now);
    }

    /// Whether an op with this footprint could be enqueued at `now`.
    pub fn admission(&mut self, now: f64, footprint: u64) -> Admission {
        if footprint > self.desc.memory_capacity {
            return Admission::Rejected;
        }
        self.retire(now);
        let resident: u64 = self.in_flight.iter().map(|&(_, b)| b).sum();
        if self.in_flight.len() >= self.desc.queue_depth || resident + footprint > self.desc.memory_capacity {
            Admission::QueueFull
        } else {
            Admission::Ready
        }
    }

    /// Non-blocking enqueue at virtual time `now`. The op is consumed only
    /// when accepted.
    pub fn try_enqueue(&mut self, now: f64, op: PackedOp) -> Result<Enqueue, DeviceError> {
        let fp = op.footprint();
        match self.admission(now, fp) {
            Admission::Rejected => {
                return Ok(Enqueue::Rejected { bytes: fp, capacity: self.desc.memory_capacity });
            }
            Admission::QueueFull => return Ok(Enqueue::QueueFull),
            Admission::Ready => {}
        }
        let k = op.k();
        let cost = self.desc.op_seconds(op.op.flops(k), op.op.transfer_bytes(k), self.cpu_rate);
        let start = now.max(self.avail_at);
        let end = start + cost;
        let tx = self.tx.as_ref().ok_or(DeviceError::Lost(self.id))?;
        tx.send(op).map_err(|_| DeviceError::Lost(self.id))?;
        self.in_flight.push((end, fp));
        self.avail_at = end;
        self.busy += cost;
        self.accepted += 1;
        self.outstanding += 1;
        Ok(Enqueue::Accepted { start, end })
    }

    /// Earliest virtual time after `now` at which a queue slot frees up.
    pub fn next_completion(&self, now: f64) -> Option<f64> {
        self.in_flight.iter().map(|&(e, _)| e).filter(|&e| e > now).min_by(f64::total_cmp)
    }

    /// Results that are already available, without blocking.
    pub fn drain(&mut self) -> Vec<Result<Completed, DeviceError>> {
        let out: Vec<_> = self.rx.try_iter().collect();
        self.outstanding -= out.len();
        out
    }

    /// Blocks until every accepted op has returned.
    pub fn wait(&mut self) -> Vec<Result<Completed, DeviceError>> {
        let mut out = Vec::with_capacity(self.outstanding);
        while self.outstanding > 0 {
            match self.rx.recv() {
                Ok(r) => out.push(r),
                Err(_) => {
                    out.push(Err(DeviceError::Lost(self.id)));
                    break;
                }
            }
            self.outstanding -= 1;
        }
        self.outstanding = 0;
        out
    }
}

impl Drop for SimDevice {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Waits for every device; fails with the first error after all queues
/// have drained.
pub fn wait_all(devices: &mut [SimDevice]) -> Result<Vec<Completed>, DeviceError> {
    let mut done = Vec::new();
    let mut first_err = None;
    for d in devices.iter_mut() {
        for r in d.wait() {
            match r {
                Ok(c) => done.push(c),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(done),
    }
}
