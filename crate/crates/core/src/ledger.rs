//! Real-flop accounting.
//!
//! One complex multiply-add counts as 8 real flops, so a product of an
//! `m × k` by a `k × n` matrix is charged `8·m·n·k`.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Accumulated real-flop counts keyed by kernel (or `phase/kernel`) name.
#[derive(Debug, Default)]
pub struct FlopLedger {
    counts: Mutex<BTreeMap<String, u64>>,
}

impl FlopLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero counts leave no entry.
    pub fn charge(&self, key: &str, flops: u64) {
        if flops == 0 {
            return;
        }
        let mut counts = self.counts.lock().expect("ledger poisoned");
        *counts.entry(key.to_owned()).or_insert(0) += flops;
    }

    pub fn get(&self, key: &str) -> u64 {
        self.counts.lock().expect("ledger poisoned").get(key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.lock().expect("ledger poisoned").values().sum()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            counts: self.counts.lock().expect("ledger poisoned").clone(),
        }
    }

    /// Adds every entry of `other` under `prefix/key`.
    pub fn absorb(&self, prefix: &str, other: &FlopLedger) {
        for (k, v) in other.snapshot().counts {
            self.charge(&format!("{prefix}/{k}"), v);
        }
    }
}

/// Plain copy of a ledger, comparable and serializable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub counts: BTreeMap<String, u64>,
}

impl LedgerSnapshot {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn get(&self, key: &str) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn add(&mut self, key: &str, flops: u64) {
        if flops > 0 {
            *self.counts.entry(key.to_owned()).or_insert(0) += flops;
        }
    }

    /// Sum over entries whose key starts with `prefix/`.
    pub fn phase_total(&self, prefix: &str) -> u64 {
        let p = format!("{prefix}/");
        self.counts.iter().filter(|(k, _)| k.starts_with(&p)).map(|(_, v)| v).sum()
    }
}

pub fn gemm_flops(m: usize, n: usize, k: usize) -> u64 {
    8 * (m as u64) * (n as u64) * (k as u64)
}

/// herk and herkx: half of the corresponding square product.
pub fn herk_flops(n: usize, k: usize) -> u64 {
    4 * (k as u64) * (n as u64) * (n as u64)
}

pub fn her2k_flops(n: usize, k: usize) -> u64 {
    8 * (k as u64) * (n as u64) * (n as u64)
}

pub fn hemm_flops(order: usize, cols: usize) -> u64 {
    8 * (order as u64) * (order as u64) * (cols as u64)
}

pub fn trmm_flops(order: usize, cols: usize) -> u64 {
    4 * (order as u64) * (order as u64) * (cols as u64)
}

/// `⌊4n³/3⌋`; the floor keeps the ledger integral.
pub fn potrf_flops(n: usize) -> u64 {
    4 * (n as u64).pow(3) / 3
}

pub fn scaling_flops(rows: usize, cols: usize) -> u64 {
    2 * (rows as u64) * (cols as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charge_and_absorb() {
        let phase = FlopLedger::new();
        phase.charge("zherk", 4);
        phase.charge("zherk", 4);
        phase.charge("scaling", 2);
        let total = FlopLedger::new();
        total.absorb("s", &phase);
        let snap = total.snapshot();
        assert_eq!(snap.get("s/zherk"), 8);
        assert_eq!(snap.phase_total("s"), 10);
        assert_eq!(total.total(), 10);
    }

    #[test]
    fn potrf_count_is_floored() {
        assert_eq!(potrf_flops(1), 1);
        assert_eq!(potrf_flops(3), 36);
        assert_eq!(potrf_flops(49), 4 * 49u64.pow(3) / 3);
    }
}
