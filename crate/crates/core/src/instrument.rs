//! The machine abstraction and cost ledger.
//!
//! Sequential runs move words between slow and fast memory through
//! [`CommCounters::record_transfer`], bounded by the fast-memory capacity W.
//! Parallel runs are deterministic single-threaded simulations of virtual
//! processors; per-processor ledgers count each payload once at the sender
//! and once at the receiver, while the critical-path counters count each
//! edge once, the convention the closed-form models use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-processor cost ledger.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcCounters {
    pub flops: u64,
    pub mults: u64,
    pub divisions: u64,
    pub words_moved: u64,
    pub messages: u64,
}

/// Flops, words moved, and messages for a run, with per-processor vectors
/// and critical-path variants. All counts are monotone within a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCounters {
    pub flops: u64,
    pub mults: u64,
    pub divisions: u64,
    pub words_moved: u64,
    pub messages: u64,
    pub per_proc: Vec<ProcCounters>,
    pub cp_flops: u64,
    pub cp_divisions: u64,
    pub cp_words: u64,
    pub cp_messages: u64,
    /// Fast-memory capacity in words for sequential transfers; None disables
    /// the capacity check.
    pub capacity: Option<usize>,
}

impl CommCounters {
    pub fn new(procs: usize) -> Self {
        CommCounters {
            flops: 0,
            mults: 0,
            divisions: 0,
            words_moved: 0,
            messages: 0,
            per_proc: vec![ProcCounters::default(); procs],
            cp_flops: 0,
            cp_divisions: 0,
            cp_words: 0,
            cp_messages: 0,
            capacity: None,
        }
    }

    pub fn with_capacity(procs: usize, fast_mem_words: usize) -> Self {
        let mut c = Self::new(procs);
        c.capacity = Some(fast_mem_words);
        c
    }

    fn proc_mut(&mut self, proc: usize) -> &mut ProcCounters {
        if proc >= self.per_proc.len() {
            self.per_proc.resize(proc + 1, ProcCounters::default());
        }
        &mut self.per_proc[proc]
    }

    /// Arithmetic performed by `proc`: multiplications and additions are
    /// "flops"; divisions are ledgered separately.
    pub fn record_flops(&mut self, proc: usize, mults: u64, adds: u64, divisions: u64) {
        self.flops += mults + adds;
        self.mults += mults;
        self.divisions += divisions;
        let p = self.proc_mut(proc);
        p.flops += mults + adds;
        p.mults += mults;
        p.divisions += divisions;
    }

    /// One message of `words` payload from `from` to `to`. The payload is
    /// ledgered at both endpoints; a zero-word message still counts.
    pub fn record_message(&mut self, from: usize, to: usize, words: u64) {
        self.messages += 1;
        self.words_moved += words;
        let s = self.proc_mut(from);
        s.messages += 1;
        s.words_moved += words;
        let r = self.proc_mut(to);
        r.messages += 1;
        r.words_moved += words;
    }

    /// One slow<->fast transfer of `words` for a sequential run. Transfers
    /// larger than fast memory signal an algorithmic bug and are rejected.
    pub fn record_transfer(&mut self, words: usize) -> Result<()> {
        if let Some(cap) = self.capacity {
            if words > cap {
                return Err(Error::CapacityExceeded {
                    needed: words,
                    capacity: cap,
                });
            }
        }
        self.messages += 1;
        self.words_moved += words as u64;
        self.cp_messages += 1;
        self.cp_words += words as u64;
        let p = self.proc_mut(0);
        p.messages += 1;
        p.words_moved += words as u64;
        Ok(())
    }

    /// Critical-path charge for one reduction/broadcast step: the edge is
    /// counted once, with the stated message count and payload.
    pub fn record_critical_path_comm(&mut self, messages: u64, words: u64) {
        self.cp_messages += messages;
        self.cp_words += words;
    }

    pub fn record_critical_path_flops(&mut self, flops: u64, divisions: u64) {
        self.cp_flops += flops;
        self.cp_divisions += divisions;
    }

    /// Merges a scratch ledger produced by an instrumented kernel into
    /// processor `proc`'s ledger (totals included).
    pub fn absorb_local(&mut self, proc: usize, local: &CommCounters) {
        self.record_flops(proc, local.mults, local.flops - local.mults, local.divisions);
    }
}

/// Machine parameters of the cost model
/// time = gamma*flops + gamma_d*divisions + beta*words + alpha*messages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    /// seconds per message
    pub alpha: f64,
    /// seconds per word
    pub beta: f64,
    /// seconds per flop
    pub gamma: f64,
    /// seconds per division
    pub gamma_d: f64,
    /// fast memory capacity in words
    pub fast_mem: usize,
    /// processor count
    pub procs: usize,
}

impl MachineParams {
    pub fn unit(fast_mem: usize, procs: usize) -> Self {
        MachineParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            gamma_d: 1.0,
            fast_mem,
            procs,
        }
    }
}

/// Predicted run time from totals.
pub fn predicted_time(c: &CommCounters, p: &MachineParams) -> f64 {
    p.gamma * c.flops as f64
        + p.gamma_d * c.divisions as f64
        + p.beta * c.words_moved as f64
        + p.alpha * c.messages as f64
}

/// Predicted run time from the critical-path variants (parallel runs).
pub fn predicted_time_critical_path(c: &CommCounters, p: &MachineParams) -> f64 {
    p.gamma * c.cp_flops as f64
        + p.gamma_d * c.cp_divisions as f64
        + p.beta * c.cp_words as f64
        + p.alpha * c.cp_messages as f64
}

/// High-water-mark gauge for fast-memory residency in sequential drivers.
#[derive(Debug, Clone)]
pub struct FastMemGauge {
    resident: usize,
    high_water: usize,
    capacity: usize,
}

impl FastMemGauge {
    pub fn new(capacity: usize) -> Self {
        FastMemGauge {
            resident: 0,
            high_water: 0,
            capacity,
        }
    }

    pub fn acquire(&mut self, words: usize) -> Result<()> {
        self.resident += words;
        self.high_water = self.high_water.max(self.resident);
        if self.resident > self.capacity {
            return Err(Error::CapacityExceeded {
                needed: self.resident,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    pub fn release(&mut self, words: usize) {
        debug_assert!(self.resident >= words);
        self.resident = self.resident.saturating_sub(words);
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }
}
