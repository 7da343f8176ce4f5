//! Core complex timing model: a single-issue integer core, the FPU
//! subsystem with its instruction queue and FREP sequencer, and two stream
//! units (an affine SSR on `f0`, an indirection-capable ISSR on `f1`).
//!
//! Every cycle runs in two phases so several complexes can share a banked
//! memory: [`CoreComplex::propose`] presents at most one request per port,
//! the memory arbitrates, and [`CoreComplex::commit`] applies the grants.

mod complex;
mod fpu;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::Program;
use crate::mem::{Arbiter, IdealMemory, MemFault, Memory, PortRequest};
use crate::stream::StreamFault;

pub use complex::CoreComplex;
pub use stats::{compare_runs, CoreStalls, CycleStats, FpuStalls, StatsRow, STATS_CSV_HEADER};

/// Timing knobs shared by every complex in a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Latency of FMADD/FADD/FMUL, fully pipelined.
    pub fpu_latency: u32,
    /// Cycles from an FLD grant until the register is usable.
    pub fld_latency: u32,
    /// Cycles from an integer load grant until the register is usable.
    pub load_latency: u32,
    pub fpu_queue_depth: usize,
    pub data_fifo_depth: usize,
    pub index_fifo_depth: usize,
    /// Width of data addresses accepted by the core and the streams.
    pub addr_bits: u32,
    /// Cycles without any progress before the run is declared deadlocked.
    pub deadlock_cycles: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            fpu_latency: 4,
            fld_latency: 2,
            load_latency: 2,
            fpu_queue_depth: 8,
            data_fifo_depth: 5,
            index_fifo_depth: 4,
            addr_bits: 24,
            deadlock_cycles: 10_000,
        }
    }
}

impl TimingConfig {
    pub fn memory_bytes(&self) -> u64 {
        1u64 << self.addr_bits
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultKind {
    #[error(transparent)]
    Stream(#[from] StreamFault),
    #[error(transparent)]
    Memory(#[from] MemFault),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("cycle {cycle}, instruction {pc}: {kind}")]
    Fault { cycle: u64, pc: usize, kind: FaultKind },
    #[error(
        "deadlock: no progress for {idle} cycles at cycle {cycle} (core at instruction {pc}, FPU head {fpu_head})"
    )]
    Deadlock { cycle: u64, pc: usize, idle: u64, fpu_head: String },
    #[error("cycle limit {0} exceeded")]
    CycleLimit(u64),
}

/// Run `program` on one complex attached to an ideal two-port memory until
/// the core has halted, the FPU drained and all stream writes landed.
pub fn simulate_cc(
    program: &Program,
    timing: &TimingConfig,
    mut mem: Memory,
) -> Result<(Memory, CycleStats), SimError> {
    let mut cc = CoreComplex::new(0, *timing);
    cc.load_program(program.clone());
    run_to_quiescence(&mut cc, &mut mem, &mut IdealMemory, u64::MAX)?;
    let stats = cc.stats().clone();
    Ok((mem, stats))
}

/// Step a single complex against `arbiter` until quiescent.
pub fn run_to_quiescence(
    cc: &mut CoreComplex,
    mem: &mut Memory,
    arbiter: &mut dyn Arbiter,
    max_cycles: u64,
) -> Result<(), SimError> {
    let mut reqs = Vec::with_capacity(2);
    let mut grants = Vec::with_capacity(2);
    while !cc.is_quiescent() {
        if cc.cycle() >= max_cycles {
            return Err(SimError::CycleLimit(max_cycles));
        }
        let ports = cc.propose()?;
        reqs.clear();
        let mut which = [usize::MAX; 2];
        for (p, r) in ports.iter().enumerate() {
            if let Some(req) = r {
                which[p] = reqs.len();
                reqs.push(PortRequest { requester: p as u16, req: *req });
            }
        }
        arbiter.arbitrate(cc.cycle(), &reqs, &mut grants);
        let g = [which[0] != usize::MAX && grants[which[0]], which[1] != usize::MAX && grants[which[1]]];
        cc.commit(g, mem)?;
    }
    Ok(())
}

/// Smallest accumulator count hiding the FPU latency at a given peak issue rate.
pub fn accumulators_for(latency: u32, peak_num: u32, peak_den: u32) -> u8 {
    (latency * peak_num).div_ceil(peak_den).max(1) as u8
}
