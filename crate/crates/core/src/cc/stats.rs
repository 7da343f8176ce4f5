use serde::Serialize;

use super::TimingConfig;

/// Why the FPU did not issue in a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpuStall {
    /// Nothing queued.
    Empty,
    /// FREP at the head but its body is not fully queued yet.
    FrepFill,
    /// A stream-mapped source has no data.
    StreamEmpty,
    Raw,
    Waw,
    /// A stream-mapped destination has no free FIFO slot.
    WriteCredit,
    /// A load/store lost its memory port.
    Port,
    /// Waiting at a cluster barrier.
    Barrier,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FpuStalls {
    pub empty: u64,
    pub frep_fill: u64,
    pub stream_empty: u64,
    pub raw: u64,
    pub waw: u64,
    pub write_credit: u64,
    pub port: u64,
    pub barrier: u64,
}

impl FpuStalls {
    pub fn add(&mut self, reason: FpuStall, n: u64) {
        let slot = match reason {
            FpuStall::Empty => &mut self.empty,
            FpuStall::FrepFill => &mut self.frep_fill,
            FpuStall::StreamEmpty => &mut self.stream_empty,
            FpuStall::Raw => &mut self.raw,
            FpuStall::Waw => &mut self.waw,
            FpuStall::WriteCredit => &mut self.write_credit,
            FpuStall::Port => &mut self.port,
            FpuStall::Barrier => &mut self.barrier,
        };
        *slot += n;
    }

    pub fn total(&self) -> u64 {
        self.empty
            + self.frep_fill
            + self.stream_empty
            + self.raw
            + self.waw
            + self.write_credit
            + self.port
            + self.barrier
    }
}

/// Why the integer core did not execute an instruction in a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreStall {
    /// A source register waits for a load.
    LoadUse,
    QueueFull,
    Port,
    FpSync,
    /// Both job slots of the target stream are occupied.
    Launch,
    Halted,
    Barrier,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CoreStalls {
    pub load_use: u64,
    pub queue_full: u64,
    pub port: u64,
    pub fp_sync: u64,
    pub launch: u64,
    pub halted: u64,
    pub barrier: u64,
}

impl CoreStalls {
    pub fn add(&mut self, reason: CoreStall, n: u64) {
        let slot = match reason {
            CoreStall::LoadUse => &mut self.load_use,
            CoreStall::QueueFull => &mut self.queue_full,
            CoreStall::Port => &mut self.port,
            CoreStall::FpSync => &mut self.fp_sync,
            CoreStall::Launch => &mut self.launch,
            CoreStall::Halted => &mut self.halted,
            CoreStall::Barrier => &mut self.barrier,
        };
        *slot += n;
    }

    pub fn total(&self) -> u64 {
        self.load_use + self.queue_full + self.port + self.fp_sync + self.launch + self.halted + self.barrier
    }
}

/// Per-run counters. Every cycle is accounted exactly once on the FPU side
/// (`fpu_busy + fpu_stalls.total() == cycles`) and once on the core side
/// (`core_instructions + core_stalls.total() == cycles`).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CycleStats {
    pub cycles: u64,
    pub fmadds: u64,
    pub fmuls: u64,
    pub fadds: u64,
    pub fmvs: u64,
    pub flds: u64,
    pub fsds: u64,
    pub fpu_busy: u64,
    pub fpu_stalls: FpuStalls,
    pub core_instructions: u64,
    pub core_stalls: CoreStalls,
    /// Requests presented on the shared port and on the ISSR port.
    pub port_requests: [u64; 2],
    /// Of those, requests that lost memory arbitration (request-cycles).
    pub port_conflicts: [u64; 2],
    pub stream_data_requests: [u64; 2],
    pub stream_index_requests: [u64; 2],
    pub timing: TimingConfig,
}

impl CycleStats {
    pub fn with_timing(timing: TimingConfig) -> Self {
        Self { timing, ..Self::default() }
    }

    /// Multiply-accumulate-class operations (FMADD, FMUL, FADD).
    pub fn fp_ops(&self) -> u64 {
        self.fmadds + self.fmuls + self.fadds
    }

    pub fn utilization(&self) -> f64 {
        ratio(self.fp_ops(), self.cycles)
    }

    /// Utilization counting only product-forming operations, so accumulator
    /// reduction adds do not count as useful work.
    pub fn utilization_reduction_free(&self) -> f64 {
        ratio(self.fmadds + self.fmuls, self.cycles)
    }

    pub fn accounting_consistent(&self) -> bool {
        self.fpu_busy + self.fpu_stalls.total() == self.cycles
            && self.core_instructions + self.core_stalls.total() == self.cycles
    }

    /// Counter-wise sum, used for cluster aggregates.
    pub fn accumulate(&mut self, o: &CycleStats) {
        self.cycles += o.cycles;
        self.fmadds += o.fmadds;
        self.fmuls += o.fmuls;
        self.fadds += o.fadds;
        self.fmvs += o.fmvs;
        self.flds += o.flds;
        self.fsds += o.fsds;
        self.fpu_busy += o.fpu_busy;
        let (a, b) = (&mut self.fpu_stalls, &o.fpu_stalls);
        a.empty += b.empty;
        a.frep_fill += b.frep_fill;
        a.stream_empty += b.stream_empty;
        a.raw += b.raw;
        a.waw += b.waw;
        a.write_credit += b.write_credit;
        a.port += b.port;
        a.barrier += b.barrier;
        self.core_instructions += o.core_instructions;
        let (a, b) = (&mut self.core_stalls, &o.core_stalls);
        a.load_use += b.load_use;
        a.queue_full += b.queue_full;
        a.port += b.port;
        a.fp_sync += b.fp_sync;
        a.launch += b.launch;
        a.halted += b.halted;
        a.barrier += b.barrier;
        for p in 0..2 {
            self.port_requests[p] += o.port_requests[p];
            self.port_conflicts[p] += o.port_conflicts[p];
            self.stream_data_requests[p] += o.stream_data_requests[p];
            self.stream_index_requests[p] += o.stream_index_requests[p];
        }
        self.timing = o.timing;
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Speedup of `variant` over `baseline`, refusing runs whose results
/// disagree beyond `rel_tol` (relative to the largest result magnitude).
pub fn compare_runs(
    baseline: (&CycleStats, &[f64]),
    variant: (&CycleStats, &[f64]),
    rel_tol: f64,
) -> Result<f64, String> {
    let (bs, br) = baseline;
    let (vs, vr) = variant;
    if br.len() != vr.len() {
        return Err(format!("result lengths differ: {} vs {}", br.len(), vr.len()));
    }
    let scale = br.iter().chain(vr).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for (i, (a, b)) in br.iter().zip(vr).enumerate() {
        if (a - b).abs() > rel_tol * scale {
            return Err(format!("result {i} differs: {a} vs {b}"));
        }
    }
    Ok(ratio(bs.cycles, vs.cycles))
}

pub const STATS_CSV_HEADER: &[&str] = &[
    "kernel",
    "variant",
    "w",
    "size",
    "cycles",
    "fmadds",
    "utilization",
    "utilization_reduction_free",
    "speedup_vs_base",
    "fpu_busy",
    "stall_empty",
    "stall_frep_fill",
    "stall_stream_empty",
    "stall_raw",
    "stall_waw",
    "stall_write_credit",
    "stall_port",
    "stall_barrier",
    "core_stall_load_use",
    "core_stall_queue_full",
    "core_stall_port",
    "port_conflicts",
    "fpu_latency",
    "fpu_queue_depth",
    "data_fifo_depth",
];

/// One CSV row of the documented stats schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub kernel: String,
    pub variant: String,
    pub w: u32,
    /// Nonzero count, mean nonzeros per row, or matrix name.
    pub size: String,
    pub cycles: u64,
    pub fmadds: u64,
    pub utilization: f64,
    pub utilization_reduction_free: f64,
    /// Empty when no baseline run exists.
    pub speedup_vs_base: Option<f64>,
    pub fpu_busy: u64,
    pub stall_empty: u64,
    pub stall_frep_fill: u64,
    pub stall_stream_empty: u64,
    pub stall_raw: u64,
    pub stall_waw: u64,
    pub stall_write_credit: u64,
    pub stall_port: u64,
    pub stall_barrier: u64,
    pub core_stall_load_use: u64,
    pub core_stall_queue_full: u64,
    pub core_stall_port: u64,
    pub port_conflicts: u64,
    pub fpu_latency: u32,
    pub fpu_queue_depth: usize,
    pub data_fifo_depth: usize,
}

impl StatsRow {
    pub fn new(kernel: &str, variant: &str, w: u32, size: impl Into<String>, s: &CycleStats) -> Self {
        Self {
            kernel: kernel.to_string(),
            variant: variant.to_string(),
            w,
            size: size.into(),
            cycles: s.cycles,
            fmadds: s.fmadds,
            utilization: s.utilization(),
            utilization_reduction_free: s.utilization_reduction_free(),
            speedup_vs_base: None,
            fpu_busy: s.fpu_busy,
            stall_empty: s.fpu_stalls.empty,
            stall_frep_fill: s.fpu_stalls.frep_fill,
            stall_stream_empty: s.fpu_stalls.stream_empty,
            stall_raw: s.fpu_stalls.raw,
            stall_waw: s.fpu_stalls.waw,
            stall_write_credit: s.fpu_stalls.write_credit,
            stall_port: s.fpu_stalls.port,
            stall_barrier: s.fpu_stalls.barrier,
            core_stall_load_use: s.core_stalls.load_use,
            core_stall_queue_full: s.core_stalls.queue_full,
            core_stall_port: s.core_stalls.port,
            port_conflicts: s.port_conflicts[0] + s.port_conflicts[1],
            fpu_latency: s.timing.fpu_latency,
            fpu_queue_depth: s.timing.fpu_queue_depth,
            data_fifo_depth: s.timing.data_fifo_depth,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_comparison_is_unit_speedup() {
        let s = CycleStats { cycles: 120, ..CycleStats::default() };
        assert_eq!(compare_runs((&s, &[1.0, 2.0]), (&s, &[1.0, 2.0]), 1e-12), Ok(1.0));
    }

    #[test]
    fn mismatching_results_refused() {
        let s = CycleStats { cycles: 10, ..CycleStats::default() };
        assert!(compare_runs((&s, &[1.0]), (&s, &[1.5]), 1e-10).is_err());
    }
}
