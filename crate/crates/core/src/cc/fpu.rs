use std::collections::VecDeque;

use super::stats::{CycleStats, FpuStall};
use super::{FaultKind, TimingConfig};
use crate::isa::{FReg, Instruction, StaggerMask, NUM_FREGS};
use crate::mem::{check_access, MemRequest, Memory};
use crate::stream::StreamUnit;

/// An offloaded instruction with its integer operands resolved by the core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum FpOp {
    Compute(Instruction),
    Fld { fd: FReg, addr: u64 },
    Fsd { fs: FReg, addr: u64 },
    Enable,
    Disable,
    Frep { count: u64, body_len: u8, stagger_count: u8, mask: StaggerMask },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct QueuedOp {
    pub op: FpOp,
    pub pc: usize,
}

#[derive(Debug, Clone)]
struct FrepState {
    body: Vec<QueuedOp>,
    total: u64,
    iter: u64,
    pos: usize,
    stagger_count: u8,
    mask: StaggerMask,
}

impl FrepState {
    fn current(&self) -> QueuedOp {
        let q = self.body[self.pos];
        let by = (self.iter % (u64::from(self.stagger_count) + 1)) as u8;
        match q.op {
            FpOp::Compute(ins) => QueuedOp { op: FpOp::Compute(ins.staggered(self.mask, by)), pc: q.pc },
            _ => q,
        }
    }

    /// Returns false once the last iteration has been issued.
    fn advance(&mut self) -> bool {
        self.pos += 1;
        if self.pos == self.body.len() {
            self.pos = 0;
            self.iter += 1;
        }
        self.iter < self.total
    }
}

/// What the FPU will do this cycle, decided in the propose phase.
#[derive(Debug, Clone, Copy)]
pub(crate) enum FpuPlan {
    Stall(FpuStall),
    Issue { op: QueuedOp, from_frep: bool },
    Mem { op: QueuedOp, req: MemRequest },
}

#[derive(Debug, Clone)]
pub(crate) struct Fpu {
    queue: VecDeque<QueuedOp>,
    depth: usize,
    frep: Option<FrepState>,
    regs: [u64; NUM_FREGS],
    ready: [u64; NUM_FREGS],
    latest_ready: u64,
    enabled: bool,
    /// (cycle, unit, value) results waiting to enter a write stream.
    pushes: VecDeque<(u64, u8, u64)>,
}

fn mapped(enabled: bool, r: FReg) -> Option<usize> {
    (enabled && r.index() < 2).then_some(r.index())
}

impl Fpu {
    pub fn new(depth: usize) -> Self {
        Self {
            queue: VecDeque::with_capacity(depth),
            depth,
            frep: None,
            regs: [0; NUM_FREGS],
            ready: [0; NUM_FREGS],
            latest_ready: 0,
            enabled: false,
            pushes: VecDeque::new(),
        }
    }

    pub fn has_queue_space(&self) -> bool {
        self.queue.len() < self.depth
    }

    pub fn enqueue(&mut self, op: QueuedOp) {
        debug_assert!(self.has_queue_space());
        self.queue.push_back(op);
    }

    pub fn reg(&self, r: usize) -> f64 {
        f64::from_bits(self.regs[r])
    }

    pub fn set_reg(&mut self, r: usize, v: f64) {
        self.regs[r] = v.to_bits();
    }

    pub fn is_idle(&self, now: u64) -> bool {
        self.queue.is_empty() && self.frep.is_none() && self.pushes.is_empty() && self.latest_ready <= now
    }

    pub fn head_description(&self) -> String {
        if let Some(f) = &self.frep {
            return format!("frep body {:?} (iteration {}/{})", f.current().op, f.iter, f.total);
        }
        self.queue.front().map_or_else(|| "empty".to_string(), |q| format!("{:?} from instruction {}", q.op, q.pc))
    }

    /// Move results whose latency elapsed into their write streams.
    pub fn retire_pushes(&mut self, now: u64, units: &mut [StreamUnit; 2]) -> bool {
        let mut any = false;
        while let Some(&(t, u, v)) = self.pushes.front() {
            if t > now {
                break;
            }
            units[usize::from(u)].push_write(v);
            self.pushes.pop_front();
            any = true;
        }
        any
    }

    pub fn plan(&mut self, now: u64, units: &[StreamUnit; 2], mem_bytes: u64) -> Result<FpuPlan, FaultKind> {
        let (q, from_frep) = loop {
            if let Some(f) = &self.frep {
                break (f.current(), true);
            }
            let Some(head) = self.queue.front().copied() else {
                return Ok(FpuPlan::Stall(FpuStall::Empty));
            };
            let FpOp::Frep { count, body_len, stagger_count, mask } = head.op else {
                break (head, false);
            };
            let n = usize::from(body_len);
            if self.queue.len() < 1 + n {
                return Ok(FpuPlan::Stall(FpuStall::FrepFill));
            }
            self.queue.pop_front();
            let body: Vec<QueuedOp> = self.queue.drain(..n).collect();
            if count > 0 {
                self.frep = Some(FrepState { body, total: count, iter: 0, pos: 0, stagger_count, mask });
            }
        };
        let ready = |r: FReg| self.ready[r.index()] <= now;
        Ok(match q.op {
            FpOp::Compute(ins) => {
                let (fd, srcs) = operands(&ins);
                let mut need = [0u64; 2];
                for s in srcs.into_iter().flatten() {
                    match mapped(self.enabled, s) {
                        Some(u) => need[u] += 1,
                        None if !ready(s) => return Ok(FpuPlan::Stall(FpuStall::Raw)),
                        None => {}
                    }
                }
                if (0..2).any(|u| need[u] > 0 && units[u].readable() < need[u]) {
                    return Ok(FpuPlan::Stall(FpuStall::StreamEmpty));
                }
                match mapped(self.enabled, fd) {
                    Some(u) if units[u].write_credits() == 0 => FpuPlan::Stall(FpuStall::WriteCredit),
                    None if !ready(fd) => FpuPlan::Stall(FpuStall::Waw),
                    _ => FpuPlan::Issue { op: q, from_frep },
                }
            }
            FpOp::Fld { fd, addr } => {
                match mapped(self.enabled, fd) {
                    Some(u) if units[u].write_credits() == 0 => return Ok(FpuPlan::Stall(FpuStall::WriteCredit)),
                    None if !ready(fd) => return Ok(FpuPlan::Stall(FpuStall::Waw)),
                    _ => {}
                }
                let req = MemRequest::read(addr, 8);
                check_access(&req, mem_bytes)?;
                FpuPlan::Mem { op: q, req }
            }
            FpOp::Fsd { fs, addr } => {
                let value = match mapped(self.enabled, fs) {
                    Some(u) => match units[u].peek() {
                        Some(v) if units[u].readable() > 0 => v,
                        _ => return Ok(FpuPlan::Stall(FpuStall::StreamEmpty)),
                    },
                    None if !ready(fs) => return Ok(FpuPlan::Stall(FpuStall::Raw)),
                    None => self.regs[fs.index()],
                };
                let req = MemRequest::write(addr, 8, value);
                check_access(&req, mem_bytes)?;
                FpuPlan::Mem { op: q, req }
            }
            FpOp::Enable | FpOp::Disable => FpuPlan::Issue { op: q, from_frep },
            FpOp::Frep { .. } => unreachable!("frep is consumed by the sequencer"),
        })
    }

    fn write_result(&mut self, fd: FReg, bits: u64, ready_at: u64, units: &mut [StreamUnit; 2]) {
        match mapped(self.enabled, fd) {
            Some(u) => {
                units[u].reserve_write();
                self.pushes.push_back((ready_at, u as u8, bits));
            }
            None => {
                self.regs[fd.index()] = bits;
                self.ready[fd.index()] = ready_at;
            }
        }
        self.latest_ready = self.latest_ready.max(ready_at);
    }

    fn read_src(&self, r: FReg, units: &mut [StreamUnit; 2]) -> f64 {
        match mapped(self.enabled, r) {
            Some(u) => f64::from_bits(units[u].read()),
            None => f64::from_bits(self.regs[r.index()]),
        }
    }

    /// Carry out the planned action. `granted` tells whether a memory plan
    /// won the port this cycle. Returns whether an instruction issued.
    pub fn execute(
        &mut self,
        plan: FpuPlan,
        granted: bool,
        now: u64,
        timing: &TimingConfig,
        units: &mut [StreamUnit; 2],
        mem: &mut Memory,
        stats: &mut CycleStats,
    ) -> bool {
        let q = match plan {
            FpuPlan::Stall(reason) => {
                stats.fpu_stalls.add(reason, 1);
                return false;
            }
            FpuPlan::Mem { .. } if !granted => {
                stats.fpu_stalls.add(FpuStall::Port, 1);
                return false;
            }
            FpuPlan::Issue { op, .. } | FpuPlan::Mem { op, .. } => op,
        };
        match q.op {
            FpOp::Compute(ins) => {
                let l = u64::from(timing.fpu_latency);
                let (fd, bits, lat) = match ins {
                    Instruction::FmaddD { fd, fs1, fs2, fs3 } => {
                        let a = self.read_src(fs1, units);
                        let b = self.read_src(fs2, units);
                        let c = self.read_src(fs3, units);
                        stats.fmadds += 1;
                        (fd, a.mul_add(b, c).to_bits(), l)
                    }
                    Instruction::FaddD { fd, fs1, fs2 } => {
                        let a = self.read_src(fs1, units);
                        let b = self.read_src(fs2, units);
                        stats.fadds += 1;
                        (fd, (a + b).to_bits(), l)
                    }
                    Instruction::FmulD { fd, fs1, fs2 } => {
                        let a = self.read_src(fs1, units);
                        let b = self.read_src(fs2, units);
                        stats.fmuls += 1;
                        (fd, (a * b).to_bits(), l)
                    }
                    Instruction::FmvZero { fd } => {
                        stats.fmvs += 1;
                        (fd, 0, 1)
                    }
                    other => unreachable!("not an FP compute instruction: {other:?}"),
                };
                self.write_result(fd, bits, now + lat, units);
            }
            FpOp::Fld { fd, addr } => {
                let bits = mem.read_u64(addr);
                stats.flds += 1;
                self.write_result(fd, bits, now + u64::from(timing.fld_latency), units);
            }
            FpOp::Fsd { fs, addr } => {
                let bits = self.read_src(fs, units).to_bits();
                mem.write_u64(addr, bits);
                stats.fsds += 1;
            }
            FpOp::Enable => self.enabled = true,
            FpOp::Disable => self.enabled = false,
            FpOp::Frep { .. } => unreachable!(),
        }
        match plan {
            FpuPlan::Issue { from_frep: true, .. } => {
                let more = self.frep.as_mut().is_some_and(|f| f.advance());
                if !more {
                    self.frep = None;
                }
            }
            _ => {
                self.queue.pop_front();
            }
        }
        stats.fpu_busy += 1;
        true
    }
}

/// Destination and source registers of an FP compute instruction.
fn operands(ins: &Instruction) -> (FReg, [Option<FReg>; 3]) {
    match *ins {
        Instruction::FmaddD { fd, fs1, fs2, fs3 } => (fd, [Some(fs1), Some(fs2), Some(fs3)]),
        Instruction::FaddD { fd, fs1, fs2 } | Instruction::FmulD { fd, fs1, fs2 } => (fd, [Some(fs1), Some(fs2), None]),
        Instruction::FmvZero { fd } => (fd, [None; 3]),
        ref other => unreachable!("not an FP compute instruction: {other:?}"),
    }
}
