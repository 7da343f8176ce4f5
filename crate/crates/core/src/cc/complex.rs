use std::sync::Arc;

use super::fpu::{FpOp, Fpu, FpuPlan, QueuedOp};
use super::stats::{CoreStall, CycleStats, FpuStall};
use super::{FaultKind, SimError, TimingConfig};
use crate::isa::{Instruction, Program, XReg, NUM_XREGS};
use crate::mem::{check_access, MemOp, MemRequest, Memory};
use crate::stream::{config_reg, PortGrant, StreamUnit, ISSR_UNIT, SSR_UNIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CorePlan {
    Stall(CoreStall),
    Exec,
    Mem(MemRequest),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    None,
    Fpu,
    Core,
    Stream,
}

/// One core complex: integer core, FPU subsystem and two stream units.
#[derive(Debug, Clone)]
pub struct CoreComplex {
    id: usize,
    timing: TimingConfig,
    program: Arc<Program>,
    pc: usize,
    x: [u64; NUM_XREGS],
    x_ready: [u64; NUM_XREGS],
    halted: bool,
    fpu: Fpu,
    units: [StreamUnit; 2],
    cycle: u64,
    stats: CycleStats,
    fpu_plan: FpuPlan,
    core_plan: CorePlan,
    owner: Owner,
    stream_proposed: [bool; 2],
    responses: Vec<(usize, PortGrant, u64)>,
    last_progress: u64,
}

impl CoreComplex {
    pub fn new(id: usize, timing: TimingConfig) -> Self {
        let unit = |u: u8, ind: bool| {
            StreamUnit::new(u, ind, timing.addr_bits, timing.data_fifo_depth, timing.index_fifo_depth)
        };
        let halt = Program::new(vec![Instruction::Halt], Default::default()).expect("halt-only program is valid");
        Self {
            id,
            timing,
            program: Arc::new(halt),
            pc: 0,
            x: [0; NUM_XREGS],
            x_ready: [0; NUM_XREGS],
            halted: true,
            fpu: Fpu::new(timing.fpu_queue_depth),
            units: [unit(SSR_UNIT, false), unit(ISSR_UNIT, true)],
            cycle: 0,
            stats: CycleStats::with_timing(timing),
            fpu_plan: FpuPlan::Stall(FpuStall::Empty),
            core_plan: CorePlan::Stall(CoreStall::Halted),
            owner: Owner::None,
            stream_proposed: [false; 2],
            responses: Vec::with_capacity(2),
            last_progress: 0,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Start executing `program` from its entry at the current cycle.
    pub fn load_program(&mut self, program: impl Into<Arc<Program>>) {
        self.program = program.into();
        self.pc = self.program.entry();
        self.halted = false;
        self.last_progress = self.cycle;
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn stats(&self) -> &CycleStats {
        &self.stats
    }

    pub fn timing(&self) -> &TimingConfig {
        &self.timing
    }

    pub fn xreg(&self, r: usize) -> u64 {
        self.x[r]
    }

    pub fn set_xreg(&mut self, r: usize, v: u64) {
        if r != 0 {
            self.x[r] = v;
        }
    }

    pub fn freg(&self, r: usize) -> f64 {
        self.fpu.reg(r)
    }

    pub fn set_freg(&mut self, r: usize, v: f64) {
        self.fpu.set_reg(r, v);
    }

    pub fn unit(&self, u: u8) -> &StreamUnit {
        &self.units[usize::from(u)]
    }

    pub fn unit_mut(&mut self, u: u8) -> &mut StreamUnit {
        &mut self.units[usize::from(u)]
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Halted, FPU drained and every stream write has reached memory.
    pub fn is_quiescent(&self) -> bool {
        self.halted && self.fpu.is_idle(self.cycle) && !self.units.iter().any(|u| u.has_pending_writes())
    }

    fn fault(&self, kind: impl Into<FaultKind>) -> SimError {
        SimError::Fault { cycle: self.cycle, pc: self.pc, kind: kind.into() }
    }

    fn xready(&self, r: XReg) -> bool {
        self.x_ready[r.index()] <= self.cycle
    }

    fn xval(&self, r: XReg) -> u64 {
        self.x[r.index()]
    }

    fn set_x(&mut self, r: XReg, v: u64, ready_at: u64) {
        if r.index() != 0 {
            self.x[r.index()] = v;
            self.x_ready[r.index()] = ready_at;
        }
    }

    fn plan_core(&self) -> Result<CorePlan, SimError> {
        use Instruction::*;
        if self.halted {
            return Ok(CorePlan::Stall(CoreStall::Halted));
        }
        let ins = self.program.instructions()[self.pc];
        let wait = |regs: &[XReg]| regs.iter().any(|r| !self.xready(*r));
        let addr = |base: XReg, off: i32| self.xval(base).wrapping_add(off as i64 as u64);
        let plan = match ins {
            Add { rs1, rs2, .. } | Sub { rs1, rs2, .. } | Bne { rs1, rs2, .. } | Blt { rs1, rs2, .. } => {
                if wait(&[rs1, rs2]) {
                    CorePlan::Stall(CoreStall::LoadUse)
                } else {
                    CorePlan::Exec
                }
            }
            Addi { rs1, .. } | Slli { rs1, .. } if wait(&[rs1]) => CorePlan::Stall(CoreStall::LoadUse),
            Addi { .. } | Slli { .. } | Jump { .. } | Halt => CorePlan::Exec,
            Lw { base, offset, .. } | Lh { base, offset, .. } => {
                if wait(&[base]) {
                    CorePlan::Stall(CoreStall::LoadUse)
                } else {
                    let size = if matches!(ins, Lw { .. }) { 4 } else { 2 };
                    let req = MemRequest::read(addr(base, offset), size);
                    check_access(&req, self.timing.memory_bytes()).map_err(|e| self.fault(e))?;
                    CorePlan::Mem(req)
                }
            }
            Sw { src, base, offset } => {
                if wait(&[src, base]) {
                    CorePlan::Stall(CoreStall::LoadUse)
                } else {
                    let req = MemRequest::write(addr(base, offset), 4, self.xval(src) & 0xffff_ffff);
                    check_access(&req, self.timing.memory_bytes()).map_err(|e| self.fault(e))?;
                    CorePlan::Mem(req)
                }
            }
            Fld { base, .. } | Fsd { base, .. } if wait(&[base]) => CorePlan::Stall(CoreStall::LoadUse),
            Frep { count, .. } if wait(&[count]) => CorePlan::Stall(CoreStall::LoadUse),
            _ if ins.is_offloaded() => {
                if self.fpu.has_queue_space() {
                    CorePlan::Exec
                } else {
                    CorePlan::Stall(CoreStall::QueueFull)
                }
            }
            Scfgw { value, unit, reg } => {
                if wait(&[value]) {
                    CorePlan::Stall(CoreStall::LoadUse)
                } else if reg == config_reg::DATA_BASE && !self.units[usize::from(unit)].can_launch() {
                    CorePlan::Stall(CoreStall::Launch)
                } else {
                    CorePlan::Exec
                }
            }
            FpSync => {
                if self.fpu.is_idle(self.cycle) {
                    CorePlan::Exec
                } else {
                    CorePlan::Stall(CoreStall::FpSync)
                }
            }
            other => unreachable!("unhandled instruction {other:?}"),
        };
        Ok(plan)
    }

    /// First phase of a cycle: deliver last cycle's responses, decide what
    /// the FPU and core attempt, and return the shared-port and ISSR-port
    /// requests.
    pub fn propose(&mut self) -> Result<[Option<MemRequest>; 2], SimError> {
        let now = self.cycle;
        let mut progress = !self.responses.is_empty();
        for (u, kind, v) in self.responses.drain(..) {
            match kind {
                PortGrant::Index => self.units[u].deliver_index(v),
                PortGrant::Data => self.units[u].deliver_data(v),
            }
        }
        progress |= self.fpu.retire_pushes(now, &mut self.units);
        for u in &mut self.units {
            u.begin_cycle();
        }
        if progress {
            self.last_progress = now;
        }

        self.fpu_plan = self.fpu.plan(now, &self.units, self.timing.memory_bytes()).map_err(|e| self.fault(e))?;
        self.core_plan = self.plan_core()?;

        let mut ports = [None, None];
        self.owner = Owner::None;
        if let FpuPlan::Mem { req, .. } = self.fpu_plan {
            self.owner = Owner::Fpu;
            ports[0] = Some(req);
        } else if let CorePlan::Mem(req) = self.core_plan {
            self.owner = Owner::Core;
            ports[0] = Some(req);
        }
        self.stream_proposed = [false; 2];
        if self.owner == Owner::None {
            if let Some(req) = self.units[0].propose().map_err(|e| self.fault(e))? {
                self.owner = Owner::Stream;
                self.stream_proposed[0] = true;
                ports[0] = Some(req);
            }
        }
        if let Some(req) = self.units[1].propose().map_err(|e| self.fault(e))? {
            self.stream_proposed[1] = true;
            ports[1] = Some(req);
        }
        for (p, r) in ports.iter().enumerate() {
            if r.is_some() {
                self.stats.port_requests[p] += 1;
            }
        }
        Ok(ports)
    }

    /// Second phase: apply the memory grants and advance one cycle.
    pub fn commit(&mut self, grants: [bool; 2], mem: &mut Memory) -> Result<(), SimError> {
        let now = self.cycle;
        for p in 0..2 {
            let presented = if p == 0 { self.owner != Owner::None } else { self.stream_proposed[1] };
            if presented && !grants[p] {
                self.stats.port_conflicts[p] += 1;
            }
        }
        let mut progress = false;

        let fpu_granted = self.owner == Owner::Fpu && grants[0];
        progress |=
            self.fpu.execute(self.fpu_plan, fpu_granted, now, &self.timing, &mut self.units, mem, &mut self.stats);

        match self.core_plan {
            CorePlan::Stall(reason) => self.stats.core_stalls.add(reason, 1),
            CorePlan::Mem(_) if !(self.owner == Owner::Core && grants[0]) => {
                self.stats.core_stalls.add(CoreStall::Port, 1)
            }
            plan => {
                self.execute_core(plan, mem)?;
                self.stats.core_instructions += 1;
                progress = true;
            }
        }

        for u in 0..2 {
            let presented = if u == 0 { self.owner == Owner::Stream } else { self.stream_proposed[1] };
            if !presented {
                continue;
            }
            let granted = if u == 0 { grants[0] } else { grants[1] };
            if !granted {
                self.units[u].on_reject();
                continue;
            }
            let req = self.units[u].propose().map_err(|e| self.fault(e))?.expect("held request");
            let kind = self.units[u].on_grant(now);
            match kind {
                PortGrant::Index => self.stats.stream_index_requests[u] += 1,
                PortGrant::Data => self.stats.stream_data_requests[u] += 1,
            }
            let v = mem.access(&req);
            if req.op == MemOp::Read {
                self.responses.push((u, kind, v));
            }
            progress = true;
        }

        if progress {
            self.last_progress = now;
        } else if now - self.last_progress > self.timing.deadlock_cycles {
            return Err(SimError::Deadlock {
                cycle: now,
                pc: self.pc,
                idle: now - self.last_progress,
                fpu_head: self.fpu.head_description(),
            });
        }
        self.cycle += 1;
        self.stats.cycles = self.cycle;
        Ok(())
    }

    fn execute_core(&mut self, plan: CorePlan, mem: &mut Memory) -> Result<(), SimError> {
        use Instruction::*;
        let now = self.cycle;
        let ins = self.program.instructions()[self.pc];
        let mut next = self.pc + 1;
        match ins {
            Add { rd, rs1, rs2 } => self.set_x(rd, self.xval(rs1).wrapping_add(self.xval(rs2)), now + 1),
            Sub { rd, rs1, rs2 } => self.set_x(rd, self.xval(rs1).wrapping_sub(self.xval(rs2)), now + 1),
            Addi { rd, rs1, imm } => self.set_x(rd, self.xval(rs1).wrapping_add(imm as i64 as u64), now + 1),
            Slli { rd, rs1, shamt } => self.set_x(rd, self.xval(rs1) << shamt, now + 1),
            Lw { rd, .. } | Lh { rd, .. } => {
                let CorePlan::Mem(req) = plan else { unreachable!() };
                let v = mem.access(&req);
                self.set_x(rd, v, now + u64::from(self.timing.load_latency));
            }
            Sw { .. } => {
                let CorePlan::Mem(req) = plan else { unreachable!() };
                mem.access(&req);
            }
            Bne { rs1, rs2, target } => {
                if self.xval(rs1) != self.xval(rs2) {
                    next = target;
                }
            }
            Blt { rs1, rs2, target } => {
                if (self.xval(rs1) as i64) < (self.xval(rs2) as i64) {
                    next = target;
                }
            }
            Jump { target } => next = target,
            Fld { fd, base, offset } => {
                let addr = self.xval(base).wrapping_add(offset as i64 as u64);
                self.fpu.enqueue(QueuedOp { op: FpOp::Fld { fd, addr }, pc: self.pc });
            }
            Fsd { fs, base, offset } => {
                let addr = self.xval(base).wrapping_add(offset as i64 as u64);
                self.fpu.enqueue(QueuedOp { op: FpOp::Fsd { fs, addr }, pc: self.pc });
            }
            FmaddD { .. } | FaddD { .. } | FmulD { .. } | FmvZero { .. } => {
                self.fpu.enqueue(QueuedOp { op: FpOp::Compute(ins), pc: self.pc })
            }
            SsrEnable => self.fpu.enqueue(QueuedOp { op: FpOp::Enable, pc: self.pc }),
            SsrDisable => self.fpu.enqueue(QueuedOp { op: FpOp::Disable, pc: self.pc }),
            Frep { count, body_len, stagger_count, stagger_mask } => self.fpu.enqueue(QueuedOp {
                op: FpOp::Frep { count: self.xval(count), body_len, stagger_count, mask: stagger_mask },
                pc: self.pc,
            }),
            Scfgw { value, unit, reg } => {
                let v = self.xval(value);
                self.units[usize::from(unit)].write_config(reg, v).map_err(|e| self.fault(e))?;
            }
            FpSync => {}
            Halt => {
                self.halted = true;
                next = self.pc;
            }
        }
        self.pc = next;
        Ok(())
    }

    /// Account one cycle spent waiting outside the program (cluster barrier).
    pub fn idle_cycle(&mut self) {
        self.stats.fpu_stalls.add(FpuStall::Barrier, 1);
        self.stats.core_stalls.add(CoreStall::Barrier, 1);
        self.cycle += 1;
        self.stats.cycles = self.cycle;
        self.last_progress = self.cycle;
    }
}

#[cfg(test)]
mod tests {
    use super::super::simulate_cc;
    use super::*;
    use crate::isa::assemble;

    fn run(src: &str) -> (Memory, CycleStats) {
        let p = assemble(src).unwrap();
        simulate_cc(&p, &TimingConfig::default(), Memory::new()).unwrap()
    }

    #[test]
    fn halt_takes_one_cycle() {
        let (_, s) = run("halt");
        assert_eq!(s.cycles, 1);
        assert_eq!(s.fmadds, 0);
        assert!(s.accounting_consistent());
    }

    #[test]
    fn integer_ops_take_one_cycle_each() {
        let (_, s) = run("addi x1, x0, 5\naddi x2, x1, 1\nadd x3, x1, x2\nhalt");
        assert_eq!(s.cycles, 4);
    }

    #[test]
    fn load_use_slot_costs_one_cycle() {
        let (_, dep) = run("lw x1, 0(x0)\naddi x2, x1, 1\nhalt");
        let (_, indep) = run("lw x1, 0(x0)\naddi x2, x0, 1\naddi x3, x1, 1\nhalt");
        assert_eq!(dep.cycles, 4);
        assert_eq!(indep.cycles, 4);
    }

    #[test]
    fn single_fmadd_retires_after_latency() {
        // offload at 0, issue at 1, result ready at 5, store issues at 5.
        let (m, s) = run("fmadd.d f2, f3, f4, f5\nfsd f2, 64(x0)\nhalt");
        assert_eq!(s.cycles, 6);
        assert_eq!(m.read_f64(64), 0.0);
    }

    #[test]
    fn misaligned_load_faults() {
        let p = assemble("lw x1, 2(x0)\nhalt").unwrap();
        let err = simulate_cc(&p, &TimingConfig::default(), Memory::new()).unwrap_err();
        assert!(matches!(err, SimError::Fault { pc: 0, cycle: 0, .. }));
    }

    #[test]
    fn reading_an_unconfigured_stream_deadlocks() {
        let p = assemble("ssr.enable\nfmadd.d f2, f0, f0, f2\nhalt").unwrap();
        let t = TimingConfig { deadlock_cycles: 50, ..TimingConfig::default() };
        assert!(matches!(simulate_cc(&p, &t, Memory::new()), Err(SimError::Deadlock { .. })));
    }
}
