use std::collections::VecDeque;

use super::{
    arbitrate_port, AffineIter, ConfigRegs, Direction, IndirectGen, JobMode, PortGrant, RoundRobin, StreamFault,
    StreamJob,
};
use crate::mem::{MemOp, MemRequest};

#[derive(Debug, Clone)]
enum Gen {
    Affine(AffineIter),
    Indirect(IndirectGen),
}

impl Gen {
    fn peek(&self) -> Option<u64> {
        match self {
            Gen::Affine(g) => g.peek(),
            Gen::Indirect(g) => g.peek(),
        }
    }

    fn advance(&mut self) {
        match self {
            Gen::Affine(g) => g.advance(),
            Gen::Indirect(g) => g.advance(),
        }
    }

    fn exhausted(&self) -> bool {
        match self {
            Gen::Affine(g) => g.remaining() == 0,
            Gen::Indirect(g) => g.is_done(),
        }
    }
}

#[derive(Debug, Clone)]
struct ActiveJob {
    job: StreamJob,
    gen: Gen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Held {
    grant: PortGrant,
    req: MemRequest,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnitStats {
    pub jobs_completed: u64,
    pub index_requests: u64,
    pub data_requests: u64,
    /// Register reads served to the FPU, counting repeats.
    pub reads_served: u64,
    pub writes_accepted: u64,
    /// Cycles in which a proposed request was not granted by memory.
    pub conflict_cycles: u64,
}

/// One stream unit: shadow config registers, an active and a shadowed job,
/// the data FIFO and the request side of its memory port.
#[derive(Debug, Clone)]
pub struct StreamUnit {
    id: u8,
    indirection: bool,
    addr_bits: u32,
    fifo_depth: usize,
    index_fifo_depth: usize,
    cfg: ConfigRegs,
    active: Option<ActiveJob>,
    shadow: Option<StreamJob>,
    data_fifo: VecDeque<u64>,
    outstanding_data: usize,
    outstanding_index: usize,
    reserved_writes: usize,
    head_served: u32,
    rr: RoundRobin,
    held: Option<Held>,
    stats: UnitStats,
    trace: Option<Vec<u64>>,
}

impl StreamUnit {
    pub fn new(id: u8, indirection: bool, addr_bits: u32, fifo_depth: usize, index_fifo_depth: usize) -> Self {
        assert!(fifo_depth >= 1, "data FIFO needs at least one slot");
        Self {
            id,
            indirection,
            addr_bits,
            fifo_depth,
            index_fifo_depth,
            cfg: ConfigRegs::default(),
            active: None,
            shadow: None,
            data_fifo: VecDeque::with_capacity(fifo_depth),
            outstanding_data: 0,
            outstanding_index: 0,
            reserved_writes: 0,
            head_served: 0,
            rr: RoundRobin::default(),
            held: None,
            stats: UnitStats::default(),
            trace: None,
        }
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn has_indirection(&self) -> bool {
        self.indirection
    }

    pub fn stats(&self) -> &UnitStats {
        &self.stats
    }

    pub fn config(&self) -> &ConfigRegs {
        &self.cfg
    }

    /// Record the cycle of every granted data request.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn data_grant_trace(&self) -> Option<&[u64]> {
        self.trace.as_deref()
    }

    pub fn active_job(&self) -> Option<&StreamJob> {
        self.active.as_ref().map(|a| &a.job)
    }

    pub fn shadow_job(&self) -> Option<&StreamJob> {
        self.shadow.as_ref()
    }

    pub fn fifo_len(&self) -> usize {
        self.data_fifo.len()
    }

    /// A DATA_BASE write would be accepted now.
    pub fn can_launch(&self) -> bool {
        self.active.is_none() || self.shadow.is_none()
    }

    /// Write a configuration register. Writing DATA_BASE launches a job.
    pub fn write_config(&mut self, reg: u8, value: u64) -> Result<(), StreamFault> {
        self.cfg.write(reg, value);
        if reg == super::config_reg::DATA_BASE {
            let job = StreamJob::from_config(&self.cfg, self.id)?;
            self.launch(job)?;
        }
        Ok(())
    }

    pub fn launch(&mut self, job: StreamJob) -> Result<(), StreamFault> {
        job.validate(self.id, self.indirection, self.addr_bits)?;
        if self.active.is_none() {
            self.start(job);
        } else if self.shadow.is_none() {
            self.shadow = Some(job);
        } else {
            panic!("stream {}: launch with both job slots occupied", self.id);
        }
        Ok(())
    }

    fn start(&mut self, job: StreamJob) {
        let gen = match job.mode {
            JobMode::Affine => Gen::Affine(AffineIter::new(job.data_base, job.bounds, job.strides)),
            JobMode::Indirect => Gen::Indirect(IndirectGen::new(
                job.bounds[0],
                job.index_base,
                job.index_width,
                job.data_base,
                job.shift,
                self.index_fifo_depth,
            )),
        };
        debug_assert!(self.data_fifo.is_empty() || job.direction == Direction::Write);
        self.head_served = 0;
        self.active = Some(ActiveJob { job, gen });
    }

    /// Retire a finished job and promote the shadow. Called at the start of
    /// every cycle, after responses were delivered.
    pub fn begin_cycle(&mut self) {
        let Some(active) = &self.active else {
            return;
        };
        if self.held.is_some() || !active.gen.exhausted() || self.outstanding_data > 0 {
            return;
        }
        let done = match active.job.direction {
            Direction::Read => self.data_fifo.is_empty(),
            Direction::Write => true,
        };
        if done {
            self.active = None;
            self.stats.jobs_completed += 1;
            if let Some(next) = self.shadow.take() {
                self.start(next);
            }
        }
    }

    /// The request this unit presents to memory this cycle. A request stays
    /// identical until granted.
    pub fn propose(&mut self) -> Result<Option<MemRequest>, StreamFault> {
        if let Some(h) = self.held {
            return Ok(Some(h.req));
        }
        let Some(active) = &self.active else {
            return Ok(None);
        };
        let index_addr = match &active.gen {
            Gen::Indirect(g) if g.can_request_index() => Some(g.index_request_addr()),
            _ => None,
        };
        let data_addr = active.gen.peek().filter(|_| match active.job.direction {
            Direction::Read => self.data_fifo.len() + self.outstanding_data < self.fifo_depth,
            Direction::Write => !self.data_fifo.is_empty(),
        });
        let Some(grant) = arbitrate_port(index_addr.is_some(), data_addr.is_some(), &mut self.rr) else {
            return Ok(None);
        };
        let req = match grant {
            PortGrant::Index => MemRequest::read(index_addr.unwrap_or_default(), 8),
            PortGrant::Data => {
                let addr = data_addr.unwrap_or_default();
                match active.job.direction {
                    Direction::Read => MemRequest::read(addr, 8),
                    Direction::Write => MemRequest::write(addr, 8, self.data_fifo[0]),
                }
            }
        };
        if req.addr >> self.addr_bits != 0 {
            return Err(StreamFault::AddressOverflow { unit: self.id, addr: req.addr, bits: self.addr_bits });
        }
        self.held = Some(Held { grant, req });
        Ok(Some(req))
    }

    /// Apply a memory grant of the held request; reads answer next cycle
    /// through [`Self::deliver_index`] or [`Self::deliver_data`].
    pub fn on_grant(&mut self, cycle: u64) -> PortGrant {
        let h = self.held.take().expect("grant without a proposed request");
        let active = self.active.as_mut().expect("grant without an active job");
        match h.grant {
            PortGrant::Index => {
                if let Gen::Indirect(g) = &mut active.gen {
                    g.on_index_issued();
                }
                self.outstanding_index += 1;
                self.stats.index_requests += 1;
            }
            PortGrant::Data => {
                active.gen.advance();
                self.stats.data_requests += 1;
                if let Some(t) = &mut self.trace {
                    t.push(cycle);
                }
                match h.req.op {
                    MemOp::Read => self.outstanding_data += 1,
                    MemOp::Write(_) => {
                        self.data_fifo.pop_front();
                    }
                }
            }
        }
        h.grant
    }

    pub fn on_reject(&mut self) {
        debug_assert!(self.held.is_some());
        self.stats.conflict_cycles += 1;
    }

    pub fn deliver_index(&mut self, word: u64) {
        assert!(self.outstanding_index > 0, "stream {}: unexpected index word", self.id);
        self.outstanding_index -= 1;
        match self.active.as_mut().map(|a| &mut a.gen) {
            Some(Gen::Indirect(g)) => g.deliver_word(word),
            _ => panic!("stream {}: index word without an indirect job", self.id),
        }
    }

    pub fn deliver_data(&mut self, bits: u64) {
        assert!(self.outstanding_data > 0, "stream {}: unexpected data response", self.id);
        self.outstanding_data -= 1;
        self.data_fifo.push_back(bits);
        assert!(self.data_fifo.len() <= self.fifo_depth, "stream {}: data FIFO overflow", self.id);
    }

    fn active_direction(&self) -> Option<Direction> {
        self.active.as_ref().map(|a| a.job.direction)
    }

    /// Register reads available right now, counting repeats.
    pub fn readable(&self) -> u64 {
        if self.active_direction() != Some(Direction::Read) || self.data_fifo.is_empty() {
            return 0;
        }
        let r = u64::from(self.active.as_ref().map_or(1, |a| a.job.repeat));
        (self.data_fifo.len() as u64 - 1) * r + (r - u64::from(self.head_served))
    }

    /// Value the next register read will return.
    pub fn peek(&self) -> Option<u64> {
        self.data_fifo.front().copied()
    }

    /// Pop one register read. The head element is served `repeat` times.
    pub fn read(&mut self) -> u64 {
        assert!(self.readable() > 0, "stream {}: read from empty stream", self.id);
        let repeat = self.active.as_ref().map_or(1, |a| a.job.repeat);
        let v = self.data_fifo[0];
        self.head_served += 1;
        if self.head_served == repeat {
            self.head_served = 0;
            self.data_fifo.pop_front();
        }
        self.stats.reads_served += 1;
        v
    }

    /// Free write credits for the active write job.
    pub fn write_credits(&self) -> usize {
        if self.active_direction() != Some(Direction::Write) {
            return 0;
        }
        self.fifo_depth - self.data_fifo.len() - self.reserved_writes
    }

    pub fn reserve_write(&mut self) {
        assert!(self.write_credits() > 0, "stream {}: write reservation without credit", self.id);
        self.reserved_writes += 1;
    }

    pub fn push_write(&mut self, bits: u64) {
        assert!(self.reserved_writes > 0, "stream {}: write push without reservation", self.id);
        self.reserved_writes -= 1;
        self.data_fifo.push_back(bits);
        self.stats.writes_accepted += 1;
    }

    /// Written values still waiting to reach memory.
    pub fn has_pending_writes(&self) -> bool {
        self.reserved_writes > 0
            || matches!(self.held, Some(Held { req: MemRequest { op: MemOp::Write(_), .. }, .. }))
            || (self.active_direction() == Some(Direction::Write) && !self.data_fifo.is_empty())
    }

    pub fn has_inflight(&self) -> bool {
        self.outstanding_data > 0 || self.outstanding_index > 0
    }

    /// Any job active or pending.
    pub fn is_busy(&self) -> bool {
        self.active.is_some() || self.shadow.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{config_reg, IdxCfg, IndexWidth};

    /// Drive a unit against an ideal memory whose index words are zero and
    /// whose data reads echo the address.
    fn run_reads(unit: &mut StreamUnit, cycles: u64) -> Vec<u64> {
        let mut pending: Option<(PortGrant, MemRequest)> = None;
        let mut out = Vec::new();
        for t in 0..cycles {
            if let Some((kind, r)) = pending.take() {
                match kind {
                    PortGrant::Index => unit.deliver_index(0),
                    PortGrant::Data => unit.deliver_data(r.addr),
                }
            }
            unit.begin_cycle();
            if let Some(r) = unit.propose().unwrap() {
                pending = Some((unit.on_grant(t), r));
            }
            if unit.readable() > 0 {
                out.push(unit.read());
            }
        }
        out
    }

    #[test]
    fn affine_read_streams_in_order() {
        let mut u = StreamUnit::new(0, false, 32, 5, 4);
        u.write_config(config_reg::bounds(0), 4).unwrap();
        u.write_config(config_reg::strides(0), 8).unwrap();
        u.write_config(config_reg::DATA_BASE, 0x2000).unwrap();
        assert_eq!(run_reads(&mut u, 10), vec![0x2000, 0x2008, 0x2010, 0x2018]);
        assert!(!u.is_busy());
    }

    #[test]
    fn repeat_serves_each_element_r_times() {
        let mut u = StreamUnit::new(0, false, 32, 5, 4);
        u.write_config(config_reg::REPEAT, 3).unwrap();
        u.write_config(config_reg::bounds(0), 2).unwrap();
        u.write_config(config_reg::strides(0), 8).unwrap();
        u.write_config(config_reg::DATA_BASE, 0x2000).unwrap();
        assert_eq!(run_reads(&mut u, 12), vec![0x2000, 0x2000, 0x2000, 0x2008, 0x2008, 0x2008]);
    }

    #[test]
    fn shadow_job_starts_after_current_drains() {
        let mut u = StreamUnit::new(0, false, 32, 5, 4);
        u.write_config(config_reg::bounds(0), 2).unwrap();
        u.write_config(config_reg::strides(0), 8).unwrap();
        u.write_config(config_reg::DATA_BASE, 0x2000).unwrap();
        u.write_config(config_reg::DATA_BASE, 0x3000).unwrap();
        assert!(!u.can_launch());
        assert_eq!(run_reads(&mut u, 12), vec![0x2000, 0x2008, 0x3000, 0x3008]);
    }

    #[test]
    fn indirect_w16_reaches_four_fifths_of_a_request_per_cycle() {
        let mut u = StreamUnit::new(1, true, 32, 5, 4);
        let cfg = IdxCfg { mode: JobMode::Indirect, width: IndexWidth::W16, direction: Direction::Read, shift: 0 };
        u.write_config(config_reg::bounds(0), 400).unwrap();
        u.write_config(config_reg::IDXCFG, cfg.pack()).unwrap();
        u.write_config(config_reg::IDX_BASE, 0).unwrap();
        u.write_config(config_reg::DATA_BASE, 0x10000).unwrap();
        u.enable_trace();
        let out = run_reads(&mut u, 600);
        assert_eq!(out.len(), 400);
        let trace = u.data_grant_trace().unwrap();
        let span = trace[trace.len() - 1] - trace[0] + 1;
        let rate = trace.len() as f64 / span as f64;
        assert!((rate - 0.8).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn out_of_range_address_faults() {
        let mut u = StreamUnit::new(0, false, 12, 5, 4);
        u.write_config(config_reg::bounds(0), 2).unwrap();
        u.write_config(config_reg::strides(0), 8).unwrap();
        u.write_config(config_reg::DATA_BASE, 0xff8).unwrap();
        u.propose().unwrap();
        u.on_grant(0);
        assert!(matches!(u.propose(), Err(StreamFault::AddressOverflow { addr: 0x1000, .. })));
    }
}
