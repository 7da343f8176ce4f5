use std::collections::VecDeque;

use thiserror::Error;

use super::{MemRequest, Memory, PortRequest};

/// Bytes moved per beat.
pub const BEAT_BYTES: u64 = 64;

/// Word lanes on the TCDM side, one bank each.
const LANES: usize = (BEAT_BYTES / 8) as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmaDirection {
    /// Main memory to TCDM.
    In,
    /// TCDM to main memory.
    Out,
}

/// A 2D transfer: `reps` rows of `inner_bytes`, rows `src_stride`/`dst_stride` apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaDescriptor {
    pub src: u64,
    pub dst: u64,
    pub inner_bytes: u64,
    pub reps: u64,
    pub src_stride: u64,
    pub dst_stride: u64,
}

impl DmaDescriptor {
    pub fn contiguous(src: u64, dst: u64, bytes: u64) -> Self {
        Self { src, dst, inner_bytes: bytes, reps: 1, src_stride: bytes, dst_stride: bytes }
    }

    pub fn total_bytes(&self) -> u64 {
        self.inner_bytes * self.reps
    }

    fn span(start: u64, stride: u64, inner: u64, reps: u64) -> (u64, u64) {
        (start, start + stride * reps.saturating_sub(1) + inner)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DmaError {
    #[error("transfer must have exactly one endpoint in the TCDM (src {src:#x}, dst {dst:#x})")]
    Endpoints { src: u64, dst: u64 },
    #[error("TCDM-side rows must be 8-byte aligned multiples of 8 bytes (addr {addr:#x}, row {bytes} bytes)")]
    Alignment { addr: u64, bytes: u64 },
    #[error("source and destination overlap")]
    Overlap,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DmaStats {
    pub descriptors: u64,
    pub bytes: u64,
    pub beats: u64,
    pub startup_cycles: u64,
    /// Cycles in which at least one lane of the current beat lost arbitration.
    pub stall_cycles: u64,
}

#[derive(Debug, Clone)]
struct Active {
    desc: DmaDescriptor,
    dir: DmaDirection,
    startup_left: u32,
    row: u64,
    offset: u64,
    /// (tcdm address, main address) of words waiting for a bank grant.
    lanes: Vec<(u64, u64)>,
}

/// Single-channel DMA engine between main memory and the TCDM.
/// Descriptors are processed in submission order.
#[derive(Debug, Clone)]
pub struct DmaEngine {
    requester: u16,
    tcdm_bytes: u64,
    startup: u32,
    queue: VecDeque<(DmaDescriptor, DmaDirection)>,
    active: Option<Active>,
    submitted: u64,
    completed: u64,
    completion_cycles: Vec<u64>,
    stats: DmaStats,
    proposed: usize,
}

impl DmaEngine {
    pub fn new(requester: u16, tcdm_bytes: u64, startup: u32) -> Self {
        Self {
            requester,
            tcdm_bytes,
            startup,
            queue: VecDeque::new(),
            active: None,
            submitted: 0,
            completed: 0,
            completion_cycles: Vec::new(),
            stats: DmaStats::default(),
            proposed: 0,
        }
    }

    pub fn stats(&self) -> &DmaStats {
        &self.stats
    }

    /// Queue a transfer; returns its id. Ids complete in order.
    pub fn submit(&mut self, desc: DmaDescriptor) -> Result<u64, DmaError> {
        let in_tcdm = |a: u64| a < self.tcdm_bytes;
        let dir = match (in_tcdm(desc.src), in_tcdm(desc.dst)) {
            (false, true) => DmaDirection::In,
            (true, false) => DmaDirection::Out,
            _ => return Err(DmaError::Endpoints { src: desc.src, dst: desc.dst }),
        };
        let tcdm_addr = if dir == DmaDirection::In { desc.dst } else { desc.src };
        let tcdm_stride = if dir == DmaDirection::In { desc.dst_stride } else { desc.src_stride };
        if !tcdm_addr.is_multiple_of(8)
            || !desc.inner_bytes.is_multiple_of(8)
            || (desc.reps > 1 && !tcdm_stride.is_multiple_of(8))
        {
            return Err(DmaError::Alignment { addr: tcdm_addr, bytes: desc.inner_bytes });
        }
        let s = DmaDescriptor::span(desc.src, desc.src_stride, desc.inner_bytes, desc.reps);
        let d = DmaDescriptor::span(desc.dst, desc.dst_stride, desc.inner_bytes, desc.reps);
        if desc.total_bytes() > 0 && s.0 < d.1 && d.0 < s.1 {
            return Err(DmaError::Overlap);
        }
        self.queue.push_back((desc, dir));
        self.submitted += 1;
        Ok(self.submitted - 1)
    }

    pub fn is_complete(&self, id: u64) -> bool {
        id < self.completed
    }

    /// Cycle at which transfer `id` was observed complete.
    pub fn completion_cycle(&self, id: u64) -> Option<u64> {
        self.completion_cycles.get(id as usize).copied()
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_none() && self.queue.is_empty()
    }

    fn activate(&mut self) {
        if self.active.is_none() {
            if let Some((desc, dir)) = self.queue.pop_front() {
                self.stats.descriptors += 1;
                self.active =
                    Some(Active { desc, dir, startup_left: self.startup, row: 0, offset: 0, lanes: Vec::new() });
            }
        }
    }

    /// Append this cycle's TCDM lane requests to `out`.
    pub fn propose(&mut self, mem: &Memory, out: &mut Vec<PortRequest>) {
        self.proposed = 0;
        self.activate();
        let Some(a) = &mut self.active else {
            return;
        };
        if a.startup_left > 0 {
            return;
        }
        // Granted lanes are refilled from the transfer at once: the engine
        // buffers between its read and write sides, so a lane that lost
        // arbitration holds back only itself.
        while a.lanes.len() < LANES && a.row < a.desc.reps {
            if a.offset % BEAT_BYTES == 0 {
                self.stats.beats += 1;
            }
            let n = (a.desc.inner_bytes - a.offset).min(8);
            let src = a.desc.src + a.row * a.desc.src_stride + a.offset;
            let dst = a.desc.dst + a.row * a.desc.dst_stride + a.offset;
            let (tcdm, main) = if a.dir == DmaDirection::In { (dst, src) } else { (src, dst) };
            a.lanes.push((tcdm, main));
            a.offset += n;
            self.stats.bytes += n;
            if a.offset == a.desc.inner_bytes {
                a.offset = 0;
                a.row += 1;
            }
        }
        for &(tcdm, main) in &a.lanes {
            let req = match a.dir {
                DmaDirection::In => MemRequest::write(tcdm, 8, mem.read_u64(main)),
                DmaDirection::Out => MemRequest::read(tcdm, 8),
            };
            out.push(PortRequest { requester: self.requester, req });
        }
        self.proposed = a.lanes.len();
    }

    /// Apply the grants for the requests appended by the last `propose`.
    pub fn commit(&mut self, cycle: u64, grants: &[bool], mem: &mut Memory) {
        debug_assert_eq!(grants.len(), self.proposed);
        let Some(a) = &mut self.active else {
            return;
        };
        if a.startup_left > 0 {
            a.startup_left -= 1;
            self.stats.startup_cycles += 1;
            return;
        }
        let mut i = 0;
        let mut stalled = false;
        a.lanes.retain(|&(tcdm, main)| {
            let granted = grants.get(i).copied().unwrap_or(false);
            i += 1;
            if granted {
                match a.dir {
                    DmaDirection::In => mem.write_u64(tcdm, mem.read_u64(main)),
                    DmaDirection::Out => mem.write_u64(main, mem.read_u64(tcdm)),
                }
            } else {
                stalled = true;
            }
            !granted
        });
        if stalled {
            self.stats.stall_cycles += 1;
        }
        if a.lanes.is_empty() && a.row >= a.desc.reps {
            self.active = None;
            self.completed += 1;
            self.completion_cycles.push(cycle + 1);
        }
    }

    /// Run the queue to completion against an otherwise idle memory.
    /// Returns the cycle after the last transfer finished.
    pub fn run_idle(&mut self, mut cycle: u64, mem: &mut Memory) -> u64 {
        let mut reqs = Vec::new();
        while !self.is_idle() {
            reqs.clear();
            self.propose(mem, &mut reqs);
            let grants = vec![true; reqs.len()];
            self.commit(cycle, &grants, mem);
            cycle += 1;
        }
        cycle
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAIN: u64 = 0x8000_0000;

    #[test]
    fn contiguous_copy_timing() {
        let mut mem = Memory::new();
        let data: Vec<f64> = (0..128).map(f64::from).collect();
        mem.write_f64s(MAIN, &data);
        let mut dma = DmaEngine::new(16, 1 << 18, 4);
        let id = dma.submit(DmaDescriptor::contiguous(MAIN, 0x100, 1024)).unwrap();
        let end = dma.run_idle(0, &mut mem);
        assert_eq!(end, 4 + 16);
        assert_eq!(dma.completion_cycle(id), Some(20));
        assert_eq!(mem.read_f64s(0x100, 128), data);
    }

    #[test]
    fn two_d_copy_timing() {
        let mut mem = Memory::new();
        let mut dma = DmaEngine::new(16, 1 << 18, 4);
        dma.submit(DmaDescriptor { src: MAIN, dst: 0, inner_bytes: 256, reps: 8, src_stride: 1024, dst_stride: 256 })
            .unwrap();
        assert_eq!(dma.run_idle(0, &mut mem), 4 + 32);
    }

    #[test]
    fn rejects_bad_descriptors() {
        let mut dma = DmaEngine::new(16, 1 << 18, 4);
        assert!(matches!(dma.submit(DmaDescriptor::contiguous(0, 64, 8)), Err(DmaError::Endpoints { .. })));
        assert!(matches!(dma.submit(DmaDescriptor::contiguous(MAIN, 4, 8)), Err(DmaError::Alignment { .. })));
    }
}
