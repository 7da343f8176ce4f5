use super::{MemRequest, Memory};

/// Number of TCDM banks; a bank word is 64 bits.
pub const NUM_BANKS: usize = 32;

pub fn bank_of(addr: u64) -> usize {
    ((addr >> 3) % NUM_BANKS as u64) as usize
}

/// A request presented to a shared memory by one requester port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRequest {
    pub requester: u16,
    pub req: MemRequest,
}

/// A granted access, in the order the memory applied it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrantRecord {
    pub cycle: u64,
    pub requester: u16,
    pub req: MemRequest,
}

/// Decides which of this cycle's requests are served.
pub trait Arbiter {
    /// `grants` is resized to `reqs.len()`.
    fn arbitrate(&mut self, cycle: u64, reqs: &[PortRequest], grants: &mut Vec<bool>);
}

/// Unlimited ports, never back-pressures.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdealMemory;

impl Arbiter for IdealMemory {
    fn arbitrate(&mut self, _cycle: u64, reqs: &[PortRequest], grants: &mut Vec<bool>) {
        grants.clear();
        grants.resize(reqs.len(), true);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TcdmStats {
    pub requests: u64,
    pub grants: u64,
    /// Request-cycles lost to a bank conflict.
    pub conflicts: u64,
    pub contested_bank_cycles: u64,
}

/// Banked scratchpad arbitration: one access per bank per cycle, a
/// round-robin pointer per bank that moves past the winner of every
/// contested cycle.
#[derive(Debug, Clone)]
pub struct Tcdm {
    num_requesters: u16,
    priority: [u16; NUM_BANKS],
    stats: TcdmStats,
    per_requester_conflicts: Vec<u64>,
    log: Option<Vec<GrantRecord>>,
    // Scratch: (winner index into reqs, contenders) per bank.
    best: [(usize, u16); NUM_BANKS],
}

impl Tcdm {
    pub fn new(num_requesters: u16) -> Self {
        assert!(num_requesters > 0);
        Self {
            num_requesters,
            priority: [0; NUM_BANKS],
            stats: TcdmStats::default(),
            per_requester_conflicts: vec![0; usize::from(num_requesters)],
            log: None,
            best: [(usize::MAX, 0); NUM_BANKS],
        }
    }

    pub fn stats(&self) -> &TcdmStats {
        &self.stats
    }

    pub fn conflicts_of(&self, requester: u16) -> u64 {
        self.per_requester_conflicts[usize::from(requester)]
    }

    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn log(&self) -> Option<&[GrantRecord]> {
        self.log.as_deref()
    }

    fn distance(&self, bank: usize, requester: u16) -> u16 {
        (requester + self.num_requesters - self.priority[bank]) % self.num_requesters
    }
}

impl Arbiter for Tcdm {
    fn arbitrate(&mut self, cycle: u64, reqs: &[PortRequest], grants: &mut Vec<bool>) {
        grants.clear();
        grants.resize(reqs.len(), false);
        self.best = [(usize::MAX, 0); NUM_BANKS];
        for (i, r) in reqs.iter().enumerate() {
            debug_assert!(r.requester < self.num_requesters);
            let bank = bank_of(r.req.addr);
            let (cur, n) = self.best[bank];
            let better =
                cur == usize::MAX || self.distance(bank, r.requester) < self.distance(bank, reqs[cur].requester);
            self.best[bank] = (if better { i } else { cur }, n + 1);
        }
        self.stats.requests += reqs.len() as u64;
        for bank in 0..NUM_BANKS {
            let (winner, n) = self.best[bank];
            if n == 0 {
                continue;
            }
            grants[winner] = true;
            self.stats.grants += 1;
            if n > 1 {
                self.stats.contested_bank_cycles += 1;
                self.stats.conflicts += u64::from(n - 1);
                self.priority[bank] = (reqs[winner].requester + 1) % self.num_requesters;
            }
        }
        for (r, g) in reqs.iter().zip(grants.iter()) {
            if !g {
                self.per_requester_conflicts[usize::from(r.requester)] += 1;
            }
        }
        if let Some(log) = &mut self.log {
            log.extend(reqs.iter().zip(grants.iter()).filter(|(_, g)| **g).map(|(r, _)| GrantRecord {
                cycle,
                requester: r.requester,
                req: r.req,
            }));
        }
    }
}

/// Apply a grant log sequentially to `mem`.
pub fn replay(log: &[GrantRecord], mem: &mut Memory) {
    for g in log {
        mem.access(&g.req);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pr(requester: u16, addr: u64) -> PortRequest {
        PortRequest { requester, req: MemRequest::read(addr, 8) }
    }

    #[test]
    fn single_requester_always_granted() {
        let mut t = Tcdm::new(4);
        let mut g = Vec::new();
        for c in 0..10 {
            t.arbitrate(c, &[pr(2, 8 * c)], &mut g);
            assert_eq!(g, vec![true]);
        }
    }

    #[test]
    fn same_bank_contention_alternates() {
        let mut t = Tcdm::new(2);
        let mut g = Vec::new();
        let mut winners = Vec::new();
        for c in 0..6 {
            t.arbitrate(c, &[pr(0, 0), pr(1, 256)], &mut g);
            assert_eq!(g.iter().filter(|x| **x).count(), 1);
            winners.push(g.iter().position(|x| *x).unwrap());
        }
        assert_eq!(winners, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(t.stats().conflicts, 6);
    }

    #[test]
    fn conflict_free_pattern_reaches_full_throughput() {
        let mut t = Tcdm::new(32);
        let reqs: Vec<_> = (0..32).map(|r| pr(r, 8 * u64::from(r))).collect();
        let mut g = Vec::new();
        t.arbitrate(0, &reqs, &mut g);
        assert!(g.iter().all(|x| *x));
    }

    #[test]
    fn ideal_memory_grants_everything() {
        let mut g = Vec::new();
        IdealMemory.arbitrate(0, &[pr(0, 0), pr(1, 0)], &mut g);
        assert_eq!(g, vec![true, true]);
    }
}
