/// Which requester of a stream unit's port was granted this cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PortGrant {
    Index,
    Data,
}

/// Two-way round-robin state between a unit's index and data requests.
/// Holds the side that wins the next contested cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundRobin {
    pub prefer: PortGrant,
}

impl Default for RoundRobin {
    fn default() -> Self {
        Self { prefer: PortGrant::Data }
    }
}

/// Uncontested requests are granted without touching the priority state;
/// contested cycles alternate strictly.
pub fn arbitrate_port(index_pending: bool, data_pending: bool, rr: &mut RoundRobin) -> Option<PortGrant> {
    match (index_pending, data_pending) {
        (false, false) => None,
        (true, false) => Some(PortGrant::Index),
        (false, true) => Some(PortGrant::Data),
        (true, true) => {
            let winner = rr.prefer;
            rr.prefer = match winner {
                PortGrant::Index => PortGrant::Data,
                PortGrant::Data => PortGrant::Index,
            };
            Some(winner)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contested_cycles_alternate() {
        let mut rr = RoundRobin::default();
        let seq: Vec<_> = (0..4).map(|_| arbitrate_port(true, true, &mut rr).unwrap()).collect();
        assert_eq!(seq, vec![PortGrant::Data, PortGrant::Index, PortGrant::Data, PortGrant::Index]);
    }

    #[test]
    fn uncontested_grant_keeps_state() {
        let mut rr = RoundRobin { prefer: PortGrant::Index };
        assert_eq!(arbitrate_port(false, true, &mut rr), Some(PortGrant::Data));
        assert_eq!(rr.prefer, PortGrant::Index);
        assert_eq!(arbitrate_port(false, false, &mut rr), None);
    }
}
