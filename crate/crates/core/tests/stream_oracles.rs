//! Stream address generation and bank arbitration against independent oracles.

use issr_sim::mem::{bank_of, Arbiter, MemRequest, PortRequest, Tcdm};
use issr_sim::stream::{serialize_indices, AffineIter, IndexWidth, IndirectGen};
use proptest::prelude::*;

/// Closed form of the relative-stride walk: level `l` advances the pointer by
/// its stride after the levels inside it have each taken `bound - 1` steps.
fn affine_oracle(base: u64, bounds: [u64; 4], strides: [i64; 4]) -> Vec<u64> {
    let mut step = [0i64; 4];
    for l in 0..4 {
        step[l] = strides[l] + (0..l).map(|k| (bounds[k] as i64 - 1) * step[k]).sum::<i64>();
    }
    let mut out = Vec::new();
    for i3 in 0..bounds[3] {
        for i2 in 0..bounds[2] {
            for i1 in 0..bounds[1] {
                for i0 in 0..bounds[0] {
                    let off = [i0, i1, i2, i3].iter().zip(&step).map(|(&i, &s)| i as i64 * s).sum::<i64>();
                    out.push(base.wrapping_add(off as u64));
                }
            }
        }
    }
    out
}

fn width_strategy() -> impl Strategy<Value = IndexWidth> {
    prop_oneof![Just(IndexWidth::W16), Just(IndexWidth::W32)]
}

/// Drive the generator with an ideal index memory holding `words`.
fn gather(g: &mut IndirectGen, words: &[u64]) -> Vec<u64> {
    let mut inflight = std::collections::VecDeque::new();
    let mut out = Vec::new();
    for _ in 0..100_000 {
        if g.is_done() {
            break;
        }
        if let Some(a) = g.peek() {
            out.push(a);
            g.advance();
        }
        if let Some(addr) = inflight.pop_front() {
            g.deliver_word(words[(addr / 8) as usize]);
        }
        if g.can_request_index() {
            inflight.push_back(g.index_request_addr());
            g.on_index_issued();
        }
    }
    out
}

proptest! {
    #[test]
    fn affine_walk_matches_closed_form(
        base in 0u64..1 << 20,
        bounds in prop::array::uniform4(1u64..5),
        strides in prop::array::uniform4(-64i64..64),
    ) {
        let strides = strides.map(|s| s * 8);
        let got: Vec<u64> = AffineIter::new(base, bounds, strides).collect();
        prop_assert_eq!(got.len() as u64, bounds.iter().product::<u64>());
        prop_assert_eq!(got, affine_oracle(base, bounds, strides));
    }

    #[test]
    fn serializer_matches_byte_split(word: u64, width in width_strategy(), start in 0u8..4) {
        let lanes = 8 / width.bytes() as usize;
        let start = start % lanes as u8;
        let want: Vec<u32> = word
            .to_le_bytes()
            .chunks(width.bytes() as usize)
            .map(|c| c.iter().rev().fold(0u32, |v, &b| (v << 8) | u32::from(b)))
            .skip(start as usize)
            .collect();
        prop_assert_eq!(serialize_indices(word, width, start), want);
    }

    #[test]
    fn indirect_addresses_match_direct_gather(
        idx in prop::collection::vec(0u32..4096, 0..80),
        width in width_strategy(),
        skew in 0u64..4,
        shift in 0u8..3,
        data_base in (0u64..1 << 16).prop_map(|b| b * 8),
    ) {
        let wb = width.bytes();
        let skew = skew % (8 / wb);
        let mut bytes = vec![0u8; (skew * wb) as usize];
        for &i in &idx {
            bytes.extend_from_slice(&i.to_le_bytes()[..wb as usize]);
        }
        bytes.resize(bytes.len().div_ceil(8) * 8 + 8, 0);
        let words: Vec<u64> = bytes.chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut g = IndirectGen::new(idx.len() as u64, skew * wb, width, data_base, shift, 4);
        let want: Vec<u64> = idx.iter().map(|&i| data_base + (u64::from(i) << (3 + shift))).collect();
        prop_assert_eq!(gather(&mut g, &words), want);
        prop_assert!(g.is_done());
    }

    #[test]
    fn banks_grant_once_per_cycle_and_never_starve(
        addrs in prop::collection::vec(prop::collection::vec(0u64..256, 1..6), 2..6),
    ) {
        // Each requester replays its own address list, retrying until granted.
        let n = addrs.len();
        let mut tcdm = Tcdm::new(n as u16);
        let mut pos = vec![0usize; n];
        let mut waited = vec![0u64; n];
        let mut grants = Vec::new();
        for cycle in 0..1000 {
            let live: Vec<usize> = (0..n).filter(|&r| pos[r] < addrs[r].len()).collect();
            if live.is_empty() {
                break;
            }
            let reqs: Vec<PortRequest> = live
                .iter()
                .map(|&r| PortRequest { requester: r as u16, req: MemRequest::read(addrs[r][pos[r]] * 8, 8) })
                .collect();
            tcdm.arbitrate(cycle, &reqs, &mut grants);
            let mut banks = std::collections::HashSet::new();
            for (req, &g) in reqs.iter().zip(&grants) {
                let r = req.requester as usize;
                if g {
                    prop_assert!(banks.insert(bank_of(req.req.addr)), "bank granted twice in cycle {}", cycle);
                    pos[r] += 1;
                    waited[r] = 0;
                } else {
                    waited[r] += 1;
                    prop_assert!(waited[r] < n as u64, "requester {} waited {} cycles", r, waited[r]);
                }
            }
        }
        prop_assert!((0..n).all(|r| pos[r] == addrs[r].len()));
    }
}

#[test]
fn affine_oracle_reproduces_rule_example() {
    assert_eq!(affine_oracle(0, [2, 3, 1, 1], [8, 64, 0, 0]), [0, 8, 72, 80, 144, 152]);
}
