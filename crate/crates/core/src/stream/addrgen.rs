use std::collections::VecDeque;

use super::IndexWidth;

/// Four-level affine address generator. Level 0 is innermost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineIter {
    counters: [u64; 4],
    bounds: [u64; 4],
    strides: [i64; 4],
    ptr: u64,
    remaining: u64,
}

impl AffineIter {
    pub fn new(base: u64, bounds: [u64; 4], strides: [i64; 4]) -> Self {
        Self { counters: [0; 4], bounds, strides, ptr: base, remaining: bounds.iter().product() }
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn peek(&self) -> Option<u64> {
        (self.remaining > 0).then_some(self.ptr)
    }

    /// Step to the next address: the stride of the outermost level whose
    /// counter incremented without wrapping is added to the pointer.
    pub fn advance(&mut self) {
        if self.remaining == 0 {
            return;
        }
        self.remaining -= 1;
        for level in 0..4 {
            self.counters[level] += 1;
            if self.counters[level] < self.bounds[level] {
                self.ptr = self.ptr.wrapping_add(self.strides[level] as u64);
                return;
            }
            self.counters[level] = 0;
        }
    }
}

impl Iterator for AffineIter {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        let addr = self.peek()?;
        self.advance();
        Some(addr)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, Some(n))
    }
}

/// Split a 64-bit index word into its little-endian lanes, starting at `start`.
pub fn serialize_indices(word: u64, width: IndexWidth, start: u8) -> Vec<u32> {
    (start..width.lanes()).map(|lane| lane_value(word, width, lane)).collect()
}

fn lane_value(word: u64, width: IndexWidth, lane: u8) -> u32 {
    let bits = width.bits();
    let mask = (1u64 << bits) - 1;
    ((word >> (u32::from(lane) * bits)) & mask) as u32
}

/// Indirect address generator: fetches index words into a bounded FIFO,
/// serializes them and emits `data_base + (idx << (3 + shift))`.
#[derive(Debug, Clone)]
pub struct IndirectGen {
    width: IndexWidth,
    shift: u8,
    data_base: u64,
    next_word_addr: u64,
    words_total: u64,
    words_issued: u64,
    outstanding: usize,
    fifo: VecDeque<u64>,
    capacity: usize,
    lane: u8,
    remaining: u64,
}

impl IndirectGen {
    pub fn new(count: u64, index_base: u64, width: IndexWidth, data_base: u64, shift: u8, capacity: usize) -> Self {
        assert!(capacity >= 1, "index FIFO needs at least one slot");
        let lanes = u64::from(width.lanes());
        let first_lane = (index_base & 7) / width.bytes();
        let words_total = if count == 0 { 0 } else { (first_lane + count).div_ceil(lanes) };
        Self {
            width,
            shift,
            data_base,
            next_word_addr: index_base & !7,
            words_total,
            words_issued: 0,
            outstanding: 0,
            fifo: VecDeque::with_capacity(capacity),
            capacity,
            lane: first_lane as u8,
            remaining: count,
        }
    }

    /// Indices not yet turned into data addresses.
    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn words_total(&self) -> u64 {
        self.words_total
    }

    pub fn words_issued(&self) -> u64 {
        self.words_issued
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    pub fn buffered(&self) -> usize {
        self.fifo.len()
    }

    pub fn can_request_index(&self) -> bool {
        self.words_issued < self.words_total && self.fifo.len() + self.outstanding < self.capacity
    }

    pub fn index_request_addr(&self) -> u64 {
        self.next_word_addr
    }

    pub fn on_index_issued(&mut self) {
        debug_assert!(self.can_request_index());
        self.words_issued += 1;
        self.outstanding += 1;
        self.next_word_addr = self.next_word_addr.wrapping_add(8);
    }

    pub fn deliver_word(&mut self, word: u64) {
        assert!(self.outstanding > 0, "index word delivered without a request");
        self.outstanding -= 1;
        self.fifo.push_back(word);
        debug_assert!(self.fifo.len() <= self.capacity);
    }

    pub fn peek(&self) -> Option<u64> {
        if self.remaining == 0 {
            return None;
        }
        let word = *self.fifo.front()?;
        let idx = u64::from(lane_value(word, self.width, self.lane));
        Some(self.data_base.wrapping_add(idx << (3 + u32::from(self.shift))))
    }

    pub fn advance(&mut self) {
        debug_assert!(self.peek().is_some());
        self.remaining -= 1;
        self.lane += 1;
        if self.lane == self.width.lanes() || self.remaining == 0 {
            self.fifo.pop_front();
            self.lane = 0;
        }
    }

    /// All indices emitted and no index traffic left in flight.
    pub fn is_done(&self) -> bool {
        self.remaining == 0 && self.outstanding == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_two_level_walk() {
        let addrs: Vec<u64> = AffineIter::new(0, [2, 3, 1, 1], [8, 64, 0, 0]).collect();
        assert_eq!(addrs, vec![0, 8, 72, 80, 144, 152]);
    }

    #[test]
    fn affine_zero_bound_is_empty() {
        assert_eq!(AffineIter::new(0x100, [0, 1, 1, 1], [8, 0, 0, 0]).count(), 0);
    }

    #[test]
    fn serializer_is_little_endian() {
        let word = 0x0004_0003_0002_0001u64;
        assert_eq!(serialize_indices(word, IndexWidth::W16, 0), vec![1, 2, 3, 4]);
        assert_eq!(serialize_indices(word, IndexWidth::W16, 2), vec![3, 4]);
        assert_eq!(serialize_indices(word, IndexWidth::W32, 0), vec![0x0002_0001, 0x0004_0003]);
    }

    #[test]
    fn indirect_unaligned_start_fetches_enclosing_words() {
        // 5 indices starting at lane 3 of the first word span two words.
        let mut g = IndirectGen::new(5, 0x1006, IndexWidth::W16, 0x2000, 0, 4);
        assert_eq!(g.words_total(), 2);
        assert_eq!(g.index_request_addr(), 0x1000);
        g.on_index_issued();
        g.on_index_issued();
        assert!(!g.can_request_index());
        g.deliver_word(0x0007_0000_0000_0000);
        g.deliver_word(0x0000_000b_000a_0009);
        let mut out = Vec::new();
        while let Some(a) = g.peek() {
            out.push(a);
            g.advance();
        }
        assert_eq!(out, vec![0x2000 + 7 * 8, 0x2000 + 9 * 8, 0x2000 + 10 * 8, 0x2000 + 11 * 8, 0x2000]);
        assert!(g.is_done());
        assert_eq!(g.buffered(), 0);
    }

    #[test]
    fn indirect_shift_scales_offsets() {
        let mut g = IndirectGen::new(1, 0, IndexWidth::W32, 0x40, 2, 4);
        g.on_index_issued();
        g.deliver_word(3);
        assert_eq!(g.peek(), Some(0x40 + (3 << 5)));
    }

    #[test]
    fn index_fifo_bounds_outstanding_requests() {
        let mut g = IndirectGen::new(100, 0, IndexWidth::W16, 0, 0, 4);
        let mut issued = 0;
        while g.can_request_index() {
            g.on_index_issued();
            issued += 1;
        }
        assert_eq!(issued, 4);
    }
}
