use thiserror::Error;

use crate::mem::Memory;
use crate::stream::IndexWidth;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("region `{name}` ({bytes} bytes) does not fit below {limit:#x}")]
    OutOfSpace { name: String, bytes: u64, limit: u64 },
    #[error("region `{0}` defined twice")]
    Duplicate(String),
}

/// One placed array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub base: u64,
    pub bytes: u64,
}

/// Bump allocator placing named arrays in an address window.
#[derive(Debug, Clone)]
pub struct MemoryLayout {
    regions: Vec<Region>,
    next: u64,
    limit: u64,
}

impl MemoryLayout {
    pub fn new(base: u64, limit: u64) -> Self {
        Self { regions: Vec::new(), next: base, limit }
    }

    /// Place `bytes` at an address congruent to `skew` modulo `align`.
    /// A nonzero skew deliberately misaligns index arrays.
    pub fn alloc_skewed(&mut self, name: &str, bytes: u64, align: u64, skew: u64) -> Result<u64, LayoutError> {
        debug_assert!(align.is_power_of_two() && skew < align);
        let mut base = self.next.next_multiple_of(align) + skew;
        if base < self.next {
            base += align;
        }
        self.place(name, base, bytes)?;
        self.next = base + bytes;
        Ok(base)
    }

    pub fn alloc(&mut self, name: &str, bytes: u64, align: u64) -> Result<u64, LayoutError> {
        self.alloc_skewed(name, bytes, align, 0)
    }

    /// Place `bytes` so the region ends exactly at the window limit.
    pub fn alloc_at_top(&mut self, name: &str, bytes: u64) -> Result<u64, LayoutError> {
        let base = self
            .limit
            .checked_sub(bytes)
            .filter(|b| *b >= self.next)
            .ok_or_else(|| LayoutError::OutOfSpace { name: name.to_string(), bytes, limit: self.limit })?;
        self.place(name, base, bytes)?;
        Ok(base)
    }

    fn place(&mut self, name: &str, base: u64, bytes: u64) -> Result<(), LayoutError> {
        if self.get(name).is_some() {
            return Err(LayoutError::Duplicate(name.to_string()));
        }
        if base + bytes > self.limit || self.regions.iter().any(|r| base < r.base + r.bytes && r.base < base + bytes) {
            return Err(LayoutError::OutOfSpace { name: name.to_string(), bytes, limit: self.limit });
        }
        self.regions.push(Region { name: name.to_string(), base, bytes });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn base(&self, name: &str) -> u64 {
        self.get(name).unwrap_or_else(|| panic!("no region `{name}`")).base
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// First free address.
    pub fn end(&self) -> u64 {
        self.next
    }
}

/// Store indices as little-endian `width`-bit integers.
pub fn write_indices(mem: &mut Memory, base: u64, idx: &[u32], width: IndexWidth) {
    match width {
        IndexWidth::W16 => {
            let v: Vec<u16> = idx.iter().map(|&i| i as u16).collect();
            mem.write_u16s(base, &v);
        }
        IndexWidth::W32 => mem.write_u32s(base, idx),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skewed_allocation_is_misaligned_on_purpose() {
        let mut l = MemoryLayout::new(0x100, 0x1000);
        let a = l.alloc("vals", 24, 8).unwrap();
        let b = l.alloc_skewed("idx", 6, 8, 2).unwrap();
        assert_eq!(a, 0x100);
        assert_eq!(b % 8, 2);
        assert!(b >= a + 24);
    }

    #[test]
    fn top_allocation_is_flush() {
        let mut l = MemoryLayout::new(0, 0x1000);
        assert_eq!(l.alloc_at_top("table", 16).unwrap(), 0xff0);
        assert!(l.alloc("big", 0x1000, 8).is_err());
    }

    #[test]
    fn sixteen_bit_indices_are_packed() {
        let mut m = Memory::new();
        write_indices(&mut m, 0, &[1, 2, 3, 4], IndexWidth::W16);
        assert_eq!(m.read_u64(0), 0x0004_0003_0002_0001);
    }
}
