//! Memory: a sparse little-endian byte store, port requests, the ideal
//! single-cycle memory, the banked TCDM arbiter and the DMA engine.

mod dma;
mod tcdm;

use std::collections::HashMap;

use thiserror::Error;

pub use dma::{DmaDescriptor, DmaDirection, DmaEngine, DmaError, DmaStats, BEAT_BYTES};
pub use tcdm::{bank_of, replay, Arbiter, GrantRecord, IdealMemory, PortRequest, Tcdm, TcdmStats, NUM_BANKS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemOp {
    Read,
    /// Write carrying the value, truncated to the access size.
    Write(u64),
}

/// One access on a memory port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemRequest {
    pub addr: u64,
    /// Access size in bytes: 2, 4 or 8.
    pub size: u8,
    pub op: MemOp,
}

impl MemRequest {
    pub fn read(addr: u64, size: u8) -> Self {
        Self { addr, size, op: MemOp::Read }
    }

    pub fn write(addr: u64, size: u8, value: u64) -> Self {
        Self { addr, size, op: MemOp::Write(value) }
    }

    pub fn is_write(&self) -> bool {
        matches!(self.op, MemOp::Write(_))
    }
}

const PAGE_BITS: u32 = 12;
const PAGE_SIZE: usize = 1 << PAGE_BITS;

/// Sparse byte-addressed memory; untouched bytes read as zero.
#[derive(Debug, Clone, Default)]
pub struct Memory {
    pages: HashMap<u64, Box<[u8; PAGE_SIZE]>>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    fn page(&self, addr: u64) -> Option<&[u8; PAGE_SIZE]> {
        self.pages.get(&(addr >> PAGE_BITS)).map(|p| &**p)
    }

    fn page_mut(&mut self, addr: u64) -> &mut [u8; PAGE_SIZE] {
        self.pages.entry(addr >> PAGE_BITS).or_insert_with(|| Box::new([0; PAGE_SIZE]))
    }

    pub fn read_u8(&self, addr: u64) -> u8 {
        self.page(addr).map_or(0, |p| p[(addr as usize) & (PAGE_SIZE - 1)])
    }

    pub fn write_u8(&mut self, addr: u64, v: u8) {
        self.page_mut(addr)[(addr as usize) & (PAGE_SIZE - 1)] = v;
    }

    /// Little-endian read of `size` bytes, zero-extended.
    pub fn read(&self, addr: u64, size: u8) -> u64 {
        let off = (addr as usize) & (PAGE_SIZE - 1);
        let n = usize::from(size);
        if off + n <= PAGE_SIZE {
            let Some(p) = self.page(addr) else {
                return 0;
            };
            let mut buf = [0u8; 8];
            buf[..n].copy_from_slice(&p[off..off + n]);
            return u64::from_le_bytes(buf);
        }
        (0..n).fold(0u64, |acc, i| acc | (u64::from(self.read_u8(addr.wrapping_add(i as u64))) << (8 * i)))
    }

    pub fn write(&mut self, addr: u64, size: u8, value: u64) {
        let off = (addr as usize) & (PAGE_SIZE - 1);
        let n = usize::from(size);
        let bytes = value.to_le_bytes();
        if off + n <= PAGE_SIZE {
            self.page_mut(addr)[off..off + n].copy_from_slice(&bytes[..n]);
        } else {
            for (i, b) in bytes.iter().take(n).enumerate() {
                self.write_u8(addr.wrapping_add(i as u64), *b);
            }
        }
    }

    pub fn read_u64(&self, addr: u64) -> u64 {
        self.read(addr, 8)
    }

    pub fn write_u64(&mut self, addr: u64, v: u64) {
        self.write(addr, 8, v)
    }

    pub fn read_f64(&self, addr: u64) -> f64 {
        f64::from_bits(self.read_u64(addr))
    }

    pub fn write_f64(&mut self, addr: u64, v: f64) {
        self.write_u64(addr, v.to_bits())
    }

    pub fn write_f64s(&mut self, addr: u64, vs: &[f64]) {
        for (i, v) in vs.iter().enumerate() {
            self.write_f64(addr + 8 * i as u64, *v);
        }
    }

    pub fn read_f64s(&self, addr: u64, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.read_f64(addr + 8 * i as u64)).collect()
    }

    pub fn write_u32s(&mut self, addr: u64, vs: &[u32]) {
        for (i, v) in vs.iter().enumerate() {
            self.write(addr + 4 * i as u64, 4, u64::from(*v));
        }
    }

    pub fn write_u16s(&mut self, addr: u64, vs: &[u16]) {
        for (i, v) in vs.iter().enumerate() {
            self.write(addr + 2 * i as u64, 2, u64::from(*v));
        }
    }

    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) {
        for (i, b) in bytes.iter().enumerate() {
            self.write_u8(addr + i as u64, *b);
        }
    }

    pub fn read_bytes(&self, addr: u64, n: usize) -> Vec<u8> {
        (0..n).map(|i| self.read_u8(addr + i as u64)).collect()
    }

    /// Apply a granted request; returns the read value for reads.
    pub fn access(&mut self, req: &MemRequest) -> u64 {
        match req.op {
            MemOp::Read => self.read(req.addr, req.size),
            MemOp::Write(v) => {
                self.write(req.addr, req.size, v);
                0
            }
        }
    }

    /// Copy `len` bytes between two regions of this store.
    pub fn copy(&mut self, src: u64, dst: u64, len: u64) {
        let data = self.read_bytes(src, len as usize);
        self.write_bytes(dst, &data);
    }

    /// Flat binary image of `[base, base + len)`.
    pub fn dump_image(&self, base: u64, len: u64) -> Vec<u8> {
        self.read_bytes(base, len as usize)
    }

    /// Place a flat binary image at `base`.
    pub fn load_image(&mut self, base: u64, image: &[u8]) {
        self.write_bytes(base, image);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemFault {
    #[error("access of {size} bytes at {addr:#x} is misaligned")]
    Misaligned { addr: u64, size: u8 },
    #[error("access of {size} bytes at {addr:#x} outside memory of {bound:#x} bytes")]
    OutOfBounds { addr: u64, size: u8, bound: u64 },
}

/// Check natural alignment and that the access lies below `bound`.
pub fn check_access(req: &MemRequest, bound: u64) -> Result<(), MemFault> {
    let size = req.size;
    if !req.addr.is_multiple_of(u64::from(size)) {
        return Err(MemFault::Misaligned { addr: req.addr, size });
    }
    if req.addr.checked_add(u64::from(size)).is_none_or(|end| end > bound) {
        return Err(MemFault::OutOfBounds { addr: req.addr, size, bound });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn little_endian_subword_access() {
        let mut m = Memory::new();
        m.write_u64(0x100, 0x1122_3344_5566_7788);
        assert_eq!(m.read(0x100, 2), 0x7788);
        assert_eq!(m.read(0x102, 4), 0x3344_5566);
        assert_eq!(m.read_u8(0x107), 0x11);
    }

    #[test]
    fn page_straddling_access() {
        let mut m = Memory::new();
        m.write_u64(PAGE_SIZE as u64 - 3, 0x0102_0304_0506_0708);
        assert_eq!(m.read_u64(PAGE_SIZE as u64 - 3), 0x0102_0304_0506_0708);
    }

    #[test]
    fn image_round_trip() {
        let mut m = Memory::new();
        m.write_f64s(0x40, &[1.5, -2.25, 3.0]);
        let image = m.dump_image(0x40, 24);
        let mut n = Memory::new();
        n.load_image(0x40, &image);
        assert_eq!(n.read_f64s(0x40, 3), vec![1.5, -2.25, 3.0]);
    }

    #[test]
    fn access_checks() {
        assert!(check_access(&MemRequest::read(0x8, 8), 0x10).is_ok());
        assert_eq!(check_access(&MemRequest::read(0x6, 4), 0x10), Err(MemFault::Misaligned { addr: 6, size: 4 }));
        assert!(matches!(check_access(&MemRequest::read(0x10, 2), 0x10), Err(MemFault::OutOfBounds { .. })));
    }
}
