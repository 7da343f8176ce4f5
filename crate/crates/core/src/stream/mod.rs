//! Stream semantic registers: affine address generation, the indirection
//! extension (index fetch, serialization, shift-and-add), and the per-unit
//! streamer state (data FIFO, shadowed job launch, port arbitration).

mod addrgen;
mod arbiter;
mod unit;

use thiserror::Error;

pub use addrgen::{serialize_indices, AffineIter, IndirectGen};
pub use arbiter::{arbitrate_port, PortGrant, RoundRobin};
pub use unit::{StreamUnit, UnitStats};

/// Unit wired to `f0`; affine only, shares the core's memory port.
pub const SSR_UNIT: u8 = 0;
/// Unit wired to `f1`; supports indirection and owns an exclusive port.
pub const ISSR_UNIT: u8 = 1;

/// Per-unit configuration register map written by `scfgw`.
pub mod config_reg {
    pub const STATUS: u8 = 0;
    pub const REPEAT: u8 = 1;
    pub const BOUNDS0: u8 = 2;
    pub const STRIDES0: u8 = 6;
    pub const IDXCFG: u8 = 10;
    pub const IDX_BASE: u8 = 11;
    /// Writing this register launches the configured job.
    pub const DATA_BASE: u8 = 12;

    const NAMES: [&str; 13] = [
        "status",
        "repeat",
        "bounds0",
        "bounds1",
        "bounds2",
        "bounds3",
        "strides0",
        "strides1",
        "strides2",
        "strides3",
        "idxcfg",
        "idx_base",
        "data_base",
    ];

    pub fn bounds(dim: u8) -> u8 {
        BOUNDS0 + dim
    }

    pub fn strides(dim: u8) -> u8 {
        STRIDES0 + dim
    }

    pub fn is_writable(reg: u8) -> bool {
        (REPEAT..=DATA_BASE).contains(&reg)
    }

    pub fn name(reg: u8) -> Option<&'static str> {
        NAMES.get(usize::from(reg)).copied()
    }

    pub fn from_name(name: &str) -> Option<u8> {
        NAMES.iter().position(|n| *n == name).map(|i| i as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JobMode {
    Affine,
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum IndexWidth {
    W16,
    W32,
}

impl IndexWidth {
    pub fn bits(self) -> u32 {
        match self {
            IndexWidth::W16 => 16,
            IndexWidth::W32 => 32,
        }
    }

    pub fn bytes(self) -> u64 {
        u64::from(self.bits() / 8)
    }

    /// Indices per 64-bit index word.
    pub fn lanes(self) -> u8 {
        (64 / self.bits()) as u8
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            16 => Some(IndexWidth::W16),
            32 => Some(IndexWidth::W32),
            _ => None,
        }
    }
}

impl std::fmt::Display for IndexWidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Packed layout of the `idxcfg` register:
/// bit 0 mode (1 = indirect), bit 1 width (1 = 16-bit), bit 2 direction
/// (1 = write), bits 7:3 extra shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdxCfg {
    pub mode: JobMode,
    pub width: IndexWidth,
    pub direction: Direction,
    pub shift: u8,
}

impl IdxCfg {
    pub fn pack(self) -> u64 {
        let mut v = 0u64;
        if self.mode == JobMode::Indirect {
            v |= 1;
        }
        if self.width == IndexWidth::W16 {
            v |= 1 << 1;
        }
        if self.direction == Direction::Write {
            v |= 1 << 2;
        }
        v | (u64::from(self.shift & 0x1f) << 3)
    }

    pub fn unpack(v: u64) -> Self {
        Self {
            mode: if v & 1 != 0 { JobMode::Indirect } else { JobMode::Affine },
            width: if v & 2 != 0 { IndexWidth::W16 } else { IndexWidth::W32 },
            direction: if v & 4 != 0 { Direction::Write } else { Direction::Read },
            shift: ((v >> 3) & 0x1f) as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamFault {
    #[error("stream {unit}: data address {addr:#x} exceeds {bits}-bit address width")]
    AddressOverflow { unit: u8, addr: u64, bits: u32 },
    #[error("stream {unit}: index array base {addr:#x} not aligned to {width}-bit indices")]
    MisalignedIndexBase { unit: u8, addr: u64, width: u32 },
    #[error("stream {unit}: indirection not supported by this unit")]
    NoIndirection { unit: u8 },
    #[error("stream {unit}: invalid configuration: {message}")]
    BadConfig { unit: u8, message: String },
}

/// Shadow configuration registers of one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigRegs {
    pub repeat: u64,
    pub bounds: [u64; 4],
    pub strides: [u64; 4],
    pub idxcfg: u64,
    pub idx_base: u64,
    pub data_base: u64,
}

impl Default for ConfigRegs {
    fn default() -> Self {
        Self { repeat: 1, bounds: [1; 4], strides: [0; 4], idxcfg: 0, idx_base: 0, data_base: 0 }
    }
}

impl ConfigRegs {
    pub fn write(&mut self, reg: u8, value: u64) {
        match reg {
            config_reg::REPEAT => self.repeat = value,
            r if (config_reg::BOUNDS0..config_reg::STRIDES0).contains(&r) => {
                self.bounds[usize::from(r - config_reg::BOUNDS0)] = value
            }
            r if (config_reg::STRIDES0..config_reg::IDXCFG).contains(&r) => {
                self.strides[usize::from(r - config_reg::STRIDES0)] = value
            }
            config_reg::IDXCFG => self.idxcfg = value,
            config_reg::IDX_BASE => self.idx_base = value,
            config_reg::DATA_BASE => self.data_base = value,
            _ => {}
        }
    }
}

/// One fully specified stream job, captured from the shadow registers at launch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamJob {
    pub mode: JobMode,
    pub direction: Direction,
    /// Affine loop bounds in elements, innermost first. Indirect jobs use
    /// `bounds[0]` as their element count.
    pub bounds: [u64; 4],
    /// Affine strides in bytes, added when the corresponding loop advances.
    pub strides: [i64; 4],
    pub index_base: u64,
    pub index_width: IndexWidth,
    pub data_base: u64,
    pub shift: u8,
    pub repeat: u32,
}

impl StreamJob {
    pub fn affine_read(base: u64, bounds: [u64; 4], strides: [i64; 4]) -> Self {
        Self {
            mode: JobMode::Affine,
            direction: Direction::Read,
            bounds,
            strides,
            index_base: 0,
            index_width: IndexWidth::W32,
            data_base: base,
            shift: 0,
            repeat: 1,
        }
    }

    pub fn indirect(
        direction: Direction,
        count: u64,
        index_base: u64,
        index_width: IndexWidth,
        data_base: u64,
        shift: u8,
    ) -> Self {
        Self {
            mode: JobMode::Indirect,
            direction,
            bounds: [count, 1, 1, 1],
            strides: [8, 0, 0, 0],
            index_base,
            index_width,
            data_base,
            shift,
            repeat: 1,
        }
    }

    pub fn from_config(cfg: &ConfigRegs, unit: u8) -> Result<Self, StreamFault> {
        let idx = IdxCfg::unpack(cfg.idxcfg);
        let repeat = u32::try_from(cfg.repeat)
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| StreamFault::BadConfig { unit, message: format!("repeat {} out of range", cfg.repeat) })?;
        Ok(Self {
            mode: idx.mode,
            direction: idx.direction,
            bounds: cfg.bounds,
            strides: cfg.strides.map(|s| s as i64),
            index_base: cfg.idx_base,
            index_width: idx.width,
            data_base: cfg.data_base,
            shift: idx.shift,
            repeat,
        })
    }

    /// Number of data elements moved by this job.
    pub fn len(&self) -> u64 {
        match self.mode {
            JobMode::Affine => self.bounds.iter().product(),
            JobMode::Indirect => self.bounds[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, unit: u8, indirection: bool, addr_bits: u32) -> Result<(), StreamFault> {
        if self.mode == JobMode::Indirect {
            if !indirection {
                return Err(StreamFault::NoIndirection { unit });
            }
            if !self.index_base.is_multiple_of(self.index_width.bytes()) {
                return Err(StreamFault::MisalignedIndexBase {
                    unit,
                    addr: self.index_base,
                    width: self.index_width.bits(),
                });
            }
            if self.index_base >> addr_bits != 0 && !self.is_empty() {
                return Err(StreamFault::AddressOverflow { unit, addr: self.index_base, bits: addr_bits });
            }
        }
        if self.data_base >> addr_bits != 0 && !self.is_empty() {
            return Err(StreamFault::AddressOverflow { unit, addr: self.data_base, bits: addr_bits });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idxcfg_packing_matches_documented_bits() {
        let cfg = IdxCfg { mode: JobMode::Indirect, width: IndexWidth::W16, direction: Direction::Write, shift: 5 };
        assert_eq!(cfg.pack(), 0b0010_1111);
        assert_eq!(IdxCfg::unpack(cfg.pack()), cfg);
        let plain = IdxCfg::unpack(0);
        assert_eq!(plain.mode, JobMode::Affine);
        assert_eq!(plain.width, IndexWidth::W32);
        assert_eq!(plain.direction, Direction::Read);
    }

    #[test]
    fn config_register_names() {
        assert_eq!(config_reg::from_name("data_base"), Some(config_reg::DATA_BASE));
        assert_eq!(config_reg::name(config_reg::bounds(3)), Some("bounds3"));
        assert!(!config_reg::is_writable(config_reg::STATUS));
    }

    #[test]
    fn indirect_job_on_plain_ssr_rejected() {
        let job = StreamJob::indirect(Direction::Read, 4, 0, IndexWidth::W32, 0, 0);
        assert_eq!(job.validate(SSR_UNIT, false, 18), Err(StreamFault::NoIndirection { unit: 0 }));
        assert!(job.validate(ISSR_UNIT, true, 18).is_ok());
    }
}
