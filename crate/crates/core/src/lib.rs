//! Cycle-level model of a RISC-V core complex with stream semantic
//! registers and their indirection extension, sparse-dense kernels built on
//! it, and an eight-core cluster with a banked scratchpad and DMA.

pub mod cc;
pub mod cluster;
pub mod formats;
pub mod isa;
pub mod kernels;
pub mod mem;
pub mod stream;
pub mod verify;
