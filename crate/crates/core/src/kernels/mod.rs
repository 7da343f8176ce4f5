//! Program builders for the evaluated kernels and helpers that lay out
//! operands, run them on a single core complex and read back results.
//!
//! Builders are pure: the same descriptor and shape always give the same
//! program. Operand addresses come from the descriptor's [`MemoryLayout`].

mod csr;
mod run;
mod spvv;
mod streams;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc::{accumulators_for, SimError, TimingConfig};
use crate::formats::{FormatError, LayoutError, MemoryLayout, ReductionOrder};
use crate::isa::{FReg, IsaError, ProgramBuilder, XReg};
use crate::stream::IndexWidth;

pub use csr::{build_csr_slice, build_csrmm, build_csrmv, CsrAddrs, CsrShape};
pub use run::{
    prepare_codebook, prepare_csrmm, prepare_csrmv, prepare_scatter, prepare_spvv, run_codebook, run_csrmm, run_csrmv,
    run_prepared, run_scatter, run_spvv, KernelRun, Prepared, ResultRegion, LAYOUT_BASE,
};
pub use spvv::build_spvv;
pub use streams::{build_codebook_decode, build_scatter};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kernel {
    Spvv,
    Csrmv,
    Csrmm,
    Codebook,
    Scatter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Base,
    Ssr,
    Issr,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Base, Variant::Ssr, Variant::Issr];
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Spvv => "spvv",
            Kernel::Csrmv => "csrmv",
            Kernel::Csrmm => "csrmm",
            Kernel::Codebook => "codebook",
            Kernel::Scatter => "scatter",
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Base => "base",
            Variant::Ssr => "ssr",
            Variant::Issr => "issr",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "ssr" => Ok(Variant::Ssr),
            "issr" => Ok(Variant::Issr),
            other => Err(format!("unknown variant `{other}` (expected base, ssr or issr)")),
        }
    }
}

/// Highest accumulator count the builders can allocate (`f2..`, `f31` is
/// reserved as a zero register and one integer register per constant).
pub const MAX_ACCUMULATORS: u8 = 11;

/// Everything a builder needs besides the operand shape.
#[derive(Debug, Clone)]
pub struct KernelDescriptor {
    pub kernel: Kernel,
    pub variant: Variant,
    pub width: IndexWidth,
    /// Accumulator registers used by ISSR reductions.
    pub accumulators: u8,
    /// Rows with at most this many nonzeros skip the FREP path.
    pub unroll: u8,
    /// Byte distance between consecutive CsrMV results.
    pub result_stride: u64,
    pub layout: MemoryLayout,
}

impl KernelDescriptor {
    /// Descriptor with accumulator count derived from the FPU latency and the
    /// ISSR peak rate of `width`, and the unroll threshold equal to it.
    pub fn new(kernel: Kernel, variant: Variant, width: IndexWidth, timing: &TimingConfig) -> Self {
        let k = default_accumulators(width, timing);
        Self {
            kernel,
            variant,
            width,
            accumulators: k,
            unroll: k,
            result_stride: 8,
            layout: MemoryLayout::new(LAYOUT_BASE, timing.memory_bytes()),
        }
    }

    /// Order in which this kernel accumulates, for bit-exact references.
    pub fn order(&self) -> ReductionOrder {
        reduction_order(self.kernel, self.variant, self.accumulators)
    }

    pub(crate) fn check(&self, kernel: Kernel) -> Result<(), KernelError> {
        if self.kernel != kernel {
            return Err(KernelError::Unsupported(format!("descriptor is for {}, not {kernel}", self.kernel)));
        }
        if self.variant == Variant::Issr && !(1..=MAX_ACCUMULATORS).contains(&self.accumulators) {
            return Err(KernelError::Unsupported(format!(
                "{} accumulators outside 1..={MAX_ACCUMULATORS}",
                self.accumulators
            )));
        }
        if self.unroll != self.accumulators && self.variant == Variant::Issr && kernel != Kernel::Spvv {
            return Err(KernelError::Unsupported("the unroll threshold must equal the accumulator count".into()));
        }
        Ok(())
    }

    pub(crate) fn addr(&self, region: &str) -> Result<u64, KernelError> {
        self.layout
            .get(region)
            .map(|r| r.base)
            .ok_or_else(|| KernelError::Unsupported(format!("layout has no `{region}` region")))
    }
}

pub fn default_accumulators(width: IndexWidth, timing: &TimingConfig) -> u8 {
    let lanes = u32::from(width.lanes());
    accumulators_for(timing.fpu_latency, lanes, lanes + 1).min(MAX_ACCUMULATORS)
}

pub fn reduction_order(kernel: Kernel, variant: Variant, accumulators: u8) -> ReductionOrder {
    match (variant, kernel) {
        (Variant::Issr, Kernel::Spvv) => ReductionOrder::Accumulated(accumulators),
        (Variant::Issr, Kernel::Csrmv | Kernel::Csrmm) => ReductionOrder::Unrolled(accumulators),
        _ => ReductionOrder::Sequential,
    }
}

// Register conventions shared by the builders.
pub(crate) const T0: XReg = XReg::of(1);
pub(crate) const T1: XReg = XReg::of(5);
pub(crate) const T2: XReg = XReg::of(6);
pub(crate) const T3: XReg = XReg::of(7);
pub(crate) const T4: XReg = XReg::of(2);
pub(crate) const T5: XReg = XReg::of(3);
pub(crate) const T6: XReg = XReg::of(4);
pub(crate) const S0: XReg = XReg::of(8);
pub(crate) const S1: XReg = XReg::of(9);
pub(crate) const A0: XReg = XReg::of(10);
pub(crate) const A1: XReg = XReg::of(11);
pub(crate) const A2: XReg = XReg::of(12);
pub(crate) const A3: XReg = XReg::of(13);
pub(crate) const A4: XReg = XReg::of(14);
pub(crate) const A5: XReg = XReg::of(15);
pub(crate) const A6: XReg = XReg::of(16);
pub(crate) const A7: XReg = XReg::of(17);
pub(crate) const S2: XReg = XReg::of(18);
pub(crate) const S3: XReg = XReg::of(19);
pub(crate) const S4: XReg = XReg::of(20);
/// `CONST_BASE + j - 1` holds the constant `j` for `j` in `1..=MAX_ACCUMULATORS`.
pub(crate) const CONST_BASE: u8 = 21;

pub(crate) const F_SSR: FReg = FReg::of(0);
pub(crate) const F_ISSR: FReg = FReg::of(1);
/// First accumulator; accumulators are consecutive.
pub(crate) const F_ACC: u8 = 2;
pub(crate) const F_ZERO: FReg = FReg::of(31);

pub(crate) fn facc(k: u8) -> FReg {
    FReg::of(F_ACC + k)
}

pub(crate) fn constant(j: u8) -> XReg {
    debug_assert!((1..=MAX_ACCUMULATORS).contains(&j));
    XReg::of(CONST_BASE + j - 1)
}

/// Load an address or count that must fit a sign-extended 32-bit immediate.
pub(crate) fn li(b: &mut ProgramBuilder, rd: XReg, value: u64) -> Result<(), KernelError> {
    let v = value as i64;
    let imm = i32::try_from(v)
        .map_err(|_| KernelError::Unsupported(format!("constant {value:#x} does not fit an immediate")))?;
    Ok(b.li(rd, imm)?)
}

/// `log2` of the index width in bytes.
pub(crate) fn width_shift(w: IndexWidth) -> u8 {
    match w {
        IndexWidth::W16 => 1,
        IndexWidth::W32 => 2,
    }
}

/// Linear reduction `f2 = ((f2 + f3) + f4) + ...` over `n` accumulators.
pub(crate) fn emit_linear_reduction(b: &mut ProgramBuilder, n: u8) -> Result<(), KernelError> {
    for k in 1..n {
        b.fadd(facc(0), facc(0), facc(k))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_accumulators_follow_peak_rate() {
        let t = TimingConfig::default();
        assert_eq!(default_accumulators(IndexWidth::W16, &t), 4);
        assert_eq!(default_accumulators(IndexWidth::W32, &t), 3);
        let fast = TimingConfig { fpu_latency: 1, ..t };
        assert_eq!(default_accumulators(IndexWidth::W16, &fast), 1);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>(), Ok(v));
        }
        assert!("fast".parse::<Variant>().is_err());
    }
}
