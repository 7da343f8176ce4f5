use super::spvv::idxcfg;
use super::*;
use crate::isa::{Program, StaggerMask};
use crate::stream::{config_reg, Direction, IdxCfg, JobMode};

const F_ONE: FReg = FReg::of(3);

/// `out[k] = table[codes[k]]`: the ISSR gathers table entries, the SSR
/// streams them to `out`, the FPU moves each value with a multiply by one.
/// Layout regions: `codes`, `table`, `out`, `one` (holding 1.0).
pub fn build_codebook_decode(desc: &KernelDescriptor, n: u64) -> Result<Program, KernelError> {
    desc.check(Kernel::Codebook)?;
    require_issr(desc)?;
    let (codes, table, out, one) = (desc.addr("codes")?, desc.addr("table")?, desc.addr("out")?, desc.addr("one")?);
    let mut b = ProgramBuilder::new();
    if n > 0 {
        let write = IdxCfg { mode: JobMode::Affine, width: IndexWidth::W32, direction: Direction::Write, shift: 0 };
        li(&mut b, T5, n)?;
        b.scfgw(T5, 0, config_reg::bounds(0))?;
        b.li(T6, 8)?;
        b.scfgw(T6, 0, config_reg::strides(0))?;
        li(&mut b, T6, write.pack())?;
        b.scfgw(T6, 0, config_reg::IDXCFG)?;
        li(&mut b, T6, out)?;
        b.scfgw(T6, 0, config_reg::DATA_BASE)?;
        b.scfgw(T5, 1, config_reg::bounds(0))?;
        li(&mut b, T6, idxcfg(desc.width, 0, Direction::Read))?;
        b.scfgw(T6, 1, config_reg::IDXCFG)?;
        li(&mut b, T6, codes)?;
        b.scfgw(T6, 1, config_reg::IDX_BASE)?;
        li(&mut b, T6, table)?;
        b.scfgw(T6, 1, config_reg::DATA_BASE)?;
        emit_stream_copy(&mut b, one, F_SSR, F_ISSR)?;
    }
    b.halt()?;
    Ok(b.build()?)
}

/// `y[idx[k]] = vals[k]`: the SSR streams values, the ISSR scatters them.
/// Duplicate indices resolve in stream order, so the last write wins.
/// Layout regions: `vals`, `idx`, `y`, `one` (holding 1.0).
pub fn build_scatter(desc: &KernelDescriptor, n: u64) -> Result<Program, KernelError> {
    desc.check(Kernel::Scatter)?;
    require_issr(desc)?;
    let (vals, idx, y, one) = (desc.addr("vals")?, desc.addr("idx")?, desc.addr("y")?, desc.addr("one")?);
    let mut b = ProgramBuilder::new();
    if n > 0 {
        li(&mut b, T5, n)?;
        b.scfgw(T5, 0, config_reg::bounds(0))?;
        b.li(T6, 8)?;
        b.scfgw(T6, 0, config_reg::strides(0))?;
        li(&mut b, T6, vals)?;
        b.scfgw(T6, 0, config_reg::DATA_BASE)?;
        b.scfgw(T5, 1, config_reg::bounds(0))?;
        li(&mut b, T6, idxcfg(desc.width, 0, Direction::Write))?;
        b.scfgw(T6, 1, config_reg::IDXCFG)?;
        li(&mut b, T6, idx)?;
        b.scfgw(T6, 1, config_reg::IDX_BASE)?;
        li(&mut b, T6, y)?;
        b.scfgw(T6, 1, config_reg::DATA_BASE)?;
        emit_stream_copy(&mut b, one, F_ISSR, F_SSR)?;
    }
    b.halt()?;
    Ok(b.build()?)
}

fn require_issr(desc: &KernelDescriptor) -> Result<(), KernelError> {
    if desc.variant != Variant::Issr {
        return Err(KernelError::Unsupported(format!("{} exists only as an issr kernel", desc.kernel)));
    }
    Ok(())
}

/// FREP over `dst = src * 1.0` for the element count held in `T5`.
fn emit_stream_copy(b: &mut ProgramBuilder, one: u64, dst: FReg, src: FReg) -> Result<(), KernelError> {
    li(b, T6, one)?;
    b.fld(F_ONE, T6, 0)?;
    b.ssr_enable()?;
    b.frep(T5, 1, 0, StaggerMask::NONE)?;
    b.fmul(dst, src, F_ONE)?;
    b.ssr_disable()?;
    Ok(())
}
