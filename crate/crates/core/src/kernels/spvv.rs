use super::*;
use crate::isa::{Program, StaggerMask};
use crate::stream::{config_reg, Direction, IdxCfg, JobMode};

/// Sparse-dense dot product over `nnz` nonzeros. Layout regions: `vals`,
/// `idx`, `x` and the one-element result `y`.
pub fn build_spvv(desc: &KernelDescriptor, nnz: u64) -> Result<Program, KernelError> {
    desc.check(Kernel::Spvv)?;
    let (vals, idx, x, y) = (desc.addr("vals")?, desc.addr("idx")?, desc.addr("x")?, desc.addr("y")?);
    let mut b = ProgramBuilder::new();
    li(&mut b, A4, y)?;
    if nnz == 0 {
        b.fmv_zero(facc(0))?;
        b.fsd(facc(0), A4, 0)?;
        b.halt()?;
        return Ok(b.build()?);
    }
    let w = desc.width;
    match desc.variant {
        Variant::Base | Variant::Ssr => {
            let ssr = desc.variant == Variant::Ssr;
            li(&mut b, A0, idx)?;
            li(&mut b, A2, x)?;
            li(&mut b, A3, idx + nnz * w.bytes())?;
            if ssr {
                emit_affine_read(&mut b, vals, nnz)?;
                b.ssr_enable()?;
            } else {
                li(&mut b, A1, vals)?;
            }
            b.fmv_zero(facc(0))?;
            b.label("loop")?;
            emit_index_load(&mut b, w, T0, A0)?;
            if ssr {
                b.addi(A0, A0, w.bytes() as i32)?;
                b.slli(T0, T0, 3)?;
                b.add(T0, T0, A2)?;
                b.fld(FReg::of(4), T0, 0)?;
                b.fmadd(facc(0), F_SSR, FReg::of(4), facc(0))?;
            } else {
                b.fld(FReg::of(3), A1, 0)?;
                b.slli(T0, T0, 3)?;
                b.add(T0, T0, A2)?;
                b.fld(FReg::of(4), T0, 0)?;
                b.addi(A0, A0, w.bytes() as i32)?;
                b.addi(A1, A1, 8)?;
                b.fmadd(facc(0), FReg::of(3), FReg::of(4), facc(0))?;
            }
            b.bne(A0, A3, "loop")?;
            if ssr {
                b.ssr_disable()?;
            }
            b.fsd(facc(0), A4, 0)?;
        }
        Variant::Issr => {
            let k = desc.accumulators;
            emit_affine_read(&mut b, vals, nnz)?;
            emit_indirect_read(&mut b, idx, x, w, 0, nnz)?;
            b.ssr_enable()?;
            for a in 0..k {
                b.fmv_zero(facc(a))?;
            }
            li(&mut b, T1, nnz)?;
            b.frep(T1, 1, k - 1, StaggerMask::RD | StaggerMask::RS3)?;
            b.fmadd(facc(0), F_SSR, F_ISSR, facc(0))?;
            emit_linear_reduction(&mut b, k)?;
            b.fsd(facc(0), A4, 0)?;
            b.ssr_disable()?;
        }
    }
    b.halt()?;
    Ok(b.build()?)
}

/// `lh`/`lw` of one index depending on the width.
pub(crate) fn emit_index_load(b: &mut ProgramBuilder, w: IndexWidth, rd: XReg, base: XReg) -> Result<(), KernelError> {
    match w {
        IndexWidth::W16 => b.lh(rd, base, 0)?,
        IndexWidth::W32 => b.lw(rd, base, 0)?,
    }
    Ok(())
}

/// Launch a unit-stride read of `n` doubles on the SSR.
pub(crate) fn emit_affine_read(b: &mut ProgramBuilder, base: u64, n: u64) -> Result<(), KernelError> {
    li(b, T5, n)?;
    b.scfgw(T5, 0, config_reg::bounds(0))?;
    b.li(T6, 8)?;
    b.scfgw(T6, 0, config_reg::strides(0))?;
    li(b, T6, base)?;
    b.scfgw(T6, 0, config_reg::DATA_BASE)?;
    Ok(())
}

pub(crate) fn idxcfg(w: IndexWidth, shift: u8, direction: Direction) -> u64 {
    IdxCfg { mode: JobMode::Indirect, width: w, direction, shift }.pack()
}

/// Launch an indirect read of `n` elements gathering `data[idx[i]]` on the ISSR.
pub(crate) fn emit_indirect_read(
    b: &mut ProgramBuilder,
    idx: u64,
    data: u64,
    w: IndexWidth,
    shift: u8,
    n: u64,
) -> Result<(), KernelError> {
    li(b, T5, n)?;
    b.scfgw(T5, 1, config_reg::bounds(0))?;
    li(b, T6, idxcfg(w, shift, Direction::Read))?;
    b.scfgw(T6, 1, config_reg::IDXCFG)?;
    li(b, T6, idx)?;
    b.scfgw(T6, 1, config_reg::IDX_BASE)?;
    li(b, T6, data)?;
    b.scfgw(T6, 1, config_reg::DATA_BASE)?;
    Ok(())
}
