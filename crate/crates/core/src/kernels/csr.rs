use super::spvv::{emit_index_load, idxcfg};
use super::*;
use crate::isa::{Program, StaggerMask};
use crate::stream::{config_reg, Direction};

/// Operand shape of a CSR product: `rows` sparse rows times `ncols` dense
/// columns (1 for a matrix-vector product).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsrShape {
    pub rows: usize,
    pub ncols: usize,
}

/// Absolute operand addresses of one CSR row slice.
///
/// Row pointers hold offsets into the value and index arrays; `vals` and
/// `idx` are the addresses offset 0 would have, so a slice whose pointers
/// start at `p0` may place its fiber anywhere by passing
/// `buffer - p0 * element_size` (wrapping).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsrAddrs {
    pub ptr: u64,
    pub vals: u64,
    pub idx: u64,
    /// Dense vector, or the first column of the row-major dense matrix.
    pub x: u64,
    pub y: u64,
    /// Byte distance between results of consecutive rows.
    pub y_stride: u64,
}

/// CSR matrix times dense vector. Layout regions: `ptr`, `vals`, `idx`,
/// `x`, `y`.
pub fn build_csrmv(desc: &KernelDescriptor, rows: usize) -> Result<Program, KernelError> {
    desc.check(Kernel::Csrmv)?;
    let addrs = CsrAddrs {
        ptr: desc.addr("ptr")?,
        vals: desc.addr("vals")?,
        idx: desc.addr("idx")?,
        x: desc.addr("x")?,
        y: desc.addr("y")?,
        y_stride: desc.result_stride,
    };
    build_csr_slice(desc, CsrShape { rows, ncols: 1 }, &addrs)
}

/// CSR matrix times a row-major dense matrix with a power-of-two column
/// count, giving a row-major result. Layout regions: `ptr`, `vals`, `idx`,
/// `b`, `y`.
pub fn build_csrmm(desc: &KernelDescriptor, shape: CsrShape) -> Result<Program, KernelError> {
    desc.check(Kernel::Csrmm)?;
    let addrs = CsrAddrs {
        ptr: desc.addr("ptr")?,
        vals: desc.addr("vals")?,
        idx: desc.addr("idx")?,
        x: desc.addr("b")?,
        y: desc.addr("y")?,
        y_stride: 8 * shape.ncols as u64,
    };
    build_csr_slice(desc, shape, &addrs)
}

/// Builder shared by CsrMV, CsrMM and the cluster workers.
pub fn build_csr_slice(desc: &KernelDescriptor, shape: CsrShape, a: &CsrAddrs) -> Result<Program, KernelError> {
    if !shape.ncols.is_power_of_two() || shape.ncols.trailing_zeros() > 31 {
        return Err(KernelError::Unsupported(format!("dense column count {} is not a power of two", shape.ncols)));
    }
    let mut b = ProgramBuilder::new();
    if shape.rows > 0 {
        CsrEmitter { b: &mut b, desc, shape, a, shift: shape.ncols.trailing_zeros() as u8 }.emit()?;
    }
    b.halt()?;
    Ok(b.build()?)
}

struct CsrEmitter<'a> {
    b: &'a mut ProgramBuilder,
    desc: &'a KernelDescriptor,
    shape: CsrShape,
    a: &'a CsrAddrs,
    /// Extra index shift selecting rows of the dense matrix.
    shift: u8,
}

// Registers: A0 pointer cursor, A1 index cursor, A2 value cursor, A3 dense
// column base, A4 index base, A7 value base, A5 result cursor, A6 pointer
// end, S1 first pointer, S2 result column base, S3 first value, S4 first
// index, S0 remaining columns, T1 previous pointer.
impl CsrEmitter<'_> {
    fn emit(&mut self) -> Result<(), KernelError> {
        let (a, rows) = (self.a, self.shape.rows as u64);
        let ws = width_shift(self.desc.width);
        let variant = self.desc.variant;
        let columns = self.shape.ncols > 1;
        li(self.b, A3, a.x)?;
        li(self.b, S2, a.y)?;
        if columns {
            li(self.b, S0, self.shape.ncols as u64)?;
        }
        // Every column reruns the complete matrix-vector kernel.
        self.b.label("col")?;
        li(self.b, A0, a.ptr)?;
        self.b.lw(S1, A0, 0)?;
        li(self.b, A4, a.idx)?;
        li(self.b, A7, a.vals)?;
        li(self.b, A6, a.ptr + 4 * (rows + 1))?;
        self.b.slli(T0, S1, ws)?;
        self.b.add(S4, T0, A4)?;
        self.b.slli(T0, S1, 3)?;
        self.b.add(S3, T0, A7)?;
        match variant {
            Variant::Base => {
                self.b.mv(A1, S4)?;
                self.b.mv(A2, S3)?;
            }
            Variant::Ssr => {
                self.b.lw(T2, A0, (4 * rows) as i32)?;
                self.b.li(T6, 8)?;
                self.b.sub(T3, T2, S1)?;
                self.b.scfgw(T3, 0, config_reg::bounds(0))?;
                self.b.scfgw(T6, 0, config_reg::strides(0))?;
                self.b.scfgw(S3, 0, config_reg::DATA_BASE)?;
                self.b.mv(A1, S4)?;
                self.b.ssr_enable()?;
            }
            Variant::Issr => {
                self.b.lw(T2, A0, (4 * rows) as i32)?;
                self.b.li(T6, 8)?;
                self.b.sub(T3, T2, S1)?;
                self.b.scfgw(T3, 0, config_reg::bounds(0))?;
                self.b.scfgw(T6, 0, config_reg::strides(0))?;
                self.b.scfgw(S3, 0, config_reg::DATA_BASE)?;
                self.b.scfgw(T3, 1, config_reg::bounds(0))?;
                li(self.b, T6, idxcfg(self.desc.width, self.shift, Direction::Read))?;
                self.b.scfgw(T6, 1, config_reg::IDXCFG)?;
                self.b.scfgw(S4, 1, config_reg::IDX_BASE)?;
                self.b.scfgw(A3, 1, config_reg::DATA_BASE)?;
                for j in 1..=self.desc.accumulators {
                    self.b.li(constant(j), i32::from(j))?;
                }
                self.b.fmv_zero(F_ZERO)?;
                self.b.ssr_enable()?;
            }
        }
        self.b.addi(A0, A0, 4)?;
        self.b.mv(T1, S1)?;
        self.b.mv(A5, S2)?;
        self.b.label("row")?;
        match variant {
            Variant::Base | Variant::Ssr => self.emit_scalar_row()?,
            Variant::Issr => self.emit_issr_row()?,
        }
        self.b.label("rows_done")?;
        if variant != Variant::Base {
            self.b.ssr_disable()?;
        }
        if columns {
            self.b.addi(A3, A3, 8)?;
            self.b.addi(S2, S2, 8)?;
            self.b.addi(S0, S0, -1)?;
            self.b.bne(S0, XReg::ZERO, "col")?;
        }
        Ok(())
    }

    fn y_stride(&self) -> Result<i32, KernelError> {
        i32::try_from(self.a.y_stride)
            .map_err(|_| KernelError::Unsupported(format!("result stride {} too large", self.a.y_stride)))
    }

    /// Row loop of the base and SSR variants: one fused multiply-add chain per row.
    fn emit_scalar_row(&mut self) -> Result<(), KernelError> {
        let w = self.desc.width;
        let ssr = self.desc.variant == Variant::Ssr;
        let (f_val, f_x) = (FReg::of(3), FReg::of(4));
        let b = &mut *self.b;
        b.lw(T2, A0, 0)?;
        b.addi(A0, A0, 4)?;
        b.fmv_zero(facc(0))?;
        b.slli(T3, T2, width_shift(w))?;
        b.add(T3, T3, A4)?;
        b.bne(A1, T3, "inner")?;
        b.j("store")?;
        b.label("inner")?;
        emit_index_load(b, w, T0, A1)?;
        if ssr {
            b.addi(A1, A1, w.bytes() as i32)?;
            b.slli(T0, T0, 3 + self.shift)?;
            b.add(T0, T0, A3)?;
            b.fld(f_x, T0, 0)?;
            b.fmadd(facc(0), F_SSR, f_x, facc(0))?;
        } else {
            b.fld(f_val, A2, 0)?;
            b.slli(T0, T0, 3 + self.shift)?;
            b.add(T0, T0, A3)?;
            b.fld(f_x, T0, 0)?;
            b.addi(A1, A1, w.bytes() as i32)?;
            b.addi(A2, A2, 8)?;
            b.fmadd(facc(0), f_val, f_x, facc(0))?;
        }
        b.bne(A1, T3, "inner")?;
        b.label("store")?;
        b.fsd(facc(0), A5, 0)?;
        let ys = self.y_stride()?;
        self.b.addi(A5, A5, ys)?;
        self.b.bne(A0, A6, "row")?;
        Ok(())
    }

    /// Row dispatch of the ISSR variant: rows with at most `K` nonzeros run
    /// straight-line products, longer rows add an FREP over the remainder.
    fn emit_issr_row(&mut self) -> Result<(), KernelError> {
        let k = self.desc.accumulators;
        self.b.lw(T2, A0, 0)?;
        self.b.addi(A0, A0, 4)?;
        self.b.sub(T3, T2, T1)?;
        self.b.mv(T1, T2)?;
        self.b.bne(T3, constant(1), "not1")?;
        self.emit_short_case(1)?;
        self.b.label("not1")?;
        self.b.blt(constant(k), T3, "long")?;
        if k == 1 {
            self.emit_short_case(0)?;
        } else {
            self.b.blt(T3, constant(1), "case0")?;
            for m in 2..k {
                self.b.blt(T3, constant(m + 1), &format!("case{m}"))?;
            }
            self.emit_short_case(k)?;
            self.b.label("case0")?;
            self.emit_short_case(0)?;
            for m in 2..k {
                self.b.label(format!("case{m}"))?;
                self.emit_short_case(m)?;
            }
        }
        self.b.label("long")?;
        for j in 0..k {
            self.b.fmul(facc(j), F_SSR, F_ISSR)?;
        }
        self.b.addi(T4, T3, -i32::from(k))?;
        self.b.frep(T4, 1, k - 1, StaggerMask::RD | StaggerMask::RS3)?;
        self.b.fmadd(facc(0), F_SSR, F_ISSR, facc(0))?;
        emit_linear_reduction(self.b, k)?;
        self.b.fsd(facc(0), A5, 0)?;
        self.emit_row_tail()
    }

    fn emit_short_case(&mut self, m: u8) -> Result<(), KernelError> {
        if m == 0 {
            self.b.fsd(F_ZERO, A5, 0)?;
        } else {
            for j in 0..m {
                self.b.fmul(facc(j), F_SSR, F_ISSR)?;
            }
            emit_linear_reduction(self.b, m)?;
            self.b.fsd(facc(0), A5, 0)?;
        }
        self.emit_row_tail()
    }

    fn emit_row_tail(&mut self) -> Result<(), KernelError> {
        let ys = self.y_stride()?;
        self.b.addi(A5, A5, ys)?;
        self.b.bne(A0, A6, "row")?;
        self.b.j("rows_done")?;
        Ok(())
    }
}
