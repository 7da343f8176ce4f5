use super::*;
use crate::cc::{simulate_cc, CycleStats};
use crate::formats::{write_indices, CsrMatrix, SparseFiber};
use crate::isa::Program;
use crate::mem::Memory;

/// Lowest address used for operands of single-complex runs.
pub const LAYOUT_BASE: u64 = 0x1000;

/// Where a kernel leaves its results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResultRegion {
    pub addr: u64,
    pub count: usize,
    pub stride: u64,
}

impl ResultRegion {
    pub fn read(&self, mem: &Memory) -> Vec<f64> {
        (0..self.count as u64).map(|i| mem.read_f64(self.addr + i * self.stride)).collect()
    }
}

/// A built program together with its initial memory image.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub desc: KernelDescriptor,
    pub program: Program,
    pub memory: Memory,
    pub result: ResultRegion,
}

#[derive(Debug, Clone)]
pub struct KernelRun {
    pub result: Vec<f64>,
    pub stats: CycleStats,
    pub memory: Memory,
}

pub fn run_prepared(p: &Prepared, timing: &TimingConfig) -> Result<KernelRun, KernelError> {
    let (memory, stats) = simulate_cc(&p.program, timing, p.memory.clone())?;
    Ok(KernelRun { result: p.result.read(&memory), stats, memory })
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), KernelError> {
    if got != want {
        return Err(FormatError::Dimension(format!("{what} has length {got}, expected {want}")).into());
    }
    Ok(())
}

fn check_indices(idx: &[u32], width: IndexWidth) -> Result<(), KernelError> {
    if width == IndexWidth::W16 {
        if let Some(&i) = idx.iter().find(|&&i| i > u32::from(u16::MAX)) {
            return Err(FormatError::IndexTooWide { n: i as usize + 1, width: 16 }.into());
        }
    }
    Ok(())
}

/// Index arrays start `width` bytes past a word boundary, exercising the
/// serializer's unaligned start.
fn alloc_indices(
    layout: &mut MemoryLayout,
    mem: &mut Memory,
    idx: &[u32],
    width: IndexWidth,
) -> Result<u64, KernelError> {
    let base = layout.alloc_skewed("idx", idx.len() as u64 * width.bytes(), 8, width.bytes())?;
    write_indices(mem, base, idx, width);
    Ok(base)
}

fn alloc_f64s(layout: &mut MemoryLayout, mem: &mut Memory, name: &str, v: &[f64]) -> Result<u64, KernelError> {
    let base = layout.alloc(name, 8 * v.len() as u64, 8)?;
    mem.write_f64s(base, v);
    Ok(base)
}

pub fn prepare_spvv(
    variant: Variant,
    width: IndexWidth,
    f: &SparseFiber,
    x: &[f64],
    timing: &TimingConfig,
) -> Result<Prepared, KernelError> {
    f.validate()?;
    check_len("dense vector", x.len(), f.dim)?;
    check_indices(&f.indices, width)?;
    let mut desc = KernelDescriptor::new(Kernel::Spvv, variant, width, timing);
    let mut mem = Memory::new();
    alloc_f64s(&mut desc.layout, &mut mem, "vals", &f.values)?;
    alloc_indices(&mut desc.layout, &mut mem, &f.indices, width)?;
    alloc_f64s(&mut desc.layout, &mut mem, "x", x)?;
    let y = alloc_f64s(&mut desc.layout, &mut mem, "y", &[f64::NAN])?;
    let program = build_spvv(&desc, f.nnz() as u64)?;
    Ok(Prepared { desc, program, memory: mem, result: ResultRegion { addr: y, count: 1, stride: 8 } })
}

fn layout_csr(desc: &mut KernelDescriptor, mem: &mut Memory, m: &CsrMatrix) -> Result<(), KernelError> {
    m.validate()?;
    m.check_width(desc.width)?;
    let ptr = desc.layout.alloc("ptr", 4 * m.ptr.len() as u64, 4)?;
    mem.write_u32s(ptr, &m.ptr);
    alloc_f64s(&mut desc.layout, mem, "vals", &m.vals)?;
    alloc_indices(&mut desc.layout, mem, &m.idx, desc.width)?;
    Ok(())
}

pub fn prepare_csrmv(
    variant: Variant,
    width: IndexWidth,
    m: &CsrMatrix,
    x: &[f64],
    timing: &TimingConfig,
) -> Result<Prepared, KernelError> {
    check_len("dense vector", x.len(), m.cols)?;
    let mut desc = KernelDescriptor::new(Kernel::Csrmv, variant, width, timing);
    let mut mem = Memory::new();
    layout_csr(&mut desc, &mut mem, m)?;
    alloc_f64s(&mut desc.layout, &mut mem, "x", x)?;
    let y = alloc_f64s(&mut desc.layout, &mut mem, "y", &vec![f64::NAN; m.rows])?;
    let program = build_csrmv(&desc, m.rows)?;
    Ok(Prepared { desc, program, memory: mem, result: ResultRegion { addr: y, count: m.rows, stride: 8 } })
}

/// `b` is row-major with `ncols` columns; the result is row-major too.
pub fn prepare_csrmm(
    variant: Variant,
    width: IndexWidth,
    m: &CsrMatrix,
    b: &[f64],
    ncols: usize,
    timing: &TimingConfig,
) -> Result<Prepared, KernelError> {
    check_len("dense matrix", b.len(), m.cols * ncols)?;
    let mut desc = KernelDescriptor::new(Kernel::Csrmm, variant, width, timing);
    let mut mem = Memory::new();
    layout_csr(&mut desc, &mut mem, m)?;
    alloc_f64s(&mut desc.layout, &mut mem, "b", b)?;
    let y = alloc_f64s(&mut desc.layout, &mut mem, "y", &vec![f64::NAN; m.rows * ncols])?;
    let program = build_csrmm(&desc, CsrShape { rows: m.rows, ncols })?;
    Ok(Prepared { desc, program, memory: mem, result: ResultRegion { addr: y, count: m.rows * ncols, stride: 8 } })
}

/// The table sits flush against the top of the address space, so a code
/// past its end faults as an address overflow.
pub fn prepare_codebook(
    width: IndexWidth,
    table: &[f64],
    codes: &[u32],
    timing: &TimingConfig,
) -> Result<Prepared, KernelError> {
    check_indices(codes, width)?;
    let mut desc = KernelDescriptor::new(Kernel::Codebook, Variant::Issr, width, timing);
    let mut mem = Memory::new();
    let t = desc.layout.alloc_at_top("table", 8 * table.len() as u64)?;
    mem.write_f64s(t, table);
    alloc_f64s(&mut desc.layout, &mut mem, "one", &[1.0])?;
    let codes_base = desc.layout.alloc_skewed("codes", codes.len() as u64 * width.bytes(), 8, width.bytes())?;
    write_indices(&mut mem, codes_base, codes, width);
    let out = alloc_f64s(&mut desc.layout, &mut mem, "out", &vec![f64::NAN; codes.len()])?;
    let program = build_codebook_decode(&desc, codes.len() as u64)?;
    Ok(Prepared { desc, program, memory: mem, result: ResultRegion { addr: out, count: codes.len(), stride: 8 } })
}

/// Scatter `vals` into a copy of `y` at positions `idx`.
pub fn prepare_scatter(
    width: IndexWidth,
    vals: &[f64],
    idx: &[u32],
    y: &[f64],
    timing: &TimingConfig,
) -> Result<Prepared, KernelError> {
    check_len("index array", idx.len(), vals.len())?;
    check_indices(idx, width)?;
    if let Some(&i) = idx.iter().find(|&&i| i as usize >= y.len()) {
        return Err(FormatError::Invalid(format!("scatter index {i} outside {} outputs", y.len())).into());
    }
    let mut desc = KernelDescriptor::new(Kernel::Scatter, Variant::Issr, width, timing);
    let mut mem = Memory::new();
    alloc_f64s(&mut desc.layout, &mut mem, "one", &[1.0])?;
    alloc_f64s(&mut desc.layout, &mut mem, "vals", vals)?;
    alloc_indices(&mut desc.layout, &mut mem, idx, width)?;
    let yb = alloc_f64s(&mut desc.layout, &mut mem, "y", y)?;
    let program = build_scatter(&desc, vals.len() as u64)?;
    Ok(Prepared { desc, program, memory: mem, result: ResultRegion { addr: yb, count: y.len(), stride: 8 } })
}

pub fn run_spvv(
    variant: Variant,
    width: IndexWidth,
    f: &SparseFiber,
    x: &[f64],
    timing: &TimingConfig,
) -> Result<KernelRun, KernelError> {
    run_prepared(&prepare_spvv(variant, width, f, x, timing)?, timing)
}

pub fn run_csrmv(
    variant: Variant,
    width: IndexWidth,
    m: &CsrMatrix,
    x: &[f64],
    timing: &TimingConfig,
) -> Result<KernelRun, KernelError> {
    run_prepared(&prepare_csrmv(variant, width, m, x, timing)?, timing)
}

pub fn run_csrmm(
    variant: Variant,
    width: IndexWidth,
    m: &CsrMatrix,
    b: &[f64],
    ncols: usize,
    timing: &TimingConfig,
) -> Result<KernelRun, KernelError> {
    run_prepared(&prepare_csrmm(variant, width, m, b, ncols, timing)?, timing)
}

pub fn run_codebook(
    width: IndexWidth,
    table: &[f64],
    codes: &[u32],
    timing: &TimingConfig,
) -> Result<KernelRun, KernelError> {
    run_prepared(&prepare_codebook(width, table, codes, timing)?, timing)
}

pub fn run_scatter(
    width: IndexWidth,
    vals: &[f64],
    idx: &[u32],
    y: &[f64],
    timing: &TimingConfig,
) -> Result<KernelRun, KernelError> {
    run_prepared(&prepare_scatter(width, vals, idx, y, timing)?, timing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{csrmv_ref, dot, gen_banded_csr, gen_dense, gen_sparse_vector, spvv_ref};

    fn t() -> TimingConfig {
        TimingConfig::default()
    }

    #[test]
    fn spvv_ones_example_all_variants() {
        let f = SparseFiber::new(vec![1.0, 2.0, 3.0], vec![0, 2, 4], 5).unwrap();
        for v in Variant::ALL {
            for w in [IndexWidth::W16, IndexWidth::W32] {
                let r = run_spvv(v, w, &f, &[1.0; 5], &t()).unwrap();
                assert_eq!(r.result, vec![6.0], "{v} {w}");
                assert!(r.stats.accounting_consistent());
            }
        }
    }

    #[test]
    fn empty_spvv_stores_zero_quickly() {
        let f = SparseFiber::new(vec![], vec![], 4).unwrap();
        for v in Variant::ALL {
            let r = run_spvv(v, IndexWidth::W32, &f, &[1.0; 4], &t()).unwrap();
            assert_eq!(r.result[0].to_bits(), 0.0f64.to_bits());
            assert!(r.stats.cycles < 30, "{v}: {}", r.stats.cycles);
        }
    }

    #[test]
    fn spvv_matches_order_reference() {
        for (seed, n) in [(1, 257), (2, 3), (3, 64)] {
            let f = gen_sparse_vector(3000, n, IndexWidth::W16, seed).unwrap();
            let x = gen_dense(3000, seed + 100);
            for v in Variant::ALL {
                for w in [IndexWidth::W16, IndexWidth::W32] {
                    let p = prepare_spvv(v, w, &f, &x, &t()).unwrap();
                    let want = spvv_ref(&f, &x, p.desc.order()).unwrap();
                    let got = run_prepared(&p, &t()).unwrap().result[0];
                    assert_eq!(got.to_bits(), want.to_bits(), "{v} {w} n={n}");
                    let naive = dot(&f, &x).unwrap();
                    assert!((got - naive).abs() <= 1e-10 * naive.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn csrmv_matches_order_reference() {
        let m = crate::formats::gen_random_csr(60, 200, 0, 12, IndexWidth::W16, 5).unwrap();
        let x = gen_dense(200, 6);
        for v in Variant::ALL {
            for w in [IndexWidth::W16, IndexWidth::W32] {
                let p = prepare_csrmv(v, w, &m, &x, &t()).unwrap();
                let want = csrmv_ref(&m, &x, p.desc.order()).unwrap();
                let got = run_prepared(&p, &t()).unwrap().result;
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&got), bits(&want), "{v} {w}");
            }
        }
    }

    #[test]
    fn one_row_csrmv_is_close_to_spvv() {
        let m = gen_banded_csr(1, 2000, 300, IndexWidth::W16, 1).unwrap();
        let x = gen_dense(2000, 2);
        let f = m.row_fiber(0);
        let mv = run_csrmv(Variant::Issr, IndexWidth::W16, &m, &x, &t()).unwrap();
        let vv = run_spvv(Variant::Issr, IndexWidth::W16, &f, &x, &t()).unwrap();
        assert!(mv.stats.cycles.abs_diff(vv.stats.cycles) < 40, "{} vs {}", mv.stats.cycles, vv.stats.cycles);
    }

    #[test]
    fn codebook_example() {
        let r = run_codebook(IndexWidth::W16, &[1.5, 2.5], &[0, 1, 1, 0], &t()).unwrap();
        assert_eq!(r.result, vec![1.5, 2.5, 2.5, 1.5]);
    }

    #[test]
    fn codebook_index_past_table_faults() {
        let err = run_codebook(IndexWidth::W32, &[1.5, 2.5], &[0, 2], &t()).unwrap_err();
        assert!(matches!(err, KernelError::Sim(crate::cc::SimError::Fault { .. })), "{err:?}");
    }

    #[test]
    fn scatter_example() {
        let r = run_scatter(IndexWidth::W16, &[7.0, 8.0], &[3, 1], &[0.0; 4], &t()).unwrap();
        assert_eq!(r.result, vec![0.0, 8.0, 0.0, 7.0]);
    }
}
