//! Eight-worker cluster running CsrMV out of a shared banked TCDM, with a
//! scripted data mover double-buffering matrix tiles from main memory.
//!
//! All complexes, the DMA engine and the TCDM advance on one clock. Worker
//! `c` drives requester `2c` (core, FPU and SSR) and `2c + 1` (ISSR); the DMA
//! engine is the last requester.

mod plan;

use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::cc::{CoreComplex, CycleStats, SimError, TimingConfig};
use crate::formats::{write_indices, CsrMatrix};
use crate::kernels::{build_csr_slice, CsrAddrs, CsrShape, Kernel, KernelDescriptor, KernelError, Variant};
use crate::mem::{Arbiter, DmaDescriptor, DmaEngine, DmaError, DmaStats, Memory, PortRequest, Tcdm, TcdmStats};
use crate::stream::IndexWidth;

pub use plan::{plan_tiles, split_rows, tile_bytes, Tile, TilePlan};

/// Start of main memory; everything below is TCDM.
pub const MAIN_MEMORY_BASE: u64 = 0x8000_0000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("dense vector of {bytes} bytes leaves no room for two tile buffers in a {tcdm}-byte TCDM")]
    VectorTooLarge { bytes: u64, tcdm: u64 },
    #[error("row {row} needs {bytes} bytes, more than the {budget}-byte tile buffer")]
    RowTooLarge { row: usize, bytes: u64, budget: u64 },
    #[error("dense vector has length {got}, matrix has {want} columns")]
    Dimension { got: usize, want: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dma(#[from] DmaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClusterConfig {
    pub workers: usize,
    pub tcdm_bytes: u64,
    pub dma_startup: u32,
    /// Cost of leaving a barrier once the last participant arrived.
    pub barrier_cycles: u64,
    /// Worker timing; the address width is overridden to span the TCDM.
    pub timing: TimingConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { workers: 8, tcdm_bytes: 256 << 10, dma_startup: 4, barrier_cycles: 10, timing: TimingConfig::default() }
    }
}

impl ClusterConfig {
    fn worker_timing(&self) -> TimingConfig {
        TimingConfig { addr_bits: self.tcdm_bytes.next_power_of_two().trailing_zeros(), ..self.timing }
    }

    fn dma_requester(&self) -> u16 {
        (2 * self.workers) as u16
    }
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub y: Vec<f64>,
    pub cycles: u64,
    pub per_core: Vec<CycleStats>,
    /// Counter-wise sum over workers; `cycles` is the worker-cycle total.
    pub aggregate: CycleStats,
    pub tcdm: TcdmStats,
    pub dma: DmaStats,
    pub plan: TilePlan,
    /// Cycles all workers spent waiting before the first tile arrived.
    pub initial_transfer_cycles: u64,
}

impl ClusterRun {
    /// Useful FPU operations over all worker cycles.
    pub fn utilization(&self) -> f64 {
        self.aggregate.utilization()
    }
}

/// Addresses of the matrix, vector and result in main memory.
#[derive(Debug, Clone, Copy)]
struct MainLayout {
    ptr: u64,
    idx: u64,
    vals: u64,
    x: u64,
    y: u64,
}

fn align64(n: u64) -> u64 {
    n.div_ceil(64) * 64
}

fn load_main(m: &CsrMatrix, x: &[f64], width: IndexWidth, mem: &mut Memory) -> MainLayout {
    let ptr = MAIN_MEMORY_BASE;
    let idx = ptr + align64(4 * m.ptr.len() as u64);
    let vals = idx + align64(width.bytes() * m.nnz() as u64);
    let xa = vals + align64(8 * m.nnz() as u64);
    let y = xa + align64(8 * x.len() as u64);
    mem.write_u32s(ptr, &m.ptr);
    write_indices(mem, idx, &m.idx, width);
    mem.write_f64s(vals, &m.vals);
    mem.write_f64s(xa, x);
    MainLayout { ptr, idx, vals, x: xa, y }
}

/// Where one tile's arrays land inside its buffer, plus the kernel's view of
/// them.
#[derive(Debug, Clone, Copy)]
struct TileImage {
    ptr: u64,
    vals: u64,
    idx: u64,
    y: u64,
}

struct Cluster<'a> {
    cfg: &'a ClusterConfig,
    m: &'a CsrMatrix,
    plan: &'a TilePlan,
    main: MainLayout,
    mem: Memory,
    tcdm: Tcdm,
    dma: DmaEngine,
    workers: Vec<CoreComplex>,
    running: Vec<bool>,
    cycle: u64,
    reqs: Vec<PortRequest>,
    grants: Vec<bool>,
}

impl Cluster<'_> {
    /// Queue the transfers bringing tile `k` into its buffer.
    fn fetch_tile(&mut self, k: usize) -> Result<(TileImage, u64), ClusterError> {
        let t = &self.plan.tiles[k];
        let w = self.plan.width.bytes();
        let buf = self.plan.buffers[t.buffer];
        let rows = t.rows.len() as u64;
        let p0 = u64::from(self.m.ptr[t.rows.start]);
        let mut last = 0;
        let mut copy = |dma: &mut DmaEngine, src: u64, dst: u64, bytes: u64| -> Result<(), DmaError> {
            if bytes > 0 {
                last = dma.submit(DmaDescriptor::contiguous(src, dst, bytes.div_ceil(8) * 8))?;
            }
            Ok(())
        };
        let ptr_src = self.main.ptr + 4 * t.rows.start as u64;
        let ptr_off = ptr_src % 8;
        copy(&mut self.dma, ptr_src - ptr_off, buf, ptr_off + 4 * (rows + 1))?;
        let ptr_bytes = (ptr_off + 4 * (rows + 1) + 8).div_ceil(8) * 8;
        let idx_buf = buf + ptr_bytes;
        let idx_src = self.main.idx + w * p0;
        let idx_off = idx_src % 8;
        copy(&mut self.dma, idx_src - idx_off, idx_buf, idx_off + w * t.nnz)?;
        let vals_buf = idx_buf + (w * t.nnz + 8).div_ceil(8) * 8;
        copy(&mut self.dma, self.main.vals + 8 * p0, vals_buf, 8 * t.nnz)?;
        let y = vals_buf + 8 * t.nnz;
        debug_assert!(y + 8 * rows <= buf + self.plan.buffer_bytes);
        let image = TileImage {
            ptr: buf + ptr_off,
            vals: vals_buf.wrapping_sub(8 * p0),
            idx: (idx_buf + idx_off).wrapping_sub(w * p0),
            y,
        };
        Ok((image, last))
    }

    fn write_back(&mut self, k: usize, image: &TileImage) -> Result<u64, ClusterError> {
        let rows = &self.plan.tiles[k].rows;
        let desc = DmaDescriptor::contiguous(image.y, self.main.y + 8 * rows.start as u64, 8 * rows.len() as u64);
        Ok(self.dma.submit(desc)?)
    }

    fn load_programs(&mut self, k: usize, image: &TileImage, variant: Variant) -> Result<(), ClusterError> {
        let t = &self.plan.tiles[k];
        let desc = KernelDescriptor::new(Kernel::Csrmv, variant, self.plan.width, &self.cfg.worker_timing());
        for (c, range) in t.core_rows.iter().enumerate() {
            if range.is_empty() {
                continue;
            }
            let first = (range.start - t.rows.start) as u64;
            let addrs = CsrAddrs {
                ptr: image.ptr + 4 * first,
                vals: image.vals,
                idx: image.idx,
                x: self.plan.x_addr,
                y: image.y + 8 * first,
                y_stride: 8,
            };
            let program = build_csr_slice(&desc, CsrShape { rows: range.len(), ncols: 1 }, &addrs)?;
            self.workers[c].load_program(program);
            self.running[c] = true;
        }
        Ok(())
    }

    /// Advance every participant by one cycle.
    fn step(&mut self) -> Result<(), ClusterError> {
        self.reqs.clear();
        let mut owners: Vec<(usize, usize)> = Vec::with_capacity(2 * self.workers.len());
        for (c, cc) in self.workers.iter_mut().enumerate() {
            if !self.running[c] {
                continue;
            }
            for (p, r) in cc.propose()?.into_iter().enumerate() {
                if let Some(req) = r {
                    owners.push((c, p));
                    self.reqs.push(PortRequest { requester: (2 * c + p) as u16, req });
                }
            }
        }
        let dma_from = self.reqs.len();
        self.dma.propose(&self.mem, &mut self.reqs);
        self.tcdm.arbitrate(self.cycle, &self.reqs, &mut self.grants);
        let mut port_grants = vec![[false; 2]; self.workers.len()];
        for (i, &(c, p)) in owners.iter().enumerate() {
            port_grants[c][p] = self.grants[i];
        }
        for c in 0..self.workers.len() {
            if self.running[c] {
                self.workers[c].commit(port_grants[c], &mut self.mem)?;
                if self.workers[c].is_quiescent() {
                    self.running[c] = false;
                }
            } else {
                self.workers[c].idle_cycle();
            }
        }
        self.dma.commit(self.cycle, &self.grants[dma_from..], &mut self.mem);
        self.cycle += 1;
        Ok(())
    }

    /// Run until every worker finished and transfer `until` (if any) completed,
    /// then pay the barrier exit cost.
    fn barrier(&mut self, until: Option<u64>) -> Result<(), ClusterError> {
        while self.running.iter().any(|&r| r) || until.is_some_and(|id| !self.dma.is_complete(id)) {
            self.step()?;
        }
        for _ in 0..self.cfg.barrier_cycles {
            self.step()?;
        }
        Ok(())
    }
}

/// Multicore CsrMV with all operands starting in main memory and the result
/// written back to it.
pub fn simulate_cluster_csrmv(
    m: &CsrMatrix,
    x: &[f64],
    variant: Variant,
    width: IndexWidth,
    cfg: &ClusterConfig,
) -> Result<ClusterRun, ClusterError> {
    let plan = plan_tiles(m, width, cfg.tcdm_bytes, cfg.workers)?;
    simulate_with_plan(m, x, variant, &plan, cfg)
}

/// As [`simulate_cluster_csrmv`] with a caller-provided tile plan.
pub fn simulate_with_plan(
    m: &CsrMatrix,
    x: &[f64],
    variant: Variant,
    plan: &TilePlan,
    cfg: &ClusterConfig,
) -> Result<ClusterRun, ClusterError> {
    if x.len() != m.cols {
        return Err(ClusterError::Dimension { got: x.len(), want: m.cols });
    }
    m.check_width(plan.width).map_err(KernelError::from)?;
    let mut mem = Memory::new();
    let main = load_main(m, x, plan.width, &mut mem);
    let timing = cfg.worker_timing();
    let mut cl = Cluster {
        cfg,
        m,
        plan,
        main,
        mem,
        tcdm: Tcdm::new(cfg.dma_requester() + 1),
        dma: DmaEngine::new(cfg.dma_requester(), cfg.tcdm_bytes, cfg.dma_startup),
        workers: (0..cfg.workers).map(|c| CoreComplex::new(c, timing)).collect(),
        running: vec![false; cfg.workers],
        cycle: 0,
        reqs: Vec::new(),
        grants: Vec::new(),
    };
    // The vector goes first and is not overlapped with computation.
    let mut pending = if x.is_empty() {
        None
    } else {
        Some(cl.dma.submit(DmaDescriptor::contiguous(main.x, plan.x_addr, 8 * x.len() as u64))?)
    };
    let mut images = Vec::with_capacity(plan.tiles.len());
    if !plan.tiles.is_empty() {
        let (img, id) = cl.fetch_tile(0)?;
        images.push(img);
        pending = Some(pending.map_or(id, |p| p.max(id)));
    }
    cl.barrier(pending)?;
    let initial_transfer_cycles = cl.cycle;
    for k in 0..plan.tiles.len() {
        cl.load_programs(k, &images[k], variant)?;
        let mut wait = None;
        if k > 0 {
            wait = Some(cl.write_back(k - 1, &images[k - 1])?);
        }
        if k + 1 < plan.tiles.len() {
            let (img, id) = cl.fetch_tile(k + 1)?;
            images.push(img);
            wait = Some(id);
        }
        cl.barrier(wait)?;
    }
    if let Some(k) = plan.tiles.len().checked_sub(1) {
        let id = cl.write_back(k, &images[k])?;
        while !cl.dma.is_complete(id) {
            cl.step()?;
        }
    }
    let y = cl.mem.read_f64s(main.y, m.rows);
    let per_core: Vec<CycleStats> = cl.workers.iter().map(|w| w.stats().clone()).collect();
    let mut aggregate = CycleStats::with_timing(timing);
    for s in &per_core {
        aggregate.accumulate(s);
    }
    Ok(ClusterRun {
        y,
        cycles: cl.cycle,
        per_core,
        aggregate,
        tcdm: cl.tcdm.stats().clone(),
        dma: cl.dma.stats().clone(),
        plan: plan.clone(),
        initial_transfer_cycles,
    })
}

/// Exit cycle of a barrier: the last arrival plus a constant polling cost.
pub fn barrier_exit(arrivals: &[u64], cost: u64) -> u64 {
    arrivals.iter().copied().max().unwrap_or(0) + cost
}

/// Row ranges of a plan in matrix order, for checking that they partition
/// the matrix.
pub fn all_core_ranges(plan: &TilePlan) -> Vec<Range<usize>> {
    plan.tiles.iter().flat_map(|t| t.core_rows.iter().cloned()).collect()
}
