//! The acceptance checks: performance bands for every kernel family, the
//! cluster sweep, a seeded functional property suite and the stream
//! throughput ceiling. Shared by the `acceptance` test target and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cc::{run_to_quiescence, CoreComplex, CycleStats, TimingConfig};
use crate::cluster::{simulate_cluster_csrmv, ClusterConfig};
use crate::formats::{
    abs_terms, csrmm_ref, csrmv_ref, gen_banded_csr, gen_dense, gen_random_csr, gen_sparse_vector, gen_uniform_csr,
    relative_error, spvv_ref, CsrMatrix, ReductionOrder, SparseFiber,
};
use crate::kernels::{
    prepare_spvv, reduction_order, run_codebook, run_csrmm, run_csrmv, run_scatter, run_spvv, Kernel, KernelError,
    Variant,
};
use crate::mem::IdealMemory;
use crate::stream::{serialize_indices, AffineIter, IndexWidth, IndirectGen, ISSR_UNIT};

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    /// One human-readable report line; failures on the known-gap list say so.
    pub fn line(&self) -> String {
        let mut s =
            format!("[{}] {:>2}. {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.title, self.detail);
        if let (false, Some(why)) = (self.passed, known_gap(self.id)) {
            s.push_str(&format!(" (known gap: {why})"));
        }
        s
    }

    /// Failed and not excused by the known-gap list.
    pub fn unexpected_failure(&self) -> bool {
        !self.passed && known_gap(self.id).is_none()
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub timing: TimingConfig,
    pub cluster: ClusterConfig,
    /// Random instances per kernel variant in the functional suite.
    pub instances: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { timing: TimingConfig::default(), cluster: ClusterConfig::default(), instances: 200, seed: 0x1554 }
    }
}

pub const CRITERIA: u8 = 10;

/// Criteria the model misses with the default configuration, each with the
/// reason. They are still run and reported; callers decide whether a failure
/// listed here is fatal.
pub const KNOWN_GAPS: &[(u8, &str)] = &[
    (4, "32-bit ISSR setup ties the baseline at n=3; modeled setup is a few cycles shorter than the hardware's"),
    (8, "round-robin TCDM banks lose ~25% of ISSR requests under concurrent DMA, capping n=50 below 5x"),
];

pub fn known_gap(id: u8) -> Option<&'static str> {
    KNOWN_GAPS.iter().find(|g| g.0 == id).map(|g| g.1)
}

/// Run every criterion; results come back in criterion order.
pub fn run_all(opts: &VerifyOptions) -> Vec<CriterionResult> {
    (1..=CRITERIA).into_par_iter().map(|id| run_one(id, opts)).collect()
}

pub fn run_one(id: u8, opts: &VerifyOptions) -> CriterionResult {
    let (title, outcome) = match id {
        1 => ("baseline SpVV utilization", baseline_utilization(opts)),
        2 => ("SSR SpVV utilization", ssr_utilization(opts)),
        3 => ("ISSR SpVV ceilings", issr_ceilings(opts)),
        4 => ("small-n crossover", small_n_crossover(opts)),
        5 => ("CsrMV speedups", csrmv_speedups(opts)),
        6 => ("index-width crossover", width_crossover(opts)),
        7 => ("CsrMM tracks CsrMV", csrmm_tracks_csrmv(opts)),
        8 => ("cluster CsrMV", cluster_sweep(opts)),
        9 => ("functional oracle", functional_suite(opts)),
        10 => ("ISSR throughput ceiling", throughput_ceiling(opts)),
        _ => ("unknown criterion", Err(format!("no criterion {id}"))),
    };
    let (passed, detail) = match outcome {
        Ok((passed, detail)) => (passed, detail),
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult { id, title, passed, detail }
}

type Outcome = Result<(bool, String), String>;

fn err(e: KernelError) -> String {
    e.to_string()
}

const WIDTHS: [IndexWidth; 2] = [IndexWidth::W16, IndexWidth::W32];

fn spvv_stats(n: usize, variant: Variant, width: IndexWidth, opts: &VerifyOptions) -> Result<CycleStats, String> {
    let dim = 4096;
    let f = gen_sparse_vector(dim, n, IndexWidth::W16, opts.seed).map_err(|e| e.to_string())?;
    let x = gen_dense(dim, opts.seed + 1);
    Ok(run_spvv(variant, width, &f, &x, &opts.timing).map_err(err)?.stats)
}

fn band(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn baseline_utilization(opts: &VerifyOptions) -> Outcome {
    let u = spvv_stats(1000, Variant::Base, IndexWidth::W16, opts)?.utilization();
    Ok((band(u, 0.108, 0.114), format!("utilization {u:.4}, want 0.111 +- 0.003")))
}

fn ssr_utilization(opts: &VerifyOptions) -> Outcome {
    let u = spvv_stats(1000, Variant::Ssr, IndexWidth::W16, opts)?.utilization();
    Ok((band(u, 0.140, 0.146), format!("utilization {u:.4}, want 0.143 +- 0.003")))
}

fn issr_ceilings(opts: &VerifyOptions) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (w, lo, hi) in [(IndexWidth::W16, 0.75, 0.80), (IndexWidth::W32, 0.62, 0.667)] {
        let u: Vec<f64> = [10, 100, 1000]
            .iter()
            .map(|&n| spvv_stats(n, Variant::Issr, w, opts).map(|s| s.utilization()))
            .collect::<Result<_, _>>()?;
        let rising = u.windows(2).all(|p| p[0] < p[1]);
        ok &= band(u[2], lo, hi) && rising;
        parts.push(format!(
            "W{}: {:.4}/{:.4}/{:.4} at n=10/100/1000 (n=1000 want [{lo}, {hi}], rising: {rising})",
            w.bits(),
            u[0],
            u[1],
            u[2]
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn small_n_crossover(opts: &VerifyOptions) -> Outcome {
    let base = spvv_stats(3, Variant::Base, IndexWidth::W16, opts)?;
    let mut ok = true;
    let mut parts = vec![format!("base {:.4} ({} cycles)", base.utilization(), base.cycles)];
    for w in WIDTHS {
        let s = spvv_stats(3, Variant::Issr, w, opts)?;
        let rf = s.utilization_reduction_free();
        ok &= rf < base.utilization();
        parts.push(format!("issr W{} reduction-free {rf:.4} ({} cycles)", w.bits(), s.cycles));
    }
    Ok((ok, parts.join(", ")))
}

fn csrmv_cycles(nbar: usize, variant: Variant, width: IndexWidth, opts: &VerifyOptions) -> Result<u64, String> {
    let m = gen_banded_csr(512, 2048, nbar, IndexWidth::W16, opts.seed + 2).map_err(|e| e.to_string())?;
    let x = gen_dense(2048, opts.seed + 3);
    Ok(run_csrmv(variant, width, &m, &x, &opts.timing).map_err(err)?.stats.cycles)
}

fn csrmv_speedups(opts: &VerifyOptions) -> Outcome {
    let base = csrmv_cycles(100, Variant::Base, IndexWidth::W16, opts)? as f64;
    let mut ok = true;
    let mut parts = Vec::new();
    for (w, lo, hi) in [(IndexWidth::W16, 6.5, 7.2), (IndexWidth::W32, 5.4, 6.0)] {
        let s = base / csrmv_cycles(100, Variant::Issr, w, opts)? as f64;
        ok &= band(s, lo, hi);
        parts.push(format!("W{} {s:.3} (want [{lo}, {hi}])", w.bits()));
    }
    Ok((ok, parts.join(", ")))
}

fn width_crossover(opts: &VerifyOptions) -> Outcome {
    let c = |nbar, w| csrmv_cycles(nbar, Variant::Issr, w, opts);
    let (a16, a32) = (c(5, IndexWidth::W16)?, c(5, IndexWidth::W32)?);
    let (b16, b32) = (c(50, IndexWidth::W16)?, c(50, IndexWidth::W32)?);
    Ok((a32 < a16 && b16 < b32, format!("n=5: W16 {a16} vs W32 {a32} cycles; n=50: W16 {b16} vs W32 {b32} cycles")))
}

fn csrmm_tracks_csrmv(opts: &VerifyOptions) -> Outcome {
    let m = gen_uniform_csr(23, 23, 64, IndexWidth::W16, opts.seed + 4).map_err(|e| e.to_string())?;
    let x = gen_dense(23, opts.seed + 5);
    let b = gen_dense(46, opts.seed + 6);
    let mut ok = true;
    let mut parts = Vec::new();
    for w in WIDTHS {
        let mv = run_csrmv(Variant::Issr, w, &m, &x, &opts.timing).map_err(err)?.stats.utilization();
        let mm = run_csrmm(Variant::Issr, w, &m, &b, 2, &opts.timing).map_err(err)?.stats.utilization();
        let d = (mm - mv).abs();
        ok &= d <= 0.005;
        parts.push(format!("W{}: CsrMV {mv:.4}, CsrMM {mm:.4}, |diff| {d:.4}", w.bits()));
    }
    Ok((ok, format!("{} (want <= 0.005)", parts.join("; "))))
}

fn cluster_sweep(opts: &VerifyOptions) -> Outcome {
    let points: Vec<Result<(usize, f64, f64), String>> = [1usize, 10, 50, 100]
        .par_iter()
        .map(|&nbar| {
            let m = gen_banded_csr(4096, 2048, nbar, IndexWidth::W16, opts.seed + 7).map_err(|e| e.to_string())?;
            let x = gen_dense(2048, opts.seed + 8);
            let run = |v| simulate_cluster_csrmv(&m, &x, v, IndexWidth::W16, &opts.cluster).map_err(|e| e.to_string());
            let (base, issr) = (run(Variant::Base)?, run(Variant::Issr)?);
            Ok((nbar, base.cycles as f64 / issr.cycles as f64, issr.utilization()))
        })
        .collect();
    let points: Vec<(usize, f64, f64)> = points.into_iter().collect::<Result<_, _>>()?;
    let speedup = |n| points.iter().find(|p| p.0 == n).map_or(0.0, |p| p.1);
    let max = points.iter().map(|p| p.1).fold(0.0, f64::max);
    let util = points.iter().map(|p| p.2).fold(0.0, f64::max);
    let ok = band(speedup(1), 1.5, 2.3)
        && max <= 5.8
        && points.iter().filter(|p| p.0 >= 50).all(|p| p.1 >= 5.0)
        && util <= 0.73;
    let list: Vec<String> = points.iter().map(|p| format!("n={}: {:.3}x", p.0, p.1)).collect();
    Ok((
        ok,
        format!(
            "speedups {} (want n=1 in [1.5, 2.3], max <= 5.8, >= 5.0 from n=50); max issr utilization {util:.3} (want <= 0.73)",
            list.join(", ")
        ),
    ))
}

/// One random instance of a kernel family, checked against both references.
fn check_instance(kernel: Kernel, variant: Variant, seed: u64, timing: &TimingConfig) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = if rng.random_bool(0.5) { IndexWidth::W16 } else { IndexWidth::W32 };
    let k = crate::kernels::default_accumulators(width, timing);
    let order = reduction_order(kernel, variant, k);
    let fail = |what: &str| format!("{kernel} {variant} W{} seed {seed}: {what}", width.bits());
    match kernel {
        Kernel::Spvv => {
            let dim = rng.random_range(1..256);
            let nnz = rng.random_range(0..=dim.min(64));
            let f = gen_sparse_vector(dim, nnz, width, rng.random()).map_err(|e| fail(&e.to_string()))?;
            let x = gen_dense(dim, rng.random());
            let got = run_spvv(variant, width, &f, &x, timing).map_err(|e| fail(&e.to_string()))?.result;
            let want = spvv_ref(&f, &x, order).map_err(|e| fail(&e.to_string()))?;
            compare(&got, &[want], &[(f, x)], &fail)
        }
        Kernel::Csrmv | Kernel::Csrmm => {
            let rows = rng.random_range(0..12);
            let cols = rng.random_range(1..64);
            let m =
                gen_random_csr(rows, cols, 0, cols.min(12), width, rng.random()).map_err(|e| fail(&e.to_string()))?;
            let ncols = if kernel == Kernel::Csrmm { 1 << rng.random_range(0..3) } else { 1 };
            let b = gen_dense(cols * ncols, rng.random());
            let (got, want) = if kernel == Kernel::Csrmv {
                let r = run_csrmv(variant, width, &m, &b, timing).map_err(|e| fail(&e.to_string()))?;
                (r.result, csrmv_ref(&m, &b, order).map_err(|e| fail(&e.to_string()))?)
            } else {
                let r = run_csrmm(variant, width, &m, &b, ncols, timing).map_err(|e| fail(&e.to_string()))?;
                (r.result, csrmm_ref(&m, &b, ncols, order).map_err(|e| fail(&e.to_string()))?)
            };
            compare(&got, &want, &row_fibers(&m, &b, ncols), &fail)
        }
        Kernel::Codebook => {
            let table = gen_dense(rng.random_range(1..64), rng.random());
            let codes: Vec<u32> =
                (0..rng.random_range(0..80)).map(|_| rng.random_range(0..table.len() as u32)).collect();
            let got = run_codebook(width, &table, &codes, timing).map_err(|e| fail(&e.to_string()))?.result;
            let want: Vec<f64> = codes.iter().map(|&c| table[c as usize]).collect();
            bit_equal(&got, &want, &fail)
        }
        Kernel::Scatter => {
            let len = rng.random_range(1..64);
            let y0 = gen_dense(len, rng.random());
            let n = rng.random_range(0..80);
            let idx: Vec<u32> = (0..n).map(|_| rng.random_range(0..len as u32)).collect();
            let vals = gen_dense(n, rng.random());
            let got = run_scatter(width, &vals, &idx, &y0, timing).map_err(|e| fail(&e.to_string()))?.result;
            let mut want = y0;
            for (&i, &v) in idx.iter().zip(&vals) {
                want[i as usize] = v;
            }
            bit_equal(&got, &want, &fail)
        }
    }
}

/// Each result as a (fiber, dense operand) pair for the naive reference.
fn row_fibers(m: &CsrMatrix, b: &[f64], ncols: usize) -> Vec<(SparseFiber, Vec<f64>)> {
    let mut out = Vec::with_capacity(m.rows * ncols);
    for r in 0..m.rows {
        let f = m.row_fiber(r);
        for c in 0..ncols {
            let col: Vec<f64> = (0..m.cols).map(|k| b[k * ncols + c]).collect();
            out.push((f.clone(), col));
        }
    }
    out
}

fn bit_equal(got: &[f64], want: &[f64], fail: &dyn Fn(&str) -> String) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(fail(&format!("{} results, expected {}", got.len(), want.len())));
    }
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        if a.to_bits() != b.to_bits() {
            return Err(fail(&format!("result {i} is {a:e}, expected {b:e}")));
        }
    }
    Ok(())
}

fn compare(
    got: &[f64],
    want: &[f64],
    terms: &[(SparseFiber, Vec<f64>)],
    fail: &dyn Fn(&str) -> String,
) -> Result<(), String> {
    bit_equal(got, want, fail)?;
    for (i, (g, (f, x))) in got.iter().zip(terms).enumerate() {
        let naive = spvv_ref(f, x, ReductionOrder::Sequential).map_err(|e| fail(&e.to_string()))?;
        let scale = abs_terms(&f.values, f.indices.iter().map(|&k| x[k as usize]));
        let e = relative_error(*g, naive, scale);
        if e > 1e-10 {
            return Err(fail(&format!("result {i} has relative error {e:e} against the naive sum")));
        }
    }
    Ok(())
}

/// Examples of the serializer and address generators with hand-derived answers.
fn unit_examples() -> Result<usize, String> {
    let mut checks = 0;
    let mut expect = |ok: bool, what: &str| {
        checks += 1;
        if ok {
            Ok(())
        } else {
            Err(format!("unit example failed: {what}"))
        }
    };
    let word = 0xDEAD_BEEF_0123_4567;
    expect(serialize_indices(word, IndexWidth::W16, 0) == [0x4567, 0x0123, 0xBEEF, 0xDEAD], "16-bit lanes")?;
    expect(serialize_indices(word, IndexWidth::W32, 0) == [0x0123_4567, 0xDEAD_BEEF], "32-bit lanes")?;
    expect(serialize_indices(word, IndexWidth::W16, 2) == [0xBEEF, 0xDEAD], "16-bit lanes from offset 2")?;
    let a: Vec<u64> = AffineIter::new(0, [4, 1, 1, 1], [8, 0, 0, 0]).collect();
    expect(a == [0, 8, 16, 24], "contiguous affine stream")?;
    // The outer stride is added to the last inner address, not to the row start.
    let a: Vec<u64> = AffineIter::new(0, [2, 3, 1, 1], [8, 64, 0, 0]).collect();
    expect(a == [0, 8, 72, 80, 144, 152], "two-level affine stream")?;
    let a: Vec<u64> = AffineIter::new(0x2000, [1, 1, 1, 1], [0; 4]).collect();
    expect(a == [0x2000], "single-element affine stream")?;
    let gather = |count, index_base, width, data_base, shift, word: u64| {
        let mut g = IndirectGen::new(count, index_base, width, data_base, shift, 4);
        let first = g.index_request_addr();
        g.on_index_issued();
        g.deliver_word(word);
        let mut out = Vec::new();
        while let Some(a) = g.peek() {
            out.push(a);
            g.advance();
        }
        (first, out)
    };
    let (_, out) = gather(2, 0x1000, IndexWidth::W32, 0x2000, 0, 5 | (9 << 32));
    expect(out == [0x2028, 0x2048], "32-bit gather addresses")?;
    let (_, out) = gather(4, 0x1000, IndexWidth::W16, 0, 2, 1 | (2 << 16) | (3 << 32) | (4 << 48));
    expect(out == [0x20, 0x40, 0x60, 0x80], "16-bit gather with shift 2")?;
    let (first, out) = gather(1, 0x1002, IndexWidth::W16, 0, 0, 7 << 16);
    expect(first == 0x1000 && out == [7 * 8], "unaligned index array start")?;
    Ok(checks)
}

fn functional_suite(opts: &VerifyOptions) -> Outcome {
    let mut families: Vec<(Kernel, Variant)> = Vec::new();
    for k in [Kernel::Spvv, Kernel::Csrmv, Kernel::Csrmm] {
        families.extend(Variant::ALL.iter().map(|&v| (k, v)));
    }
    families.push((Kernel::Codebook, Variant::Issr));
    families.push((Kernel::Scatter, Variant::Issr));
    let failures: Vec<String> = families
        .par_iter()
        .flat_map_iter(|&(k, v)| {
            (0..opts.instances as u64)
                .filter_map(move |i| check_instance(k, v, opts.seed ^ (i << 8), &opts.timing).err())
        })
        .collect();
    let units = unit_examples();
    let total = families.len() * opts.instances;
    let mut detail = format!(
        "{}/{} instances over {} kernel variants match both references",
        total - failures.len(),
        total,
        families.len()
    );
    match &units {
        Ok(n) => detail.push_str(&format!("; {n} stream unit examples pass")),
        Err(e) => detail.push_str(&format!("; {e}")),
    }
    if let Some(first) = failures.first() {
        detail.push_str(&format!("; first failure: {first}"));
    }
    Ok((failures.is_empty() && units.is_ok(), detail))
}

/// Data grant cycles of the ISSR during a long dot product with ideal memory.
pub fn issr_grant_trace(width: IndexWidth, n: usize, timing: &TimingConfig, seed: u64) -> Result<Vec<u64>, String> {
    let dim = 8192;
    let f = gen_sparse_vector(dim, n, IndexWidth::W16, seed).map_err(|e| e.to_string())?;
    let x = gen_dense(dim, seed + 1);
    let p = prepare_spvv(Variant::Issr, width, &f, &x, timing).map_err(err)?;
    let mut cc = CoreComplex::new(0, *timing);
    cc.unit_mut(ISSR_UNIT).enable_trace();
    cc.load_program(p.program);
    let mut mem = p.memory;
    run_to_quiescence(&mut cc, &mut mem, &mut IdealMemory, u64::MAX).map_err(|e| e.to_string())?;
    Ok(cc.unit(ISSR_UNIT).data_grant_trace().unwrap_or_default().to_vec())
}

/// Largest number of grants in any `window`-cycle span, and the count in the
/// last full window.
pub fn window_counts(trace: &[u64], window: u64) -> (usize, usize) {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..trace.len() {
        while trace[hi] - trace[lo] >= window {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    let last = trace.last().copied().unwrap_or(0);
    let tail = trace.iter().filter(|&&c| c + window > last).count();
    (best, tail)
}

/// Grants trimmed at each end of the trace; covers a full index FIFO of
/// 16-bit lanes plus the data FIFO with margin.
const DRAIN_GRANTS: usize = 64;

fn throughput_ceiling(opts: &VerifyOptions) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (w, num, den) in [(IndexWidth::W16, 4u64, 5u64), (IndexWidth::W32, 2, 3)] {
        let trace = issr_grant_trace(w, 6000, &opts.timing, opts.seed)?;
        // Steady state leaves out the start-up and the final drain: once the
        // last index word is fetched the port stops alternating and buffered
        // indices are served back to back.
        let edge = DRAIN_GRANTS.min(trace.len() / 2);
        let steady = &trace[edge..trace.len() - edge];
        let (best, tail) = window_counts(steady, 1000);
        // A window can start on a grant, so it holds up to the rounded-up share.
        let ceiling = (1000 * num).div_ceil(den);
        let near = tail as f64 >= 0.99 * 1000.0 * num as f64 / den as f64;
        ok &= best as u64 <= ceiling && near;
        parts.push(format!("W{}: max {best}, last window {tail} per 1000 cycles (ceiling {ceiling})", w.bits()));
    }
    Ok((ok, parts.join("; ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts_on_a_regular_trace() {
        let trace: Vec<u64> = (0..5000).filter(|c| c % 5 != 4).collect();
        assert_eq!(window_counts(&trace, 1000), (800, 800));
        assert_eq!(window_counts(&[], 10), (0, 0));
    }

    #[test]
    fn unit_examples_pass() {
        assert_eq!(unit_examples(), Ok(9));
    }

    #[test]
    fn small_functional_suite_passes() {
        let opts = VerifyOptions { instances: 10, ..VerifyOptions::default() };
        let (ok, detail) = functional_suite(&opts).unwrap();
        assert!(ok, "{detail}");
    }

    #[test]
    fn unknown_criterion_fails_cleanly() {
        let r = run_one(11, &VerifyOptions::default());
        assert!(!r.passed);
        assert!(r.line().starts_with("[FAIL]"));
    }
}
