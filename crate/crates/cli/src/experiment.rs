//! Expands a kernel subcommand into points, runs them in parallel and checks
//! every result bit for bit against the reference that replays the kernel's
//! reduction order. Rows come back in grid order: size, then width, then
//! variant.

use std::collections::HashMap;

use issr_sim::cc::{StatsRow, TimingConfig};
use issr_sim::cluster::{simulate_cluster_csrmv, ClusterConfig, ClusterError};
use issr_sim::formats::{
    csrmm_ref, csrmv_ref, gen_banded_csr, gen_dense, gen_sparse_vector, load_matrix_market, spvv_ref, CsrMatrix,
};
use issr_sim::isa::Program;
use issr_sim::kernels::{
    build_csrmm, build_csrmv, build_spvv, default_accumulators, prepare_codebook, prepare_csrmm, prepare_csrmv,
    prepare_scatter, prepare_spvv, reduction_order, run_prepared, CsrShape, Kernel, KernelDescriptor, KernelError,
    Prepared, Variant,
};
use issr_sim::stream::IndexWidth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::{ClusterArgs, Common, CsrArgs, KernelCommand, SpvvArgs, StreamArgs};

/// Bad input: nothing was run.
#[derive(Debug)]
pub struct InputError(pub String);

impl<E: std::fmt::Display> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub rows: Vec<StatsRow>,
    /// One diagnostic per point whose result disagreed or whose run faulted.
    pub mismatches: Vec<String>,
}

/// What one point contributes.
#[derive(Debug, Default)]
struct PointOut {
    rows: Vec<StatsRow>,
    mismatch: Option<String>,
    plan: Option<PlanDump>,
}

#[derive(Debug, Serialize)]
struct PlanDump {
    size: String,
    variant: String,
    w: u32,
    plan: issr_sim::cluster::TilePlan,
}

type Job<'a> = Box<dyn Fn() -> Result<PointOut, InputError> + Send + Sync + 'a>;

pub fn run(cmd: &KernelCommand) -> Result<Outcome, InputError> {
    let common = cmd.common();
    if common.variants.is_empty() || common.widths.is_empty() {
        return Err(InputError("at least one variant and one index width are required".into()));
    }
    let timing = common.timing.config().map_err(InputError)?;
    match cmd {
        KernelCommand::Spvv(a) => spvv(a, &timing),
        KernelCommand::Csrmv(a) => csr(a, &timing, 1),
        KernelCommand::Csrmm(a) => {
            if !a.ncols.is_power_of_two() {
                return Err(InputError(format!("--ncols must be a power of two, got {}", a.ncols)));
            }
            csr(&a.csr, &timing, a.ncols)
        }
        KernelCommand::ClusterCsrmv(a) => cluster(a, &timing),
        KernelCommand::Codebook(a) => streams(a, &timing, Kernel::Codebook),
        KernelCommand::Scatter(a) => streams(a, &timing, Kernel::Scatter),
    }
}

fn execute(jobs: Vec<Job<'_>>) -> Result<(Outcome, Vec<PlanDump>), InputError> {
    let outs: Vec<Result<PointOut, InputError>> = jobs.par_iter().map(|j| j()).collect();
    let mut outcome = Outcome::default();
    let mut plans = Vec::new();
    for o in outs {
        let o = o?;
        outcome.rows.extend(o.rows);
        outcome.mismatches.extend(o.mismatch);
        plans.extend(o.plan);
    }
    fill_speedups(&mut outcome.rows);
    Ok((outcome, plans))
}

/// Speedup over the base row with the same kernel, width and size.
fn fill_speedups(rows: &mut [StatsRow]) {
    let base: HashMap<(String, u32, String), u64> = rows
        .iter()
        .filter(|r| r.variant == Variant::Base.to_string())
        .map(|r| ((r.kernel.clone(), r.w, r.size.clone()), r.cycles))
        .collect();
    for r in rows.iter_mut() {
        if let Some(&b) = base.get(&(r.kernel.clone(), r.w, r.size.clone())) {
            r.speedup_vs_base = Some(b as f64 / r.cycles.max(1) as f64);
        }
    }
}

/// First differing result, if any.
fn compare(got: &[f64], want: &[f64]) -> Option<String> {
    if got.len() != want.len() {
        return Some(format!("{} results, expected {}", got.len(), want.len()));
    }
    got.iter()
        .zip(want)
        .position(|(a, b)| a.to_bits() != b.to_bits())
        .map(|i| format!("result {i} is {:e}, reference {:e}", got[i], want[i]))
}

fn label(kernel: &str, variant: Variant, w: IndexWidth, size: &str) -> String {
    format!("{kernel} {variant} w={w} size={size}")
}

/// Kernel errors from the simulator are run failures; the rest mean the
/// point cannot be built from the given input.
fn simulate(
    p: &Prepared,
    timing: &TimingConfig,
) -> Result<Result<(Vec<f64>, issr_sim::cc::CycleStats), String>, InputError> {
    match run_prepared(p, timing) {
        Ok(r) => Ok(Ok((r.result, r.stats))),
        Err(e @ KernelError::Sim(_)) => Ok(Err(format!("fault: {e}"))),
        Err(e) => Err(e.into()),
    }
}

/// Rebuild the program with `k` accumulators when the override applies.
fn override_k(
    p: &mut Prepared,
    k: Option<u8>,
    build: impl Fn(&KernelDescriptor) -> Result<Program, KernelError>,
) -> Result<(), InputError> {
    if let (Some(k), Variant::Issr) = (k, p.desc.variant) {
        p.desc.accumulators = k;
        p.desc.unroll = k;
        p.program = build(&p.desc)?;
    }
    Ok(())
}

/// Run a prepared point and turn it into a row plus an optional mismatch.
fn finish(
    kernel: &str,
    size: &str,
    p: &Prepared,
    timing: &TimingConfig,
    want: Vec<f64>,
) -> Result<PointOut, InputError> {
    let (variant, w) = (p.desc.variant, p.desc.width);
    let name = label(kernel, variant, w, size);
    Ok(match simulate(p, timing)? {
        Ok((got, stats)) => PointOut {
            rows: vec![StatsRow::new(kernel, &variant.to_string(), w.bits(), size, &stats)],
            mismatch: compare(&got, &want).map(|m| format!("{name}: {m}")),
            plan: None,
        },
        Err(fault) => PointOut { mismatch: Some(format!("{name}: {fault}")), ..PointOut::default() },
    })
}

fn points(common: &Common, sizes: usize) -> Vec<(usize, IndexWidth, Variant)> {
    let mut out = Vec::new();
    for s in 0..sizes {
        for &w in &common.widths {
            for &v in &common.variants {
                out.push((s, w, v));
            }
        }
    }
    out
}

fn spvv(a: &SpvvArgs, timing: &TimingConfig) -> Result<Outcome, InputError> {
    let dim = a.dim.unwrap_or_else(|| a.nnz.iter().copied().max().unwrap_or(0).max(4096));
    let x = gen_dense(dim, a.common.seed ^ 0x5eed);
    let fibers = a
        .nnz
        .iter()
        .enumerate()
        .map(|(i, &n)| gen_sparse_vector(dim, n, IndexWidth::W32, a.common.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let x = &x;
    let jobs: Vec<Job> = points(&a.common, fibers.len())
        .into_iter()
        .map(|(s, w, v)| {
            let f = &fibers[s];
            Box::new(move || {
                let mut p = prepare_spvv(v, w, f, x, timing)?;
                override_k(&mut p, a.accumulators, |d| build_spvv(d, f.nnz() as u64))?;
                let want = spvv_ref(f, x, p.desc.order())?;
                finish("spvv", &f.nnz().to_string(), &p, timing, vec![want])
            }) as Job
        })
        .collect();
    Ok(execute(jobs)?.0)
}

/// Matrices from files, or the synthetic fixed-row-length grid.
fn matrices(a: &CsrArgs, default_rows: usize) -> Result<Vec<(String, CsrMatrix)>, InputError> {
    if !a.matrix.is_empty() {
        return a
            .matrix
            .iter()
            .map(|p| {
                let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                Ok((name, load_matrix_market(p)?))
            })
            .collect();
    }
    let rows = a.rows.unwrap_or(default_rows);
    a.nnz_per_row
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let m = gen_banded_csr(rows, a.cols, n, IndexWidth::W32, a.common.seed.wrapping_add(i as u64))?;
            Ok((n.to_string(), m))
        })
        .collect()
}

fn csr(a: &CsrArgs, timing: &TimingConfig, ncols: usize) -> Result<Outcome, InputError> {
    let mats = matrices(a, 512)?;
    let dense: Vec<Vec<f64>> = mats.iter().map(|(_, m)| gen_dense(m.cols * ncols, a.common.seed ^ 0x5eed)).collect();
    let kernel = if ncols == 1 { "csrmv" } else { "csrmm" };
    let (mats, dense) = (&mats, &dense);
    let jobs: Vec<Job> = points(&a.common, mats.len())
        .into_iter()
        .map(|(s, w, v)| {
            Box::new(move || {
                let (size, m) = &mats[s];
                let b = &dense[s];
                let p = if ncols == 1 {
                    let mut p = prepare_csrmv(v, w, m, b, timing)?;
                    override_k(&mut p, a.accumulators, |d| build_csrmv(d, m.rows))?;
                    let want = csrmv_ref(m, b, p.desc.order())?;
                    (p, want)
                } else {
                    let mut p = prepare_csrmm(v, w, m, b, ncols, timing)?;
                    override_k(&mut p, a.accumulators, |d| build_csrmm(d, CsrShape { rows: m.rows, ncols }))?;
                    let want = csrmm_ref(m, b, ncols, p.desc.order())?;
                    (p, want)
                };
                finish(kernel, size, &p.0, timing, p.1)
            }) as Job
        })
        .collect();
    Ok(execute(jobs)?.0)
}

fn cluster(a: &ClusterArgs, timing: &TimingConfig) -> Result<Outcome, InputError> {
    if a.csr.accumulators.is_some() {
        return Err(InputError(
            "--accumulators applies to single-complex kernels; the cluster derives K from --latency".into(),
        ));
    }
    if a.workers == 0 {
        return Err(InputError("--workers must be at least 1".into()));
    }
    let cfg = ClusterConfig {
        workers: a.workers,
        tcdm_bytes: a.tcdm_kib << 10,
        barrier_cycles: a.barrier_cycles,
        timing: *timing,
        ..ClusterConfig::default()
    };
    let mats = matrices(&a.csr, 4096)?;
    let xs: Vec<Vec<f64>> = mats.iter().map(|(_, m)| gen_dense(m.cols, a.csr.common.seed ^ 0x5eed)).collect();
    let (mats, xs, cfg) = (&mats, &xs, &cfg);
    let jobs: Vec<Job> = points(&a.csr.common, mats.len())
        .into_iter()
        .map(|(s, w, v)| {
            Box::new(move || {
                let (size, m) = &mats[s];
                let x = &xs[s];
                let name = label("cluster-csrmv", v, w, size);
                let run = match simulate_cluster_csrmv(m, x, v, w, cfg) {
                    Ok(r) => r,
                    Err(
                        e @ (ClusterError::Sim(_) | ClusterError::Dma(_) | ClusterError::Kernel(KernelError::Sim(_))),
                    ) => return Ok(PointOut { mismatch: Some(format!("{name}: fault: {e}")), ..PointOut::default() }),
                    Err(e) => return Err(e.into()),
                };
                let order = reduction_order(Kernel::Csrmv, v, default_accumulators(w, &cfg.timing));
                let want = csrmv_ref(m, x, order)?;
                // Wall-clock cycles; utilization stays the per-worker average.
                let mut row = StatsRow::new("cluster-csrmv", &v.to_string(), w.bits(), size.as_str(), &run.aggregate);
                row.cycles = run.cycles;
                let mut rows = vec![row];
                if a.per_core {
                    for (i, s) in run.per_core.iter().enumerate() {
                        rows.push(StatsRow::new(
                            "cluster-csrmv",
                            &v.to_string(),
                            w.bits(),
                            format!("{size}/core{i}"),
                            s,
                        ));
                    }
                }
                Ok(PointOut {
                    rows,
                    mismatch: compare(&run.y, &want).map(|e| format!("{name}: {e}")),
                    plan: Some(PlanDump { size: size.clone(), variant: v.to_string(), w: w.bits(), plan: run.plan }),
                })
            }) as Job
        })
        .collect();
    let (outcome, plans) = execute(jobs)?;
    if let Some(path) = &a.plan {
        let text = serde_json::to_string_pretty(&plans)?;
        std::fs::write(path, text).map_err(|e| InputError(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(outcome)
}

fn streams(a: &StreamArgs, timing: &TimingConfig, kernel: Kernel) -> Result<Outcome, InputError> {
    if !a.common.variants.contains(&Variant::Issr) {
        return Err(InputError(format!("{kernel} only exists for the issr variant")));
    }
    if a.len == 0 {
        return Err(InputError("--len must be at least 1".into()));
    }
    let mut common = a.common.clone();
    common.variants = vec![Variant::Issr];
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let cases: Vec<(Vec<u32>, Vec<f64>)> = a
        .count
        .iter()
        .map(|&n| {
            let idx = (0..n).map(|_| rng.random_range(0..a.len as u32)).collect();
            (idx, gen_dense(n, rng.random()))
        })
        .collect();
    let base = gen_dense(a.len, a.common.seed ^ 0x5eed);
    let (cases, base) = (&cases, &base);
    let name = kernel.to_string();
    let name = name.as_str();
    let jobs: Vec<Job> = points(&common, cases.len())
        .into_iter()
        .map(|(s, w, _)| {
            Box::new(move || {
                let (idx, vals) = &cases[s];
                let (p, want) = if kernel == Kernel::Codebook {
                    let want: Vec<f64> = idx.iter().map(|&c| base[c as usize]).collect();
                    (prepare_codebook(w, base, idx, timing)?, want)
                } else {
                    let mut want = base.clone();
                    for (&i, &v) in idx.iter().zip(vals) {
                        want[i as usize] = v;
                    }
                    (prepare_scatter(w, vals, idx, base, timing)?, want)
                };
                finish(name, &idx.len().to_string(), &p, timing, want)
            }) as Job
        })
        .collect();
    Ok(execute(jobs)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, size: &str, cycles: u64) -> StatsRow {
        let s = issr_sim::cc::CycleStats { cycles, ..Default::default() };
        StatsRow::new("spvv", variant, 16, size, &s)
    }

    #[test]
    fn speedups_pair_rows_by_size() {
        let mut rows = vec![row("base", "10", 100), row("issr", "10", 25), row("issr", "20", 10)];
        fill_speedups(&mut rows);
        assert_eq!(rows[0].speedup_vs_base, Some(1.0));
        assert_eq!(rows[1].speedup_vs_base, Some(4.0));
        assert_eq!(rows[2].speedup_vs_base, None);
    }

    #[test]
    fn compare_names_the_first_difference() {
        assert_eq!(compare(&[1.0, 2.0], &[1.0, 2.0]), None);
        assert!(compare(&[1.0, 2.0], &[1.0, 3.0]).unwrap().starts_with("result 1"));
        assert!(compare(&[0.0], &[-0.0]).is_some());
        assert!(compare(&[], &[1.0]).is_some());
    }

    #[test]
    fn grid_order_is_size_then_width_then_variant() {
        let common = Common {
            variants: vec![Variant::Base, Variant::Issr],
            widths: vec![IndexWidth::W16, IndexWidth::W32],
            seed: 1,
            output: None,
            timing: crate::TimingArgs { latency: None, data_fifo: None, index_fifo: None, fpu_queue: None },
        };
        let p = points(&common, 2);
        assert_eq!(p.len(), 8);
        assert_eq!(p[0], (0, IndexWidth::W16, Variant::Base));
        assert_eq!(p[1], (0, IndexWidth::W16, Variant::Issr));
        assert_eq!(p[2], (0, IndexWidth::W32, Variant::Base));
        assert_eq!(p[4].0, 1);
    }
}
