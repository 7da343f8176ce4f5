//! Cluster CsrMV: results independent of the tile plan, and throughput bounds
//! relative to a single core complex.

use issr_sim::cc::TimingConfig;
use issr_sim::cluster::{plan_tiles, simulate_cluster_csrmv, simulate_with_plan, ClusterConfig, TilePlan};
use issr_sim::formats::{csrmv_ref, gen_banded_csr, gen_dense, gen_random_csr, CsrMatrix};
use issr_sim::kernels::{default_accumulators, reduction_order, run_csrmv, Kernel, Variant};
use issr_sim::stream::IndexWidth;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Replace every tile's per-core split with random contiguous cuts.
fn scramble_splits(plan: &mut TilePlan, seed: u64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for t in &mut plan.tiles {
        let parts = t.core_rows.len();
        let mut cuts: Vec<usize> = (1..parts).map(|_| rng.random_range(t.rows.start..=t.rows.end)).collect();
        cuts.sort_unstable();
        let bounds: Vec<usize> = [t.rows.start].into_iter().chain(cuts).chain([t.rows.end]).collect();
        t.core_rows = bounds.windows(2).map(|w| w[0]..w[1]).collect();
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn result_is_identical_across_plans(
        variant in prop_oneof![Just(Variant::Base), Just(Variant::Ssr), Just(Variant::Issr)],
        width in prop_oneof![Just(IndexWidth::W16), Just(IndexWidth::W32)],
        rows in 1usize..160,
        max_row in 0usize..48,
        tcdm_kib in 12u64..64,
        seed: u64,
    ) {
        let m = gen_random_csr(rows, 256, 0, max_row, width, seed).unwrap();
        let x = gen_dense(256, seed ^ 5);
        let cfg = ClusterConfig { tcdm_bytes: tcdm_kib << 10, ..ClusterConfig::default() };
        let order = reduction_order(Kernel::Csrmv, variant, default_accumulators(width, &cfg.timing));
        let want = bits(&csrmv_ref(&m, &x, order).unwrap());
        let mut plan = plan_tiles(&m, width, cfg.tcdm_bytes, cfg.workers).unwrap();
        let planned = simulate_with_plan(&m, &x, variant, &plan, &cfg).unwrap();
        prop_assert_eq!(bits(&planned.y), want.clone());
        scramble_splits(&mut plan, seed);
        let scrambled = simulate_with_plan(&m, &x, variant, &plan, &cfg).unwrap();
        prop_assert_eq!(bits(&scrambled.y), want);
    }
}

fn synthetic(nbar: usize) -> (CsrMatrix, Vec<f64>) {
    (gen_banded_csr(2048, 2048, nbar, IndexWidth::W16, 70 + nbar as u64).unwrap(), gen_dense(2048, 71))
}

#[test]
fn contention_only_lowers_speedup() {
    let cfg = ClusterConfig::default();
    let t = TimingConfig::default();
    for nbar in [1, 10, 100] {
        let (m, x) = synthetic(nbar);
        let cycles = |v| simulate_cluster_csrmv(&m, &x, v, IndexWidth::W16, &cfg).unwrap().cycles as f64;
        let single = |v| run_csrmv(v, IndexWidth::W16, &m, &x, &t).unwrap().stats.cycles as f64;
        let cluster = cycles(Variant::Base) / cycles(Variant::Issr);
        let alone = single(Variant::Base) / single(Variant::Issr);
        assert!(cluster <= alone, "n={nbar}: cluster {cluster:.3} vs single {alone:.3}");
    }
}

#[test]
fn aggregate_throughput_within_eight_cores() {
    let cfg = ClusterConfig::default();
    let (m, x) = synthetic(100);
    let run = simulate_cluster_csrmv(&m, &x, Variant::Issr, IndexWidth::W16, &cfg).unwrap();
    let per_cycle = run.aggregate.fmadds as f64 / run.cycles as f64;
    assert!(per_cycle <= cfg.workers as f64 * 0.8, "{per_cycle}");
    assert!(run.per_core.iter().all(|s| s.utilization() <= 0.8));
}

#[test]
fn eight_issr_cores_match_forty_six_baseline_cores() {
    let cfg = ClusterConfig::default();
    let (m, x) = synthetic(100);
    let util = |v| simulate_cluster_csrmv(&m, &x, v, IndexWidth::W16, &cfg).unwrap().utilization();
    let (issr, base) = (util(Variant::Issr), util(Variant::Base));
    let ratio = 8.0 * issr / (46.0 * base);
    assert!((0.85..=1.15).contains(&ratio), "8 x {issr:.4} vs 46 x {base:.4}: ratio {ratio:.3}");
}
