//! Kernel results against the order-replicating references, stall accounting
//! and format invariants over random inputs.

use issr_sim::cc::TimingConfig;
use issr_sim::formats::{
    csrmm_ref, csrmv_ref, gen_banded_csr, gen_dense, gen_random_csr, gen_sparse_vector, read_matrix_market, spvv_ref,
    write_matrix_market,
};
use issr_sim::kernels::{default_accumulators, reduction_order, run_csrmm, run_csrmv, run_spvv, Kernel, Variant};
use issr_sim::stream::IndexWidth;
use proptest::prelude::*;

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Base), Just(Variant::Ssr), Just(Variant::Issr)]
}

fn width_strategy() -> impl Strategy<Value = IndexWidth> {
    prop_oneof![Just(IndexWidth::W16), Just(IndexWidth::W32)]
}

/// Peak fmadds per cycle a variant's data supply allows.
fn ceiling(variant: Variant, width: IndexWidth) -> f64 {
    match (variant, width) {
        (Variant::Issr, IndexWidth::W16) => 0.8,
        (Variant::Issr, IndexWidth::W32) => 2.0 / 3.0,
        _ => 1.0,
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spvv_is_bit_exact_and_accounted(
        variant in variant_strategy(),
        width in width_strategy(),
        dim in 1usize..600,
        density in 0.0f64..1.0,
        seed: u64,
    ) {
        let t = TimingConfig::default();
        let nnz = (dim as f64 * density) as usize;
        let f = gen_sparse_vector(dim, nnz, width, seed).unwrap();
        let x = gen_dense(dim, seed ^ 1);
        let run = run_spvv(variant, width, &f, &x, &t).unwrap();
        let order = reduction_order(Kernel::Spvv, variant, default_accumulators(width, &t));
        prop_assert_eq!(bits(&run.result), bits(&[spvv_ref(&f, &x, order).unwrap()]));
        prop_assert!(run.stats.accounting_consistent());
        prop_assert_eq!(run.stats.fmadds, nnz as u64);
        prop_assert!(run.stats.utilization() <= ceiling(variant, width));
    }

    #[test]
    fn csrmv_is_bit_exact_and_accounted(
        variant in variant_strategy(),
        width in width_strategy(),
        rows in 0usize..24,
        cols in 1usize..200,
        max_row in 0usize..40,
        seed: u64,
    ) {
        let t = TimingConfig::default();
        let m = gen_random_csr(rows, cols, 0, max_row.min(cols), width, seed).unwrap();
        prop_assert!(m.validate().is_ok());
        let x = gen_dense(cols, seed ^ 2);
        let run = run_csrmv(variant, width, &m, &x, &t).unwrap();
        let order = reduction_order(Kernel::Csrmv, variant, default_accumulators(width, &t));
        prop_assert_eq!(bits(&run.result), bits(&csrmv_ref(&m, &x, order).unwrap()));
        prop_assert!(run.stats.accounting_consistent());
        prop_assert!(run.stats.utilization() <= ceiling(variant, width));
    }

    #[test]
    fn csrmm_columns_are_csrmv_runs(
        width in width_strategy(),
        rows in 1usize..12,
        cols in 1usize..64,
        log_ncols in 0u32..3,
        seed: u64,
    ) {
        let t = TimingConfig::default();
        let ncols = 1usize << log_ncols;
        let m = gen_random_csr(rows, cols, 0, cols.min(10), width, seed).unwrap();
        let b = gen_dense(cols * ncols, seed ^ 3);
        let run = run_csrmm(Variant::Issr, width, &m, &b, ncols, &t).unwrap();
        let order = reduction_order(Kernel::Csrmm, Variant::Issr, default_accumulators(width, &t));
        let want = csrmm_ref(&m, &b, ncols, order).unwrap();
        prop_assert_eq!(bits(&run.result), bits(&want));
        for c in 0..ncols {
            let col: Vec<f64> = (0..cols).map(|k| b[k * ncols + c]).collect();
            let mv = csrmv_ref(&m, &col, order).unwrap();
            let got: Vec<f64> = (0..rows).map(|r| run.result[r * ncols + c]).collect();
            prop_assert_eq!(bits(&got), bits(&mv));
        }
    }

    #[test]
    fn matrix_market_round_trips(rows in 0usize..40, cols in 1usize..40, seed: u64) {
        let m = gen_random_csr(rows, cols, 0, cols.min(8), IndexWidth::W32, seed).unwrap();
        let mut text = Vec::new();
        write_matrix_market(&m, &mut text).unwrap();
        let back = read_matrix_market(text.as_slice()).unwrap();
        prop_assert!(back.validate().is_ok());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn generated_matrices_hold_csr_invariants(rows in 0usize..64, cols in 1usize..300, per_row in 0usize..20, seed: u64) {
        let m = gen_banded_csr(rows, cols, per_row.min(cols), IndexWidth::W16, seed).unwrap();
        prop_assert!(m.validate().is_ok());
        prop_assert_eq!(m.nnz(), rows * per_row.min(cols));
    }
}

#[test]
fn issr_spvv_utilization_rises_with_length() {
    let t = TimingConfig::default();
    for width in [IndexWidth::W16, IndexWidth::W32] {
        let u: Vec<f64> = [1, 2, 5, 10, 50, 100, 1000]
            .iter()
            .map(|&n| {
                let f = gen_sparse_vector(2048, n, width, 9).unwrap();
                run_spvv(Variant::Issr, width, &f, &gen_dense(2048, 10), &t).unwrap().stats.utilization()
            })
            .collect();
        assert!(u.windows(2).all(|p| p[0] < p[1]), "{width:?}: {u:?}");
    }
}
