use super::{CsrMatrix, FormatError, SparseFiber};

/// Accumulation order of a dot product, so a reference can reproduce a
/// kernel's floating-point result bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReductionOrder {
    /// One fused multiply-add chain starting at +0.0.
    #[default]
    Sequential,
    /// `K` accumulators zeroed up front; term `i` goes to `acc[i % K]`;
    /// then `((acc0 + acc1) + acc2) + ...` over all `K`.
    Accumulated(u8),
    /// Like `Accumulated`, but the first term of each accumulator is a plain
    /// product and only the `min(n, K)` touched accumulators are summed.
    Unrolled(u8),
}

/// Order-aware dot product of `(value, operand)` pairs.
fn reduce(terms: impl ExactSizeIterator<Item = (f64, f64)>, order: ReductionOrder) -> f64 {
    match order {
        ReductionOrder::Sequential => terms.fold(0.0, |acc, (a, b)| a.mul_add(b, acc)),
        ReductionOrder::Accumulated(k) => {
            let k = k.max(1) as usize;
            let mut acc = vec![0.0f64; k];
            for (i, (a, b)) in terms.enumerate() {
                acc[i % k] = a.mul_add(b, acc[i % k]);
            }
            linear_sum(&acc)
        }
        ReductionOrder::Unrolled(k) => {
            let k = k.max(1) as usize;
            let used = terms.len().min(k);
            let mut acc = vec![0.0f64; used];
            for (i, (a, b)) in terms.enumerate() {
                acc[i % k] = if i < k { a * b } else { a.mul_add(b, acc[i % k]) };
            }
            if used == 0 {
                0.0
            } else {
                linear_sum(&acc)
            }
        }
    }
}

fn linear_sum(acc: &[f64]) -> f64 {
    acc[1..].iter().fold(acc[0], |s, &a| s + a)
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), FormatError> {
    if got != want {
        return Err(FormatError::Dimension(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Naive dot product of a sparse fiber with a dense vector.
pub fn dot(f: &SparseFiber, x: &[f64]) -> Result<f64, FormatError> {
    spvv_ref(f, x, ReductionOrder::Sequential)
}

pub fn spvv_ref(f: &SparseFiber, x: &[f64], order: ReductionOrder) -> Result<f64, FormatError> {
    check_len("dense vector", x.len(), f.dim)?;
    Ok(reduce(f.values.iter().zip(&f.indices).map(|(&v, &i)| (v, x[i as usize])), order))
}

pub fn csrmv_ref(m: &CsrMatrix, x: &[f64], order: ReductionOrder) -> Result<Vec<f64>, FormatError> {
    check_len("dense vector", x.len(), m.cols)?;
    Ok((0..m.rows)
        .map(|r| {
            let rg = m.row_range(r);
            reduce(m.vals[rg.clone()].iter().zip(&m.idx[rg]).map(|(&v, &c)| (v, x[c as usize])), order)
        })
        .collect())
}

/// `A * B` with `B` row-major (`cols x ncols`); result row-major (`rows x ncols`).
pub fn csrmm_ref(m: &CsrMatrix, b: &[f64], ncols: usize, order: ReductionOrder) -> Result<Vec<f64>, FormatError> {
    check_len("dense matrix", b.len(), m.cols * ncols)?;
    let mut out = vec![0.0; m.rows * ncols];
    for r in 0..m.rows {
        let rg = m.row_range(r);
        for c in 0..ncols {
            out[r * ncols + c] = reduce(
                m.vals[rg.clone()].iter().zip(&m.idx[rg.clone()]).map(|(&v, &k)| (v, b[k as usize * ncols + c])),
                order,
            );
        }
    }
    Ok(out)
}

/// `sum |v * x|` over the terms of a dot product: the natural error scale
/// when the exact result cancels towards zero.
pub fn abs_terms(values: &[f64], operands: impl IntoIterator<Item = f64>) -> f64 {
    values.iter().zip(operands).map(|(v, x)| (v * x).abs()).sum()
}

/// `|got - want| / max(|want|, scale)`, zero when both vanish.
pub fn relative_error(got: f64, want: f64, scale: f64) -> f64 {
    let diff = (got - want).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / want.abs().max(scale).max(f64::MIN_POSITIVE)
}

pub fn within_relative(got: f64, want: f64, scale: f64, tol: f64) -> bool {
    relative_error(got, want, scale) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{gen_banded_csr, gen_dense, gen_sparse_vector};
    use crate::stream::IndexWidth;

    #[test]
    fn ones_vector_sums_values() {
        let f = SparseFiber::new(vec![1.0, 2.0, 3.0], vec![0, 2, 4], 5).unwrap();
        assert_eq!(dot(&f, &[1.0; 5]).unwrap(), 6.0);
    }

    #[test]
    fn empty_fiber_is_zero_in_every_order() {
        let f = SparseFiber::new(vec![], vec![], 3).unwrap();
        for o in [ReductionOrder::Sequential, ReductionOrder::Accumulated(4), ReductionOrder::Unrolled(3)] {
            assert_eq!(spvv_ref(&f, &[1.0; 3], o).unwrap().to_bits(), 0.0f64.to_bits());
        }
    }

    #[test]
    fn accumulated_order_partitions_terms() {
        // Values chosen so association changes the rounded result.
        let f = SparseFiber::new(vec![1e16, 1.0, -1e16, 1.0], vec![0, 1, 2, 3], 4).unwrap();
        let x = [1.0; 4];
        assert_eq!(spvv_ref(&f, &x, ReductionOrder::Sequential).unwrap(), 1.0);
        // acc0 = 1e16 - 1e16 = 0, acc1 = 2.
        assert_eq!(spvv_ref(&f, &x, ReductionOrder::Accumulated(2)).unwrap(), 2.0);
    }

    #[test]
    fn unrolled_single_term_is_plain_product() {
        let f = SparseFiber::new(vec![3.0], vec![1], 2).unwrap();
        assert_eq!(spvv_ref(&f, &[0.0, -0.5], ReductionOrder::Unrolled(4)).unwrap(), -1.5);
    }

    #[test]
    fn orders_agree_within_tolerance() {
        let f = gen_sparse_vector(2000, 257, IndexWidth::W16, 3).unwrap();
        let x = gen_dense(2000, 4);
        let naive = dot(&f, &x).unwrap();
        let scale = abs_terms(&f.values, f.indices.iter().map(|&i| x[i as usize]));
        for o in [ReductionOrder::Accumulated(4), ReductionOrder::Unrolled(3)] {
            assert!(within_relative(spvv_ref(&f, &x, o).unwrap(), naive, scale, 1e-13));
        }
    }

    #[test]
    fn single_column_csrmm_is_csrmv() {
        let m = gen_banded_csr(30, 40, 6, IndexWidth::W16, 1).unwrap();
        let x = gen_dense(40, 2);
        let o = ReductionOrder::Unrolled(4);
        assert_eq!(csrmm_ref(&m, &x, 1, o).unwrap(), csrmv_ref(&m, &x, o).unwrap());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = gen_banded_csr(3, 4, 1, IndexWidth::W16, 1).unwrap();
        assert!(matches!(csrmv_ref(&m, &[1.0; 3], ReductionOrder::Sequential), Err(FormatError::Dimension(_))));
    }
}
