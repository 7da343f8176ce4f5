//! Sparse containers, seeded generators, Matrix Market I/O, memory layout
//! helpers and reference kernels.

mod layout;
mod mtx;
mod reference;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::stream::IndexWidth;

pub use layout::{write_indices, LayoutError, MemoryLayout, Region};
pub use mtx::{load_matrix_market, read_matrix_market, write_matrix_market};
pub use reference::{abs_terms, csrmm_ref, csrmv_ref, dot, relative_error, spvv_ref, within_relative, ReductionOrder};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("{nnz} nonzeros requested in dimension {n}")]
    TooDense { nnz: usize, n: usize },
    #[error("dimension {n} does not fit {width}-bit indices")]
    IndexTooWide { n: usize, width: u32 },
    #[error("invalid sparse structure: {0}")]
    Invalid(String),
    #[error("matrix market line {line}: {message}")]
    MatrixMarket { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// One sparse axis: values with sorted, distinct indices below `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFiber {
    pub values: Vec<f64>,
    pub indices: Vec<u32>,
    pub dim: usize,
}

impl SparseFiber {
    pub fn new(values: Vec<f64>, indices: Vec<u32>, dim: usize) -> Result<Self, FormatError> {
        let f = Self { values, indices, dim };
        f.validate()?;
        Ok(f)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.values.len() != self.indices.len() {
            return Err(FormatError::Invalid(format!(
                "{} values but {} indices",
                self.values.len(),
                self.indices.len()
            )));
        }
        if let Some(&i) = self.indices.iter().find(|&&i| i as usize >= self.dim) {
            return Err(FormatError::Invalid(format!("index {i} outside dimension {}", self.dim)));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FormatError::Invalid("indices not strictly increasing".into()));
        }
        Ok(())
    }
}

/// Compressed sparse rows with 32-bit row pointers.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub ptr: Vec<u32>,
    pub idx: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(rows: usize, cols: usize, ptr: Vec<u32>, idx: Vec<u32>, vals: Vec<f64>) -> Result<Self, FormatError> {
        let m = Self { rows, cols, ptr, idx, vals };
        m.validate()?;
        Ok(m)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn mean_row_nnz(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.nnz() as f64 / self.rows as f64
        }
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.ptr[r] as usize..self.ptr[r + 1] as usize
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_range(r).len()
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let bad = |m: String| Err(FormatError::Invalid(m));
        if self.ptr.len() != self.rows + 1 {
            return bad(format!("{} row pointers for {} rows", self.ptr.len(), self.rows));
        }
        if self.ptr[0] != 0 {
            return bad("first row pointer is not zero".into());
        }
        if self.ptr.windows(2).any(|w| w[0] > w[1]) {
            return bad("row pointers decrease".into());
        }
        if self.ptr[self.rows] as usize != self.vals.len() || self.idx.len() != self.vals.len() {
            return bad(format!(
                "last row pointer {} vs {} values and {} indices",
                self.ptr[self.rows],
                self.vals.len(),
                self.idx.len()
            ));
        }
        for r in 0..self.rows {
            let cols = &self.idx[self.row_range(r)];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {r}: column indices not strictly increasing"));
            }
            if let Some(&c) = cols.iter().find(|&&c| c as usize >= self.cols) {
                return bad(format!("row {r}: column {c} outside {} columns", self.cols));
            }
        }
        Ok(())
    }

    /// Fails if the column count does not fit `width`-bit indices.
    pub fn check_width(&self, width: IndexWidth) -> Result<(), FormatError> {
        check_dim(self.cols, width)
    }

    pub fn row_fiber(&self, r: usize) -> SparseFiber {
        let rg = self.row_range(r);
        SparseFiber { values: self.vals[rg.clone()].to_vec(), indices: self.idx[rg].to_vec(), dim: self.cols }
    }

    /// Rows `[start, end)` as a standalone matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> CsrMatrix {
        let (p0, p1) = (self.ptr[start] as usize, self.ptr[end] as usize);
        CsrMatrix {
            rows: end - start,
            cols: self.cols,
            ptr: self.ptr[start..=end].iter().map(|p| p - self.ptr[start]).collect(),
            idx: self.idx[p0..p1].to_vec(),
            vals: self.vals[p0..p1].to_vec(),
        }
    }
}

fn check_dim(n: usize, width: IndexWidth) -> Result<(), FormatError> {
    if n > 1usize << width.bits() {
        return Err(FormatError::IndexTooWide { n, width: width.bits() });
    }
    Ok(())
}

/// Sorted distinct uniform indices with standard-normal values.
pub fn gen_sparse_vector(n: usize, nnz: usize, width: IndexWidth, seed: u64) -> Result<SparseFiber, FormatError> {
    if nnz > n {
        return Err(FormatError::TooDense { nnz, n });
    }
    check_dim(n, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(random_fiber(&mut rng, n, nnz))
}

fn random_fiber(rng: &mut ChaCha8Rng, n: usize, nnz: usize) -> SparseFiber {
    let mut indices: Vec<u32> = sample(rng, n, nnz).into_iter().map(|i| i as u32).collect();
    indices.sort_unstable();
    let values = (0..nnz).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    SparseFiber { values, indices, dim: n }
}

/// Every row has exactly `nnz_per_row` sorted uniform columns.
pub fn gen_banded_csr(
    rows: usize,
    cols: usize,
    nnz_per_row: usize,
    width: IndexWidth,
    seed: u64,
) -> Result<CsrMatrix, FormatError> {
    if nnz_per_row > cols {
        return Err(FormatError::TooDense { nnz: nnz_per_row, n: cols });
    }
    check_dim(cols, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = CsrMatrix { rows, cols, ptr: vec![0], idx: Vec::new(), vals: Vec::new() };
    for _ in 0..rows {
        let f = random_fiber(&mut rng, cols, nnz_per_row);
        m.idx.extend(f.indices);
        m.vals.extend(f.values);
        m.ptr.push(m.vals.len() as u32);
    }
    Ok(m)
}

/// Rows with independently drawn lengths in `[lo, hi]`, for irregular workloads.
pub fn gen_random_csr(
    rows: usize,
    cols: usize,
    lo: usize,
    hi: usize,
    width: IndexWidth,
    seed: u64,
) -> Result<CsrMatrix, FormatError> {
    if hi > cols || lo > hi {
        return Err(FormatError::TooDense { nnz: hi, n: cols });
    }
    check_dim(cols, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = CsrMatrix { rows, cols, ptr: vec![0], idx: Vec::new(), vals: Vec::new() };
    for _ in 0..rows {
        let n = rng.random_range(lo..=hi);
        let f = random_fiber(&mut rng, cols, n);
        m.idx.extend(f.indices);
        m.vals.extend(f.values);
        m.ptr.push(m.vals.len() as u32);
    }
    Ok(m)
}

/// Exactly `nnz` nonzeros at uniformly drawn distinct positions, so row
/// lengths vary like in a small irregular real-world matrix.
pub fn gen_uniform_csr(
    rows: usize,
    cols: usize,
    nnz: usize,
    width: IndexWidth,
    seed: u64,
) -> Result<CsrMatrix, FormatError> {
    let cells = rows.saturating_mul(cols);
    if nnz > cells {
        return Err(FormatError::TooDense { nnz, n: cells });
    }
    check_dim(cols, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = sample(&mut rng, rows * cols, nnz).into_vec();
    cells.sort_unstable();
    let mut m =
        CsrMatrix { rows, cols, ptr: vec![0; rows + 1], idx: Vec::with_capacity(nnz), vals: Vec::with_capacity(nnz) };
    for c in cells {
        m.ptr[c / cols + 1] += 1;
        m.idx.push((c % cols) as u32);
        m.vals.push(rng.sample::<f64, _>(StandardNormal));
    }
    for r in 0..rows {
        m.ptr[r + 1] += m.ptr[r];
    }
    Ok(m)
}

/// Square matrix with one standard-normal value on each diagonal entry.
pub fn gen_diagonal_csr(n: usize, seed: u64) -> CsrMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CsrMatrix {
        rows: n,
        cols: n,
        ptr: (0..=n as u32).collect(),
        idx: (0..n as u32).collect(),
        vals: (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    }
}

/// Dense standard-normal vector of length `n`.
pub fn gen_dense(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_density_forces_all_indices() {
        let f = gen_sparse_vector(8, 8, IndexWidth::W16, 1).unwrap();
        assert_eq!(f.indices, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_csr_has_exact_nonzero_count() {
        let m = gen_uniform_csr(23, 23, 64, IndexWidth::W16, 5).unwrap();
        assert_eq!(m.nnz(), 64);
        m.validate().unwrap();
        assert!(gen_uniform_csr(2, 2, 5, IndexWidth::W16, 5).is_err());
    }

    #[test]
    fn empty_fiber() {
        let f = gen_sparse_vector(8, 0, IndexWidth::W16, 1).unwrap();
        assert_eq!(f.nnz(), 0);
    }

    #[test]
    fn generator_is_seeded() {
        let a = gen_sparse_vector(10_000, 1000, IndexWidth::W16, 7).unwrap();
        let b = gen_sparse_vector(10_000, 1000, IndexWidth::W16, 7).unwrap();
        let c = gen_sparse_vector(10_000, 1000, IndexWidth::W16, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate().unwrap();
    }

    #[test]
    fn too_dense_and_too_wide_rejected() {
        assert_eq!(gen_sparse_vector(4, 5, IndexWidth::W32, 0), Err(FormatError::TooDense { nnz: 5, n: 4 }));
        assert!(matches!(gen_sparse_vector(70_000, 5, IndexWidth::W16, 0), Err(FormatError::IndexTooWide { .. })));
    }

    #[test]
    fn zero_per_row_gives_zero_pointers() {
        let m = gen_banded_csr(5, 10, 0, IndexWidth::W32, 3).unwrap();
        assert_eq!(m.ptr, vec![0; 6]);
    }

    #[test]
    fn diagonal_pattern_pointers() {
        let m = gen_diagonal_csr(4, 0);
        assert_eq!(m.ptr, vec![0, 1, 2, 3, 4]);
        m.validate().unwrap();
    }

    #[test]
    fn banded_rows_have_exact_counts() {
        let m = gen_banded_csr(100, 300, 17, IndexWidth::W16, 5).unwrap();
        m.validate().unwrap();
        assert!((0..100).all(|r| m.row_nnz(r) == 17));
    }

    #[test]
    fn slice_rows_rebases_pointers() {
        let m = gen_banded_csr(10, 20, 3, IndexWidth::W16, 5).unwrap();
        let s = m.slice_rows(4, 7);
        s.validate().unwrap();
        assert_eq!(s.vals, m.vals[12..21].to_vec());
    }
}
