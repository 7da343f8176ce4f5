use std::ops::Range;

use serde::Serialize;

use super::ClusterError;
use crate::formats::CsrMatrix;
use crate::stream::IndexWidth;

fn align8(n: u64) -> u64 {
    n.div_ceil(8) * 8
}

fn align64(n: u64) -> u64 {
    n.div_ceil(64) * 64
}

/// Buffer bytes a tile of `rows` rows and `nnz` nonzeros occupies: row
/// pointers and indices keep the sub-word offset they have in main memory,
/// so each reserves one spare word.
pub fn tile_bytes(rows: u64, nnz: u64, width: IndexWidth) -> u64 {
    align8(4 * (rows + 1) + 8) + align8(width.bytes() * nnz + 8) + 8 * nnz + 8 * rows
}

/// A block of consecutive matrix rows resident in one buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tile {
    pub rows: Range<usize>,
    pub nnz: u64,
    /// Buffer index, alternating between 0 and 1.
    pub buffer: usize,
    /// One contiguous, possibly empty, row range per worker.
    pub core_rows: Vec<Range<usize>>,
}

impl Tile {
    pub fn core_nnz(&self, m: &CsrMatrix) -> Vec<u64> {
        self.core_rows.iter().map(|r| u64::from(m.ptr[r.end] - m.ptr[r.start])).collect()
    }
}

/// Placement of the dense vector and the double buffers in the TCDM, and the
/// split of the matrix into tiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TilePlan {
    pub x_addr: u64,
    pub x_bytes: u64,
    pub buffers: [u64; 2],
    pub buffer_bytes: u64,
    pub width: IndexWidth,
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    /// Largest over smallest per-core nonzero count, over all tiles with work;
    /// 1.0 is perfect balance, infinity means some core idled on a tile.
    pub fn imbalance(&self, m: &CsrMatrix) -> f64 {
        let mut worst: f64 = 1.0;
        for t in self.tiles.iter().filter(|t| t.nnz > 0) {
            let nnz = t.core_nnz(m);
            let (lo, hi) = (*nnz.iter().min().unwrap_or(&0), *nnz.iter().max().unwrap_or(&0));
            worst = worst.max(if lo == 0 { f64::INFINITY } else { hi as f64 / lo as f64 });
        }
        worst
    }
}

/// Greedy row packing into two equal buffers behind the dense vector, then a
/// per-tile split into `workers` contiguous ranges.
pub fn plan_tiles(m: &CsrMatrix, width: IndexWidth, tcdm_bytes: u64, workers: usize) -> Result<TilePlan, ClusterError> {
    let x_bytes = align64(8 * m.cols as u64);
    let buffer_bytes = (tcdm_bytes.saturating_sub(x_bytes) / 2) / 64 * 64;
    let smallest = tile_bytes(1, 0, width);
    if buffer_bytes < smallest {
        return Err(ClusterError::VectorTooLarge { bytes: x_bytes, tcdm: tcdm_bytes });
    }
    let mut tiles = Vec::new();
    let mut start = 0;
    while start < m.rows {
        let mut end = start;
        let mut nnz = 0u64;
        while end < m.rows {
            let n = m.row_nnz(end) as u64;
            if tile_bytes((end - start + 1) as u64, nnz + n, width) > buffer_bytes {
                break;
            }
            nnz += n;
            end += 1;
        }
        if end == start {
            return Err(ClusterError::RowTooLarge {
                row: start,
                bytes: tile_bytes(1, m.row_nnz(start) as u64, width),
                budget: buffer_bytes,
            });
        }
        let core_rows = split_rows(m, start..end, workers);
        tiles.push(Tile { rows: start..end, nnz, buffer: tiles.len() % 2, core_rows });
        start = end;
    }
    Ok(TilePlan { x_addr: 0, x_bytes, buffers: [x_bytes, x_bytes + buffer_bytes], buffer_bytes, width, tiles })
}

/// Contiguous ranges with nonzero counts close to an equal share: each part
/// takes rows while doing so moves its count closer to the remaining
/// average.
pub fn split_rows(m: &CsrMatrix, rows: Range<usize>, parts: usize) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(parts);
    let mut start = rows.start;
    let mut remaining = u64::from(m.ptr[rows.end] - m.ptr[rows.start]);
    for left in (1..=parts).rev() {
        if left == 1 {
            out.push(start..rows.end);
            break;
        }
        let target = remaining as f64 / left as f64;
        let mut end = start;
        let mut acc = 0u64;
        while end < rows.end {
            let n = m.row_nnz(end) as u64;
            if (acc as f64) + (n as f64) / 2.0 >= target {
                break;
            }
            acc += n;
            end += 1;
        }
        out.push(start..end);
        remaining -= acc;
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{gen_banded_csr, gen_random_csr};

    fn from_lengths(lengths: &[u32]) -> CsrMatrix {
        let cols = 64;
        let mut ptr = vec![0];
        let mut idx = Vec::new();
        for &l in lengths {
            idx.extend(0..l);
            ptr.push(ptr.last().unwrap() + l);
        }
        let vals = vec![1.0; idx.len()];
        CsrMatrix::new(lengths.len(), cols, ptr, idx, vals).unwrap()
    }

    #[test]
    fn small_matrix_is_one_tile() {
        let m = gen_banded_csr(64, 128, 4, IndexWidth::W16, 1).unwrap();
        let p = plan_tiles(&m, IndexWidth::W16, 256 << 10, 8).unwrap();
        assert_eq!(p.tiles.len(), 1);
        assert_eq!(p.tiles[0].rows, 0..64);
    }

    #[test]
    fn uniform_rows_split_evenly() {
        let m = gen_banded_csr(8192, 2048, 1, IndexWidth::W16, 2).unwrap();
        let p = plan_tiles(&m, IndexWidth::W16, 256 << 10, 8).unwrap();
        for t in &p.tiles {
            let len = t.rows.len();
            if len % 8 == 0 {
                assert!(t.core_rows.iter().all(|r| r.len() == len / 8), "{:?}", t.core_rows);
            }
            assert_eq!(t.core_rows.first().unwrap().start, t.rows.start);
            assert_eq!(t.core_rows.last().unwrap().end, t.rows.end);
        }
        assert!(p.tiles.len() > 1);
        assert_eq!(p.imbalance(&m), 1.0);
    }

    #[test]
    fn tiles_fit_their_buffer_and_cover_rows() {
        let m = gen_random_csr(3000, 2048, 0, 80, IndexWidth::W16, 3).unwrap();
        let p = plan_tiles(&m, IndexWidth::W16, 256 << 10, 8).unwrap();
        let mut next = 0;
        for (k, t) in p.tiles.iter().enumerate() {
            assert_eq!(t.rows.start, next);
            assert_eq!(t.buffer, k % 2);
            assert!(tile_bytes(t.rows.len() as u64, t.nnz, IndexWidth::W16) <= p.buffer_bytes);
            next = t.rows.end;
        }
        assert_eq!(next, 3000);
        assert!(p.buffers[1] + p.buffer_bytes <= 256 << 10);
    }

    #[test]
    fn oversized_row_is_rejected() {
        let m = gen_banded_csr(2, 2048, 2048, IndexWidth::W16, 4).unwrap();
        let e = plan_tiles(&m, IndexWidth::W16, 32 << 10, 8).unwrap_err();
        assert!(matches!(e, ClusterError::RowTooLarge { row: 0, .. }), "{e}");
    }

    /// Smallest achievable maximum part over every placement of cut points.
    fn optimal_max(lengths: &[u32], parts: usize) -> u32 {
        fn go(l: &[u32], parts: usize) -> u32 {
            if parts == 1 {
                return l.iter().sum();
            }
            (0..=l.len()).map(|c| l[..c].iter().sum::<u32>().max(go(&l[c..], parts - 1))).min().unwrap()
        }
        go(lengths, parts)
    }

    #[test]
    fn greedy_split_is_near_optimal_on_small_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(1..10);
            let lengths: Vec<u32> = (0..n).map(|_| rng.random_range(0..20)).collect();
            let parts = rng.random_range(1..5);
            let m = from_lengths(&lengths);
            let split = split_rows(&m, 0..n, parts);
            assert_eq!(split.len(), parts);
            let greedy = split.iter().map(|r| lengths[r.clone()].iter().sum::<u32>()).max().unwrap();
            let longest = *lengths.iter().max().unwrap();
            assert!(greedy <= optimal_max(&lengths, parts) + longest, "{lengths:?} into {parts}: {split:?}");
        }
    }
}
