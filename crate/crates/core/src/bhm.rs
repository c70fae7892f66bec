//! Block-Hankel pruning codec for model update matrices.
//!
//! A weight/update matrix is zero-padded and tiled into `l×l` blocks. Each
//! block is replaced by its Frobenius-nearest Hankel matrix, which is fully
//! described by a sequence vector of length `2l−1` (entry `(i, j)` of a
//! Hankel matrix depends only on `i + j`). The projection is anti-diagonal
//! averaging, so it is linear, idempotent on Hankel blocks, and cuts the
//! stored real count per block from `l²` to `2l−1` — with no position
//! indices.
//!
//! That last property is the point: two compressed updates with the same
//! shape and block size are positionally identical, so encrypted updates can
//! be aggregated elementwise. Index-based sparse formats cannot (see
//! [`demonstrate_csr_pitfall`]).

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BhmError {
    #[error("block size must be at least 2, got {0}")]
    InvalidBlockSize(usize),
    #[error("scaling factor must be finite and positive, got {0}")]
    InvalidScalingFactor(f64),
    #[error("sequence vector has length {got}, expected {expected}")]
    WrongSequenceLength { expected: usize, got: usize },
    #[error("shape mismatch: {left_rows}x{left_cols} (l={left_l}) vs {right_rows}x{right_cols} (l={right_l})")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        left_l: usize,
        right_rows: usize,
        right_cols: usize,
        right_l: usize,
    },
    #[error("scaling factor mismatch: {0} vs {1}")]
    ScalingFactorMismatch(f64, f64),
    #[error("flat payload has {got} values, expected {expected}")]
    FlatLengthMismatch { expected: usize, got: usize },
    #[error("malformed CSR structure: {0}")]
    MalformedCsr(String),
    #[error("CSR value arrays differ in length ({0} vs {1}); blind positionwise addition is undefined")]
    NnzMismatch(usize, usize),
    #[error("malformed serialized data: {0}")]
    Malformed(String),
}

/// Pruning parameters: block size `l` and the uniform scaling factor applied
/// to every retained element during compression.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BhmParams {
    pub block_size: usize,
    pub scaling_factor: f64,
}

impl BhmParams {
    pub fn new(block_size: usize, scaling_factor: f64) -> Result<Self, BhmError> {
        if block_size < 2 {
            return Err(BhmError::InvalidBlockSize(block_size));
        }
        if !(scaling_factor.is_finite() && scaling_factor > 0.0) {
            return Err(BhmError::InvalidScalingFactor(scaling_factor));
        }
        Ok(Self {
            block_size,
            scaling_factor,
        })
    }

    /// Sequence vector length per block: `2l − 1`.
    pub fn seq_len(&self) -> usize {
        2 * self.block_size - 1
    }

    /// Stored-to-dense ratio `(2l−1)/l²` on unpadded shapes.
    pub fn compression_ratio(&self) -> f64 {
        self.seq_len() as f64 / (self.block_size * self.block_size) as f64
    }
}

/// A pruned update: one sequence vector per block plus shape metadata.
/// No position indices are stored; block order is row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BhmUpdate {
    rows: usize,
    cols: usize,
    block_size: usize,
    scaling_factor: f64,
    grid_rows: usize,
    grid_cols: usize,
    seq_vectors: Vec<Vec<f64>>,
}

impl BhmUpdate {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn scaling_factor(&self) -> f64 {
        self.scaling_factor
    }

    /// Block grid dimensions `(ceil(rows/l), ceil(cols/l))`.
    pub fn grid(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    pub fn seq_vectors(&self) -> &[Vec<f64>] {
        &self.seq_vectors
    }

    /// Total stored real count: `grid_rows · grid_cols · (2l−1)`.
    pub fn stored_len(&self) -> usize {
        self.grid_rows * self.grid_cols * self.seq_len()
    }

    fn seq_len(&self) -> usize {
        2 * self.block_size - 1
    }

    /// Concatenate the sequence vectors in canonical (row-major grid) order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.stored_len());
        for seq in &self.seq_vectors {
            out.extend_from_slice(seq);
        }
        out
    }

    /// Rebuild an update from a flat payload laid out as [`Self::flatten`].
    pub fn from_flat(
        rows: usize,
        cols: usize,
        params: &BhmParams,
        flat: &[f64],
    ) -> Result<Self, BhmError> {
        let l = params.block_size;
        if l < 2 {
            return Err(BhmError::InvalidBlockSize(l));
        }
        let grid_rows = rows.div_ceil(l);
        let grid_cols = cols.div_ceil(l);
        let expected = grid_rows * grid_cols * params.seq_len();
        if flat.len() != expected {
            return Err(BhmError::FlatLengthMismatch {
                expected,
                got: flat.len(),
            });
        }
        let seq_vectors = flat
            .chunks_exact(params.seq_len())
            .map(|c| c.to_vec())
            .collect();
        Ok(Self {
            rows,
            cols,
            block_size: l,
            scaling_factor: params.scaling_factor,
            grid_rows,
            grid_cols,
            seq_vectors,
        })
    }

    /// An all-zero update of the given shape.
    pub fn zeros(rows: usize, cols: usize, params: &BhmParams) -> Result<Self, BhmError> {
        let l = params.block_size;
        if l < 2 {
            return Err(BhmError::InvalidBlockSize(l));
        }
        let grid_rows = rows.div_ceil(l);
        let grid_cols = cols.div_ceil(l);
        Ok(Self {
            rows,
            cols,
            block_size: l,
            scaling_factor: params.scaling_factor,
            grid_rows,
            grid_cols,
            seq_vectors: vec![vec![0.0; params.seq_len()]; grid_rows * grid_cols],
        })
    }

    /// Serialize: little-endian header `(rows u32, cols u32, l u32, κ f64,
    /// grid_rows u32, grid_cols u32)` followed by the sequence vectors as
    /// contiguous little-endian `f64`s in canonical order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.stored_len());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&(self.block_size as u32).to_le_bytes());
        out.extend_from_slice(&self.scaling_factor.to_le_bytes());
        out.extend_from_slice(&(self.grid_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid_cols as u32).to_le_bytes());
        for seq in &self.seq_vectors {
            for v in seq {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, BhmError> {
        if buf.len() < 28 {
            return Err(BhmError::Malformed(format!(
                "header needs 28 bytes, have {}",
                buf.len()
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
        let rows = u32_at(0);
        let cols = u32_at(4);
        let block_size = u32_at(8);
        let scaling_factor = f64::from_le_bytes(buf[12..20].try_into().unwrap());
        let grid_rows = u32_at(20);
        let grid_cols = u32_at(24);
        let params = BhmParams::new(block_size, scaling_factor)
            .map_err(|e| BhmError::Malformed(e.to_string()))?;
        if grid_rows != rows.div_ceil(block_size) || grid_cols != cols.div_ceil(block_size) {
            return Err(BhmError::Malformed(format!(
                "grid {grid_rows}x{grid_cols} inconsistent with shape {rows}x{cols} at l={block_size}"
            )));
        }
        let expected = grid_rows * grid_cols * params.seq_len() * 8;
        let body = &buf[28..];
        if body.len() != expected {
            return Err(BhmError::Malformed(format!(
                "body has {} bytes, expected {expected}",
                body.len()
            )));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_flat(rows, cols, &params, &flat)
    }
}

/// A matrix partitioned into `l×l` blocks over a zero-padded grid, with the
/// original shape recorded so reassembly can drop the padding.
#[derive(Debug, Clone)]
pub struct Partitioned {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub blocks: Vec<Array2<f64>>,
}

impl Partitioned {
    /// Stitch the blocks back together and drop the padding.
    pub fn reassemble(&self) -> Array2<f64> {
        let l = self.block_size;
        let mut full = Array2::zeros((self.grid_rows * l, self.grid_cols * l));
        for (idx, block) in self.blocks.iter().enumerate() {
            let br = idx / self.grid_cols;
            let bc = idx % self.grid_cols;
            full.slice_mut(ndarray::s![br * l..(br + 1) * l, bc * l..(bc + 1) * l])
                .assign(block);
        }
        full.slice(ndarray::s![..self.rows, ..self.cols]).to_owned()
    }
}

/// Tile `matrix` into `l×l` blocks, zero-padding on the bottom/right so the
/// blocks cover every shape. Block order is row-major over the grid.
pub fn partition(matrix: &ArrayView2<f64>, block_size: usize) -> Result<Partitioned, BhmError> {
    if block_size < 2 {
        return Err(BhmError::InvalidBlockSize(block_size));
    }
    let (rows, cols) = matrix.dim();
    let grid_rows = rows.div_ceil(block_size).max(1);
    let grid_cols = cols.div_ceil(block_size).max(1);
    let mut padded = Array2::zeros((grid_rows * block_size, grid_cols * block_size));
    padded
        .slice_mut(ndarray::s![..rows, ..cols])
        .assign(matrix);
    let mut blocks = Vec::with_capacity(grid_rows * grid_cols);
    for br in 0..grid_rows {
        for bc in 0..grid_cols {
            blocks.push(
                padded
                    .slice(ndarray::s![
                        br * block_size..(br + 1) * block_size,
                        bc * block_size..(bc + 1) * block_size
                    ])
                    .to_owned(),
            );
        }
    }
    Ok(Partitioned {
        rows,
        cols,
        block_size,
        grid_rows,
        grid_cols,
        blocks,
    })
}

/// Project a square block onto its Frobenius-nearest Hankel matrix and return
/// the defining sequence vector: entry `g_k` is the mean of the block entries
/// on anti-diagonal `k` (those with `i + j = k`).
pub fn project_block(block: &ArrayView2<f64>) -> Vec<f64> {
    let (rows, cols) = block.dim();
    debug_assert_eq!(rows, cols, "blocks are square by construction");
    let l = rows;
    let mut sums = vec![0.0f64; 2 * l - 1];
    let mut counts = vec![0usize; 2 * l - 1];
    for i in 0..l {
        for j in 0..l {
            sums[i + j] += block[[i, j]];
            counts[i + j] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect()
}

/// Rebuild the `l×l` Hankel matrix defined by a sequence vector:
/// `result[i][j] = g[i + j]`.
pub fn reconstruct_block(g: &[f64], block_size: usize) -> Result<Array2<f64>, BhmError> {
    let expected = 2 * block_size - 1;
    if g.len() != expected {
        return Err(BhmError::WrongSequenceLength {
            expected,
            got: g.len(),
        });
    }
    Ok(Array2::from_shape_fn((block_size, block_size), |(i, j)| {
        g[i + j]
    }))
}

/// Anti-diagonal means over the real (unpadded) region of an edge block.
/// Padding cells are excluded so the codec roundtrips on every shape; an
/// anti-diagonal with no real cells projects to 0 (it only ever reconstructs
/// into padding, which decompression discards).
fn project_block_masked(
    block: &ArrayView2<f64>,
    real_rows: usize,
    real_cols: usize,
) -> Vec<f64> {
    let l = block.dim().0;
    let mut sums = vec![0.0f64; 2 * l - 1];
    let mut counts = vec![0usize; 2 * l - 1];
    for i in 0..real_rows.min(l) {
        for j in 0..real_cols.min(l) {
            sums[i + j] += block[[i, j]];
            counts[i + j] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

/// Compress a matrix: scale every element by κ, then project each block.
/// Padded cells do not contribute to the anti-diagonal means.
pub fn compress(matrix: &ArrayView2<f64>, params: &BhmParams) -> Result<BhmUpdate, BhmError> {
    if !(params.scaling_factor.is_finite() && params.scaling_factor > 0.0) {
        return Err(BhmError::InvalidScalingFactor(params.scaling_factor));
    }
    let scaled = matrix.mapv(|v| v * params.scaling_factor);
    let parts = partition(&scaled.view(), params.block_size)?;
    let l = params.block_size;
    let seq_vectors = parts
        .blocks
        .iter()
        .enumerate()
        .map(|(idx, b)| {
            let br = idx / parts.grid_cols;
            let bc = idx % parts.grid_cols;
            let real_rows = parts.rows.saturating_sub(br * l);
            let real_cols = parts.cols.saturating_sub(bc * l);
            project_block_masked(&b.view(), real_rows, real_cols)
        })
        .collect();
    Ok(BhmUpdate {
        rows: parts.rows,
        cols: parts.cols,
        block_size: params.block_size,
        scaling_factor: params.scaling_factor,
        grid_rows: parts.grid_rows,
        grid_cols: parts.grid_cols,
        seq_vectors,
    })
}

/// Decompress an update: reconstruct every block, descale by 1/κ, and drop
/// the padding, restoring the original shape.
pub fn decompress(update: &BhmUpdate) -> Result<Array2<f64>, BhmError> {
    let blocks: Result<Vec<_>, _> = update
        .seq_vectors
        .iter()
        .map(|g| reconstruct_block(g, update.block_size))
        .collect();
    let parts = Partitioned {
        rows: update.rows,
        cols: update.cols,
        block_size: update.block_size,
        grid_rows: update.grid_rows,
        grid_cols: update.grid_cols,
        blocks: blocks?,
    };
    Ok(parts.reassemble().mapv(|v| v / update.scaling_factor))
}

/// Elementwise sum of two compressed updates. Positions are structurally
/// identical whenever shape and block size match, so no indices are needed.
pub fn add_bhm(a: &BhmUpdate, b: &BhmUpdate) -> Result<BhmUpdate, BhmError> {
    if a.rows != b.rows || a.cols != b.cols || a.block_size != b.block_size {
        return Err(BhmError::ShapeMismatch {
            left_rows: a.rows,
            left_cols: a.cols,
            left_l: a.block_size,
            right_rows: b.rows,
            right_cols: b.cols,
            right_l: b.block_size,
        });
    }
    if a.scaling_factor != b.scaling_factor {
        return Err(BhmError::ScalingFactorMismatch(
            a.scaling_factor,
            b.scaling_factor,
        ));
    }
    let seq_vectors = a
        .seq_vectors
        .iter()
        .zip(&b.seq_vectors)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect();
    Ok(BhmUpdate {
        seq_vectors,
        ..a.clone()
    })
}

/// A sparse update in compressed-sparse-row form. Exists to make the
/// index-dependence pitfall executable: under AHE only the value array can be
/// aggregated, and values from different sparsity patterns do not line up.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrUpdate {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub col_indices: Vec<usize>,
    pub row_pointers: Vec<usize>,
}

impl CsrUpdate {
    pub fn from_dense(matrix: &ArrayView2<f64>) -> Self {
        let (rows, cols) = matrix.dim();
        let mut values = Vec::new();
        let mut col_indices = Vec::new();
        let mut row_pointers = vec![0usize];
        for i in 0..rows {
            for j in 0..cols {
                let v = matrix[[i, j]];
                if v != 0.0 {
                    values.push(v);
                    col_indices.push(j);
                }
            }
            row_pointers.push(values.len());
        }
        Self {
            rows,
            cols,
            values,
            col_indices,
            row_pointers,
        }
    }

    pub fn to_dense(&self) -> Result<Array2<f64>, BhmError> {
        self.validate()?;
        let mut out = Array2::zeros((self.rows, self.cols));
        for i in 0..self.rows {
            for k in self.row_pointers[i]..self.row_pointers[i + 1] {
                out[[i, self.col_indices[k]]] = self.values[k];
            }
        }
        Ok(out)
    }

    /// Standard CSR well-formedness: monotone row pointers, indices in range.
    pub fn validate(&self) -> Result<(), BhmError> {
        if self.row_pointers.len() != self.rows + 1 {
            return Err(BhmError::MalformedCsr(format!(
                "row_pointers has {} entries, expected rows+1 = {}",
                self.row_pointers.len(),
                self.rows + 1
            )));
        }
        if self.row_pointers[0] != 0 {
            return Err(BhmError::MalformedCsr("row_pointers must start at 0".into()));
        }
        if self.row_pointers.windows(2).any(|w| w[0] > w[1]) {
            return Err(BhmError::MalformedCsr(
                "row_pointers must be monotone non-decreasing".into(),
            ));
        }
        if *self.row_pointers.last().unwrap() != self.values.len()
            || self.values.len() != self.col_indices.len()
        {
            return Err(BhmError::MalformedCsr(
                "value/index arrays inconsistent with row_pointers".into(),
            ));
        }
        if self.col_indices.iter().any(|&j| j >= self.cols) {
            return Err(BhmError::MalformedCsr("column index out of range".into()));
        }
        Ok(())
    }

    fn same_pattern(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.col_indices == other.col_indices
            && self.row_pointers == other.row_pointers
    }
}

/// Outcome of the CSR aggregation pitfall demo.
#[derive(Debug, Clone)]
pub struct CsrPitfallReport {
    /// The true matrix sum.
    pub true_sum: Array2<f64>,
    /// Positionwise addition of the two value arrays, reinterpreted under the
    /// first operand's index pattern — all an aggregator can do when indices
    /// are unavailable.
    pub blind_sum: Array2<f64>,
    pub blind_matches_true: bool,
    /// Set when both operands share a sparsity pattern, in which case blind
    /// addition happens to be correct.
    pub identical_patterns: bool,
    pub max_abs_deviation: f64,
}

/// Show what goes wrong when an aggregator adds encrypted CSR value arrays
/// positionwise: without indices the result reconstructs to the wrong matrix
/// unless the sparsity patterns coincide.
pub fn demonstrate_csr_pitfall(
    a: &CsrUpdate,
    b: &CsrUpdate,
) -> Result<CsrPitfallReport, BhmError> {
    a.validate()?;
    b.validate()?;
    if a.rows != b.rows || a.cols != b.cols {
        return Err(BhmError::ShapeMismatch {
            left_rows: a.rows,
            left_cols: a.cols,
            left_l: 0,
            right_rows: b.rows,
            right_cols: b.cols,
            right_l: 0,
        });
    }
    if a.values.len() != b.values.len() {
        return Err(BhmError::NnzMismatch(a.values.len(), b.values.len()));
    }
    let true_sum = a.to_dense()? + b.to_dense()?;
    let blind = CsrUpdate {
        values: a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x + y)
            .collect(),
        ..a.clone()
    };
    let blind_sum = blind.to_dense()?;
    let max_abs_deviation = (&blind_sum - &true_sum)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(CsrPitfallReport {
        blind_matches_true: max_abs_deviation == 0.0,
        identical_patterns: a.same_pattern(b),
        true_sum,
        blind_sum,
        max_abs_deviation,
    })
}
