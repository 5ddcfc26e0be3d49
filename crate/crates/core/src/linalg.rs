//! Dense matrices, row-block partitioning and coded matrix-vector products.
//!
//! A matrix `A` is cut into `k` equal-height blocks `A_0..A_{k-1}` (zero
//! padded at the bottom when `k` does not divide the row count). Worker `j`
//! holds `Ã_j = Σ_i G[i][j] · A_i` and returns `Ã_j · x`; any decodable set
//! of such partials yields every `A_i · x`, and stacking those gives `A · x`.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::coding::{decode, GeneratorMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_operand(x)?;
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// Row-chunked product; `keep_going` is polled before every chunk and
    /// a `false` return aborts with `Ok(None)`.
    pub fn matvec_interruptible(
        &self,
        x: &[f64],
        chunk_rows: usize,
        mut keep_going: impl FnMut() -> bool,
    ) -> Result<Option<Vec<f64>>> {
        self.check_operand(x)?;
        let mut out = Vec::with_capacity(self.rows);
        for start in (0..self.rows).step_by(chunk_rows.max(1)) {
            if !keep_going() {
                return Ok(None);
            }
            let end = (start + chunk_rows.max(1)).min(self.rows);
            out.extend((start..end).map(|r| dot(self.row(r), x)));
        }
        Ok(Some(out))
    }

    fn check_operand(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::invalid(format!(
                "vector of length {} against matrix with {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok(())
    }

    /// `self += coef * other`.
    pub fn add_scaled(&mut self, coef: f64, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::invalid(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += coef * b;
        }
        Ok(())
    }

    /// Fixture layout: `u64 rows, u64 cols`, then row-major f64, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.data.len());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`DenseMatrix::to_bytes`]; returns bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let short = || Error::protocol("truncated matrix");
        if bytes.len() < 16 {
            return Err(short());
        }
        let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let len = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .and_then(|c| usize::try_from(c).ok())
            .ok_or_else(short)?;
        let body = bytes.get(16..16 + len).ok_or_else(short)?;
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((Self { rows: rows as usize, cols: cols as usize, data }, 16 + len))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let (m, used) = Self::from_bytes(&bytes)?;
        if used != bytes.len() {
            return Err(Error::invalid("trailing bytes after matrix"));
        }
        Ok(m)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shape of a row-block split, enough to reconstruct without the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub k: usize,
    pub block_rows: usize,
    pub pad_rows: usize,
    pub cols: usize,
}

impl BlockLayout {
    pub fn for_matrix(rows: usize, cols: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if rows == 0 {
            return Err(Error::invalid("cannot partition an empty matrix"));
        }
        let block_rows = rows.div_ceil(k);
        Ok(Self { k, block_rows, pad_rows: block_rows * k - rows, cols })
    }

    pub fn original_rows(&self) -> usize {
        self.k * self.block_rows - self.pad_rows
    }

    /// Size of one block on the wire, in bytes of payload data.
    pub fn block_bytes(&self) -> u64 {
        (self.block_rows * self.cols * 8) as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowBlockPartition {
    pub layout: BlockLayout,
    pub blocks: Vec<DenseMatrix>,
}

impl RowBlockPartition {
    pub fn k(&self) -> usize {
        self.layout.k
    }

    pub fn block_rows(&self) -> usize {
        self.layout.block_rows
    }

    pub fn pad_rows(&self) -> usize {
        self.layout.pad_rows
    }
}

/// Splits `m` into `k` blocks of `ceil(rows / k)` rows, zero padding the tail.
pub fn partition_rows(m: &DenseMatrix, k: usize) -> Result<RowBlockPartition> {
    let layout = BlockLayout::for_matrix(m.rows, m.cols, k)?;
    let per_block = layout.block_rows * m.cols;
    let blocks = (0..k)
        .map(|i| {
            let start = (i * per_block).min(m.data.len());
            let end = ((i + 1) * per_block).min(m.data.len());
            let mut data = m.data[start..end].to_vec();
            data.resize(per_block, 0.0);
            DenseMatrix { rows: layout.block_rows, cols: m.cols, data }
        })
        .collect();
    Ok(RowBlockPartition { layout, blocks })
}

/// A worker's coded sub-matrix `Ã_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBlock {
    pub worker_id: usize,
    pub coefficients: Vec<f64>,
    pub matrix: DenseMatrix,
    /// Sub-matrices fetched from other workers to build `matrix`.
    pub downloads: usize,
}

/// Index of the block a worker holds locally before encoding, if any.
/// The first `k` workers each hold the block matching their id.
pub fn local_block(worker_id: usize, k: usize) -> Option<usize> {
    (worker_id < k).then_some(worker_id)
}

/// Streaming accumulator for [`EncodedBlock`]: blocks are absorbed one at a
/// time and dropped after use, so only one source block and the running
/// sum are resident.
#[derive(Debug)]
pub struct BlockEncoder {
    worker_id: usize,
    coefficients: Vec<f64>,
    acc: Option<DenseMatrix>,
    pending: Vec<usize>,
    downloads: usize,
}

impl BlockEncoder {
    pub fn new(worker_id: usize, coefficients: Vec<f64>, block_rows: usize, cols: usize) -> Self {
        let mut enc = Self::shape_from_first(worker_id, coefficients);
        enc.acc = Some(DenseMatrix::zeros(block_rows, cols));
        enc
    }

    /// Encoder that takes its block shape from the first absorbed block.
    pub fn shape_from_first(worker_id: usize, coefficients: Vec<f64>) -> Self {
        let pending = coefficients
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, _)| i)
            .collect();
        Self { worker_id, coefficients, acc: None, pending, downloads: 0 }
    }

    /// Blocks with a nonzero coefficient that have not been absorbed yet.
    pub fn pending(&self) -> &[usize] {
        &self.pending
    }

    /// Blocks this worker must fetch remotely (nonzero, not held locally).
    pub fn remote_blocks(&self) -> Vec<usize> {
        let own = local_block(self.worker_id, self.coefficients.len());
        self.pending.iter().copied().filter(|&i| Some(i) != own).collect()
    }

    pub fn absorb(&mut self, block_id: usize, block: &DenseMatrix) -> Result<()> {
        let pos = self
            .pending
            .iter()
            .position(|&i| i == block_id)
            .ok_or_else(|| Error::invalid(format!("block {block_id} not needed or already absorbed")))?;
        let coef = self.coefficients[block_id];
        match &mut self.acc {
            Some(acc) => acc.add_scaled(coef, block)?,
            None => {
                let mut acc = DenseMatrix::zeros(block.rows, block.cols);
                acc.add_scaled(coef, block)?;
                self.acc = Some(acc);
            }
        }
        self.pending.swap_remove(pos);
        if Some(block_id) != local_block(self.worker_id, self.coefficients.len()) {
            self.downloads += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<EncodedBlock> {
        if !self.pending.is_empty() {
            return Err(Error::invalid(format!("encoding incomplete, missing blocks {:?}", self.pending)));
        }
        let matrix = self.acc.ok_or_else(|| Error::invalid("generator column is all zero"))?;
        Ok(EncodedBlock {
            worker_id: self.worker_id,
            coefficients: self.coefficients,
            matrix,
            downloads: self.downloads,
        })
    }
}

/// `Σ column[i] · blocks[i]`, accumulated one block at a time.
pub fn encode_block(partition: &RowBlockPartition, column: &[f64], worker_id: usize) -> Result<EncodedBlock> {
    if column.len() != partition.k() {
        return Err(Error::invalid(format!(
            "generator column of length {} for k={}",
            column.len(),
            partition.k()
        )));
    }
    let mut enc = BlockEncoder::new(worker_id, column.to_vec(), partition.block_rows(), partition.layout.cols);
    for i in enc.pending().to_vec() {
        enc.absorb(i, &partition.blocks[i])?;
    }
    enc.finish()
}

pub fn partial_product(eb: &EncodedBlock, x: &[f64]) -> Result<Vec<f64>> {
    eb.matrix.matvec(x)
}

/// Stacks the decoded block products and drops the padding rows.
pub fn reconstruct(decoded: &[Vec<f64>], pad_rows: usize) -> Result<Vec<f64>> {
    let len = decoded.first().map_or(0, Vec::len);
    if decoded.iter().any(|u| u.len() != len) {
        return Err(Error::invalid("decoded blocks have inconsistent lengths"));
    }
    let total = len * decoded.len();
    if pad_rows > total {
        return Err(Error::invalid(format!("pad_rows {pad_rows} exceeds {total} rows")));
    }
    let mut out = decoded.concat();
    out.truncate(total - pad_rows);
    Ok(out)
}

/// Single-process composition of partition, encode, multiply, decode and
/// reconstruct, using only the workers in `completed`.
pub fn coded_matvec_reference(
    m: &DenseMatrix,
    x: &[f64],
    g: &GeneratorMatrix,
    completed: &[usize],
) -> Result<Vec<f64>> {
    let ds = g.decodable(completed)?.ok_or(Error::NotDecodable)?;
    let partition = partition_rows(m, g.k())?;
    let mut partials = HashMap::new();
    for &j in &ds.pivot_columns {
        let eb = encode_block(&partition, &g.column(j), j)?;
        partials.insert(j, partial_product(&eb, x)?);
    }
    let decoded = decode(g, &ds, &partials)?;
    reconstruct(&decoded, partition.pad_rows())
}
