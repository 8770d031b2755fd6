//! Sparse GEMM case study: compressed matrix formats, packed register
//! blocks, the outer-product codelets, the T1–T5 program variants, and a
//! random program generator for engine testing.

use std::fmt;

mod block;
mod codelets;
mod random;
mod variants;

pub use block::{recode_csc_to_csr, BlockError, PackedBlock, Record, RECORD_BYTES};
pub use codelets::{pack_shape, spgemm_registry, unpack_shape, CostProfile};
pub use random::{generate_random_program, random_program_config, random_registry, GeneratorLimits, RandomProgram};
pub use variants::{build_variant, Variant, VariantKind};

/// SplitMix64 generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Format {
    Csr,
    Csc,
}

impl Format {
    fn code(self) -> u64 {
        match self {
            Format::Csr => 0,
            Format::Csc => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MatrixError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid matrix: {0}")]
    Invalid(String),
    #[error("malformed matrix blob: {0}")]
    Blob(String),
    #[error("{what} needs {needed} bytes but a register holds {capacity}")]
    TooLarge { what: String, needed: usize, capacity: usize },
}

/// Compressed sparse matrix. For CSR the segments are rows and `idx` holds
/// column indices; for CSC the other way around.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    format: Format,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        format: Format,
        ptr: Vec<usize>,
        idx: Vec<usize>,
        val: Vec<f64>,
    ) -> Result<Self, MatrixError> {
        let bad = |m: String| Err(MatrixError::Invalid(m));
        if rows == 0 || cols == 0 {
            return bad(format!("dimensions {rows}x{cols} must be positive"));
        }
        let (outer, inner) = match format {
            Format::Csr => (rows, cols),
            Format::Csc => (cols, rows),
        };
        if ptr.len() != outer + 1 {
            return bad(format!("ptr has {} entries, expected {}", ptr.len(), outer + 1));
        }
        if idx.len() != val.len() {
            return bad(format!("{} indices but {} values", idx.len(), val.len()));
        }
        if ptr[0] != 0 || ptr[outer] != idx.len() {
            return bad("ptr must start at 0 and end at nnz".into());
        }
        for s in 0..outer {
            if ptr[s] > ptr[s + 1] {
                return bad(format!("ptr decreases at {s}"));
            }
            let seg = &idx[ptr[s]..ptr[s + 1]];
            if seg.iter().any(|&i| i >= inner) {
                return bad(format!("index out of range in segment {s}"));
            }
            if seg.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("indices not strictly increasing in segment {s}"));
            }
        }
        Ok(SparseMatrix { rows, cols, format, ptr, idx, val })
    }

    /// Compresses a row-major dense array, dropping zeros.
    pub fn from_dense(rows: usize, cols: usize, dense: &[f64], format: Format) -> Result<Self, MatrixError> {
        if dense.len() != rows * cols {
            return Err(MatrixError::Shape(format!("{} values for {rows}x{cols}", dense.len())));
        }
        let (outer, inner) = match format {
            Format::Csr => (rows, cols),
            Format::Csc => (cols, rows),
        };
        let mut ptr = vec![0];
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let v = match format {
                    Format::Csr => dense[o * cols + i],
                    Format::Csc => dense[i * cols + o],
                };
                if v != 0.0 {
                    idx.push(i);
                    val.push(v);
                }
            }
            ptr.push(idx.len());
        }
        Self::new(rows, cols, format, ptr, idx, val)
    }

    /// Bernoulli(`density`) sparsity with values uniform in `[-1, 1]`.
    /// Entries are drawn in row-major order regardless of `format`.
    pub fn random(rows: usize, cols: usize, density: f64, rng: &mut SplitMix64, format: Format) -> Self {
        let mut dense = vec![0.0; rows * cols];
        for v in dense.iter_mut() {
            let keep = rng.next_f64() < density;
            let x = rng.next_f64() * 2.0 - 1.0;
            if keep {
                *v = x;
            }
        }
        Self::from_dense(rows, cols, &dense, format).expect("well-formed by construction")
    }

    pub fn identity(n: usize, format: Format) -> Self {
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            dense[i * n + i] = 1.0;
        }
        Self::from_dense(n, n, &dense, format).expect("well-formed by construction")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn ptr(&self) -> &[usize] {
        &self.ptr
    }

    pub fn idx(&self) -> &[usize] {
        &self.idx
    }

    pub fn val(&self) -> &[f64] {
        &self.val
    }

    /// `(segment, index, value)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ptr.len() - 1)
            .flat_map(move |s| (self.ptr[s]..self.ptr[s + 1]).map(move |e| (s, self.idx[e], self.val[e])))
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for (s, i, v) in self.entries() {
            match self.format {
                Format::Csr => d[s * self.cols + i] = v,
                Format::Csc => d[i * self.cols + s] = v,
            }
        }
        d
    }

    pub fn to_format(&self, format: Format) -> Self {
        if format == self.format {
            return self.clone();
        }
        Self::from_dense(self.rows, self.cols, &self.to_dense(), format).expect("same matrix")
    }

    /// Keeps only the entries whose inner-product index `k` (column for
    /// CSC, row for CSR) lies in `range`.
    pub fn k_slice(&self, range: std::ops::Range<usize>) -> Self {
        let mut ptr = vec![0];
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for s in 0..self.ptr.len() - 1 {
            if range.contains(&s) {
                idx.extend_from_slice(&self.idx[self.ptr[s]..self.ptr[s + 1]]);
                val.extend_from_slice(&self.val[self.ptr[s]..self.ptr[s + 1]]);
            }
            ptr.push(idx.len());
        }
        Self::new(self.rows, self.cols, self.format, ptr, idx, val).expect("subset of a valid matrix")
    }

    /// Memory image: `format, rows, cols, nnz, ptr[..], idx[..]` as u64 LE,
    /// then `val[..]` as f64 LE.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (4 + self.ptr.len() + 2 * self.nnz()));
        let header = [self.format.code(), self.rows as u64, self.cols as u64, self.nnz() as u64];
        for w in header.into_iter().chain(self.ptr.iter().map(|&p| p as u64)).chain(self.idx.iter().map(|&i| i as u64)) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for v in &self.val {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_blob(blob: &[u8]) -> Result<Self, MatrixError> {
        let err = |m: &str| MatrixError::Blob(m.to_string());
        let word = |i: usize| -> Result<u64, MatrixError> {
            let b = blob.get(i * 8..i * 8 + 8).ok_or_else(|| err("truncated"))?;
            Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
        };
        let format = match word(0)? {
            0 => Format::Csr,
            1 => Format::Csc,
            f => return Err(MatrixError::Blob(format!("unknown format code {f}"))),
        };
        let (rows, cols, nnz) = (word(1)?, word(2)?, word(3)?);
        let outer = match format {
            Format::Csr => rows,
            Format::Csc => cols,
        };
        let words = blob.len() as u64 / 8;
        let needed = 4u64.checked_add(outer).and_then(|n| n.checked_add(1)).and_then(|n| n.checked_add(nnz.checked_mul(2)?));
        match needed {
            Some(n) if n <= words => {}
            _ => return Err(err("length fields exceed the blob")),
        }
        let (outer, nnz) = (outer as usize, nnz as usize);
        let ptr = (0..=outer).map(|i| word(4 + i).map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
        let base = 5 + outer;
        let idx = (0..nnz).map(|i| word(base + i).map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
        let val = (0..nnz).map(|i| word(base + nnz + i).map(f64::from_bits)).collect::<Result<Vec<_>, _>>()?;
        Self::new(rows as usize, cols as usize, format, ptr, idx, val)
    }
}

impl fmt::Display for SparseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} {:?} nnz={}", self.rows, self.cols, self.format, self.nnz())
    }
}

/// `C = A·B` by a dense triple loop, summing in ascending `k` from `0.0`.
/// Row-major result.
pub fn dense_oracle(a: &SparseMatrix, b: &SparseMatrix) -> Result<Vec<f64>, MatrixError> {
    if a.cols != b.rows {
        return Err(MatrixError::Shape(format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols)));
    }
    let (da, db) = (a.to_dense(), b.to_dense());
    let (n, m, p) = (a.rows, a.cols, b.cols);
    let mut c = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            let mut acc = 0.0;
            for k in 0..m {
                acc += da[i * m + k] * db[k * p + j];
            }
            c[i * p + j] = acc;
        }
    }
    Ok(c)
}

/// Square operands for the demo: `A` then `B`, both drawn from one stream
/// seeded with `seed`.
pub fn random_pair(seed: u64, n: usize, density: f64) -> (SparseMatrix, SparseMatrix) {
    let mut rng = SplitMix64::new(seed);
    let a = SparseMatrix::random(n, n, density, &mut rng, Format::Csc);
    let b = SparseMatrix::random(n, n, density, &mut rng, Format::Csr);
    (a, b)
}

pub fn max_abs_error(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splitmix_reference_values() {
        let mut r = SplitMix64::new(1234567);
        assert_eq!(r.next_u64(), 6457827717110365317);
        assert_eq!(r.next_u64(), 3203168211198807973);
        let mut z = SplitMix64::new(0);
        assert_eq!(z.next_u64(), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn formats_agree() {
        let mut rng = SplitMix64::new(42);
        let a = SparseMatrix::random(16, 16, 0.25, &mut rng, Format::Csr);
        let c = a.to_format(Format::Csc);
        assert_eq!(a.to_dense(), c.to_dense());
        assert_eq!(a.nnz(), c.nnz());
        assert!(a.nnz() > 0 && a.nnz() < 256);
    }

    #[test]
    fn oracle_identity_and_zero() {
        let mut rng = SplitMix64::new(9);
        let b = SparseMatrix::random(8, 5, 0.5, &mut rng, Format::Csr);
        let i = SparseMatrix::identity(8, Format::Csc);
        assert_eq!(dense_oracle(&i, &b).unwrap(), b.to_dense());
        let z = SparseMatrix::random(8, 8, 0.0, &mut rng, Format::Csc);
        assert!(dense_oracle(&z, &b).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(dense_oracle(&b, &b), Err(MatrixError::Shape(_))));
    }

    #[test]
    fn oracle_small_product() {
        let a = SparseMatrix::from_dense(2, 2, &[1.0, 2.0, 0.0, 3.0], Format::Csc).unwrap();
        let b = SparseMatrix::from_dense(2, 2, &[4.0, 0.0, 5.0, 6.0], Format::Csr).unwrap();
        assert_eq!(dense_oracle(&a, &b).unwrap(), vec![14.0, 12.0, 15.0, 18.0]);
    }

    #[test]
    fn invalid_matrices() {
        assert!(SparseMatrix::new(2, 2, Format::Csr, vec![0, 1, 1], vec![2], vec![1.0]).is_err());
        assert!(SparseMatrix::new(2, 2, Format::Csr, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::new(2, 2, Format::Csr, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(SparseMatrix::from_blob(&[1, 2, 3]).is_err());
    }

    #[test]
    fn k_slices_partition() {
        let mut rng = SplitMix64::new(5);
        let a = SparseMatrix::random(6, 6, 0.5, &mut rng, Format::Csc);
        let (lo, hi) = (a.k_slice(0..3), a.k_slice(3..6));
        let sum: Vec<f64> = lo.to_dense().iter().zip(hi.to_dense()).map(|(x, y)| x + y).collect();
        assert_eq!(sum, a.to_dense());
    }

    proptest! {
        #[test]
        fn blob_round_trip(seed in any::<u64>(), r in 1usize..12, c in 1usize..12, d in 0.0f64..1.0, csc in any::<bool>()) {
            let f = if csc { Format::Csc } else { Format::Csr };
            let m = SparseMatrix::random(r, c, d, &mut SplitMix64::new(seed), f);
            prop_assert_eq!(SparseMatrix::from_blob(&m.to_blob()).unwrap(), m);
        }
    }
}
