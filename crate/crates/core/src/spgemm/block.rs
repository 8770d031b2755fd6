use super::SparseMatrix;

/// Bytes per packed record: two u64 indices and an f64 value.
pub const RECORD_BYTES: usize = 24;
const HEADER_BYTES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub index0: u64,
    pub index1: u64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BlockError {
    #[error("block of {count} records does not fit in {capacity} bytes")]
    Overflow { count: u64, capacity: usize },
    #[error("register of {0} bytes is too small for a block header")]
    NoHeader(usize),
}

/// Register image: 8-byte LE count `k`, then `k` records, then zeroes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PackedBlock {
    pub records: Vec<Record>,
}

impl PackedBlock {
    pub fn new(records: Vec<Record>) -> Self {
        PackedBlock { records }
    }

    /// One record per stored entry as `(segment, index)`: `(col, row)` for
    /// CSC, `(row, col)` for CSR.
    pub fn from_matrix(m: &SparseMatrix) -> Self {
        let records = m.entries().map(|(s, i, v)| Record { index0: s as u64, index1: i as u64, value: v }).collect();
        PackedBlock { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(register_bytes: usize) -> usize {
        register_bytes.saturating_sub(HEADER_BYTES) / RECORD_BYTES
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + RECORD_BYTES * self.records.len()
    }

    /// Writes the block into `reg`, zeroing the remainder.
    pub fn encode_into(&self, reg: &mut [u8]) -> Result<(), BlockError> {
        if self.encoded_len() > reg.len() {
            return Err(BlockError::Overflow { count: self.records.len() as u64, capacity: reg.len() });
        }
        reg.fill(0);
        reg[..8].copy_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (r, out) in self.records.iter().zip(reg[HEADER_BYTES..].chunks_exact_mut(RECORD_BYTES)) {
            out[..8].copy_from_slice(&r.index0.to_le_bytes());
            out[8..16].copy_from_slice(&r.index1.to_le_bytes());
            out[16..].copy_from_slice(&r.value.to_le_bytes());
        }
        Ok(())
    }

    pub fn encode(&self, register_bytes: usize) -> Result<Vec<u8>, BlockError> {
        let mut reg = vec![0; register_bytes];
        self.encode_into(&mut reg)?;
        Ok(reg)
    }

    pub fn decode(reg: &[u8]) -> Result<Self, BlockError> {
        let head = reg.get(..HEADER_BYTES).ok_or(BlockError::NoHeader(reg.len()))?;
        let count = u64::from_le_bytes(head.try_into().expect("8 bytes"));
        if count > Self::capacity(reg.len()) as u64 {
            return Err(BlockError::Overflow { count, capacity: reg.len() });
        }
        let word = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let records = reg[HEADER_BYTES..]
            .chunks_exact(RECORD_BYTES)
            .take(count as usize)
            .map(|r| Record { index0: word(&r[..8]), index1: word(&r[8..16]), value: f64::from_bits(word(&r[16..])) })
            .collect();
        Ok(PackedBlock { records })
    }

    /// Sorted by `(index0, index1)`.
    pub fn is_sorted(&self) -> bool {
        self.records.windows(2).all(|w| (w[0].index0, w[0].index1) <= (w[1].index0, w[1].index1))
    }

    /// Swaps the index fields of every record and re-sorts.
    pub fn transposed(&self) -> Self {
        let mut records: Vec<Record> =
            self.records.iter().map(|r| Record { index0: r.index1, index1: r.index0, value: r.value }).collect();
        records.sort_by_key(|r| (r.index0, r.index1));
        PackedBlock { records }
    }
}

/// Re-encodes a CSC-ordered block `(col, row)` as a CSR-ordered block
/// `(row, col)` in a register of the same size.
pub fn recode_csc_to_csr(reg: &[u8]) -> Result<Vec<u8>, BlockError> {
    PackedBlock::decode(reg)?.transposed().encode(reg.len())
}
