use std::collections::BTreeMap;

use super::{Format, PackedBlock, Record, SparseMatrix};
use crate::isa::RegClass;
use crate::machine::low_u64;
use crate::registry::{store_contiguous, CodeletDefinition, CodeletError, Direction, ExecContext, OperandSlot, Registry};
use crate::timing::CodeletCost;

/// Per-byte cost regime for the outer-product codelet: blocks that were
/// recoded by a memory codelet are cheaper to walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostProfile {
    PreRecode,
    PostRecode,
}

impl CostProfile {
    pub fn outer_product(self) -> CodeletCost {
        match self {
            CostProfile::PreRecode => CodeletCost::new(1000, 0.5),
            CostProfile::PostRecode => CodeletCost::new(1000, 0.1),
        }
    }
}

pub const PARTIALS_SUM_COST: CodeletCost = CodeletCost::new(1000, 0.5);
pub const MEMORY_COST: CodeletCost = CodeletCost::new(0, 0.0);
pub const CONVERT_COST: CodeletCost = CodeletCost::new(100, 0.0);

fn failed(e: impl ToString) -> CodeletError {
    CodeletError::Failed(e.to_string())
}

/// Reads a matrix blob from `[addr, addr+len)` and packs it into slot 0.
fn load_block(ctx: &mut ExecContext<'_>, want: Format, recode: bool) -> Result<(), CodeletError> {
    let addr = ctx.input_u64(1)?;
    let len = ctx.input_u64(2)?;
    let blob = ctx.load(addr, len)?;
    let m = SparseMatrix::from_blob(&blob).map_err(failed)?;
    if m.format() != want {
        return Err(failed(format!("expected a {want:?} matrix, found {:?}", m.format())));
    }
    let mut block = PackedBlock::from_matrix(&m);
    if recode {
        block = block.transposed();
    }
    block.encode_into(ctx.output(0)?).map_err(failed)
}

fn block_loader(name: &str, want: Format, recode: bool, stream: bool) -> CodeletDefinition {
    let dst = OperandSlot { class: RegClass::Lines2048, direction: Direction::Write, stream };
    CodeletDefinition::memory(name, vec![dst, OperandSlot::read_b(), OperandSlot::read_b()], move |ctx| {
        load_block(ctx, want, recode)
    })
    .with_cost(if recode { CONVERT_COST } else { MEMORY_COST })
}

/// Partial products `(i, j, a·b)` of two k-major blocks, in `(k, i, j)` order.
pub fn outer_product(a: &PackedBlock, b: &PackedBlock) -> PackedBlock {
    let mut by_k: BTreeMap<u64, Vec<(u64, f64)>> = BTreeMap::new();
    for r in &b.records {
        by_k.entry(r.index0).or_default().push((r.index1, r.value));
    }
    let mut records = Vec::new();
    for ra in &a.records {
        for &(j, vb) in by_k.get(&ra.index0).map_or(&[][..], Vec::as_slice) {
            records.push(Record { index0: ra.index1, index1: j, value: ra.value * vb });
        }
    }
    PackedBlock::new(records)
}

/// Result descriptor word: rows in the low 32 bits, cols in the high 32.
pub fn pack_shape(rows: usize, cols: usize) -> u64 {
    rows as u64 | (cols as u64) << 32
}

pub fn unpack_shape(word: u64) -> (u64, u64) {
    (word & 0xFFFF_FFFF, word >> 32)
}

/// Adds partial products into a row-major f64 matrix described by
/// `(rows, cols)`.
pub fn accumulate(c: &mut [u8], rows: u64, cols: u64, partials: &PackedBlock) -> Result<(), CodeletError> {
    let cells = rows.checked_mul(cols).filter(|&n| n.saturating_mul(8) <= c.len() as u64);
    if cells.is_none() {
        return Err(failed(format!("a {rows}x{cols} result does not fit in {} bytes", c.len())));
    }
    for r in &partials.records {
        if r.index0 >= rows || r.index1 >= cols {
            return Err(failed(format!("partial ({}, {}) outside {rows}x{cols}", r.index0, r.index1)));
        }
        let at = ((r.index0 * cols + r.index1) * 8) as usize;
        let cell = &mut c[at..at + 8];
        let sum = f64::from_le_bytes(cell.try_into().expect("8 bytes")) + r.value;
        cell.copy_from_slice(&sum.to_le_bytes());
    }
    Ok(())
}

/// Codelets for the sparse GEMM programs. With `streaming`, the block
/// fetch/recode codelets and both compute codelets declare their L-register
/// hand-offs as streamed; the dedicated `Stream*` loaders always do.
pub fn spgemm_registry(profile: CostProfile, streaming: bool) -> Registry {
    let l = |direction, stream| OperandSlot { class: RegClass::Lines2048, direction, stream };
    let mut reg = Registry::new();
    let defs = [
        block_loader("LoadCSCBlock_2048L", Format::Csc, false, false),
        block_loader("LoadCSRBlock_2048L", Format::Csr, false, false),
        block_loader("FetchCSCBlock_2048L", Format::Csc, false, streaming),
        block_loader("StreamCSCBlock_2048L", Format::Csc, false, true),
        block_loader("StreamCSRBlock_2048L", Format::Csr, false, true),
        block_loader("ConvertCSCBlock_2048L", Format::Csc, true, streaming),
        store_contiguous("StoreData_2048L").with_cost(MEMORY_COST),
        CodeletDefinition::compute(
            "spOuterMatMult_2048L",
            vec![l(Direction::Write, streaming), l(Direction::Read, streaming), l(Direction::Read, streaming)],
            |ctx| {
                let (out, [a, b]) = ctx.split(0, [1, 2])?;
                let a = PackedBlock::decode(a).map_err(failed)?;
                let b = PackedBlock::decode(b).map_err(failed)?;
                outer_product(&a, &b).encode_into(out).map_err(failed)
            },
        )
        .with_cost(profile.outer_product()),
        CodeletDefinition::compute(
            "PartialsSum_2048L",
            vec![l(Direction::ReadWrite, false), OperandSlot::read_b(), l(Direction::Read, streaming)],
            |ctx| {
                let (c, [desc, partials]) = ctx.split(0, [1, 2])?;
                let (rows, cols) = unpack_shape(low_u64(desc));
                let partials = PackedBlock::decode(partials).map_err(failed)?;
                accumulate(c, rows, cols, &partials)
            },
        )
        .with_cost(PARTIALS_SUM_COST),
    ];
    reg.extend(defs).expect("distinct names");
    reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::MainMemory;
    use crate::spgemm::{dense_oracle, SplitMix64};

    fn word(v: u64) -> Vec<u8> {
        let mut b = vec![0u8; 64];
        b[..8].copy_from_slice(&v.to_le_bytes());
        b
    }

    #[test]
    fn outer_product_then_sum_matches_oracle() {
        let mut rng = SplitMix64::new(11);
        let a = SparseMatrix::random(7, 5, 0.4, &mut rng, Format::Csc);
        let b = SparseMatrix::random(5, 6, 0.4, &mut rng, Format::Csr);
        let partials = outer_product(&PackedBlock::from_matrix(&a), &PackedBlock::from_matrix(&b));
        let mut c = vec![0u8; 7 * 6 * 8];
        accumulate(&mut c, 7, 6, &partials).unwrap();
        let got: Vec<f64> = c.chunks_exact(8).map(|x| f64::from_le_bytes(x.try_into().unwrap())).collect();
        assert_eq!(got, dense_oracle(&a, &b).unwrap());
    }

    #[test]
    fn accumulate_rejects_bad_shapes() {
        let p = PackedBlock::new(vec![Record { index0: 2, index1: 0, value: 1.0 }]);
        assert!(accumulate(&mut [0; 32], 2, 2, &p).is_err());
        assert!(accumulate(&mut [0; 16], 2, 2, &PackedBlock::default()).is_err());
    }

    #[test]
    fn loaders_check_format_and_recode() {
        let mut rng = SplitMix64::new(4);
        let m = SparseMatrix::random(6, 6, 0.5, &mut rng, Format::Csc);
        let blob = m.to_blob();
        let mut mm = MainMemory::new(4096);
        mm.store(128, &blob).unwrap();
        let reg = spgemm_registry(CostProfile::PostRecode, false);
        let run = |name: &str, mm: &mut MainMemory| {
            reg.get(name).unwrap().execute(vec![vec![0; 2048], word(128), word(blob.len() as u64)], Some(mm))
        };
        let conv = run("ConvertCSCBlock_2048L", &mut mm).unwrap();
        assert_eq!(conv.memory_bytes, blob.len() as u64);
        let want = PackedBlock::from_matrix(&m.to_format(Format::Csr));
        assert_eq!(PackedBlock::decode(&conv.operands[0]).unwrap(), want);
        assert!(matches!(run("LoadCSRBlock_2048L", &mut mm), Err(CodeletError::Failed(_))));
    }

    #[test]
    fn stream_flags_follow_the_plan() {
        let plain = spgemm_registry(CostProfile::PreRecode, false);
        let streamed = spgemm_registry(CostProfile::PreRecode, true);
        assert!(!plain.get("spOuterMatMult_2048L").unwrap().slots[0].stream);
        assert!(streamed.get("spOuterMatMult_2048L").unwrap().slots.iter().all(|s| s.stream));
        assert!(plain.get("StreamCSCBlock_2048L").unwrap().slots[0].stream);
        assert!(!streamed.get("PartialsSum_2048L").unwrap().slots[0].stream);
    }
}
