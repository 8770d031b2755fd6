use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::codelets::pack_shape;
use super::{spgemm_registry, CostProfile, Format, MatrixError, PackedBlock, SparseMatrix};
use crate::isa::{parse_program, validate, Program, ValidateError, ValidatedProgram};
use crate::machine::{MachineConfig, MachineState, MainMemory, MemoryImage, Symbol};
use crate::registry::Registry;

/// The five program shapes compared in the study:
/// T5 load→compute→store per k-tile with no overlap between tiles,
/// T4 the same tiles with the second tile prefetched,
/// T3 a single recoded block, T2 streaming, T1 streaming with recode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VariantKind {
    T1,
    T2,
    T3,
    T4,
    T5,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [VariantKind::T1, VariantKind::T2, VariantKind::T3, VariantKind::T4, VariantKind::T5];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::T1 => "T1",
            VariantKind::T2 => "T2",
            VariantKind::T3 => "T3",
            VariantKind::T4 => "T4",
            VariantKind::T5 => "T5",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            VariantKind::T1 => "streaming with recode",
            VariantKind::T2 => "streaming",
            VariantKind::T3 => "prefetch with recode",
            VariantKind::T4 => "prefetch",
            VariantKind::T5 => "serialized baseline",
        }
    }

    fn recodes(self) -> bool {
        matches!(self, VariantKind::T1 | VariantKind::T3)
    }

    fn tiled(self) -> bool {
        matches!(self, VariantKind::T4 | VariantKind::T5)
    }

    fn streaming(self) -> bool {
        matches!(self, VariantKind::T1 | VariantKind::T2)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariantKind::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant `{s}` (expected T1..T5)"))
    }
}

/// A ready-to-run program with its memory image and codelets.
#[derive(Clone, Debug)]
pub struct Variant {
    pub kind: VariantKind,
    pub source: String,
    pub program: Program,
    pub registry: Registry,
    pub image: MemoryImage,
    pub config: MachineConfig,
    pub rows: usize,
    pub cols: usize,
}

impl Variant {
    pub fn validated(&self) -> Result<ValidatedProgram, ValidateError> {
        validate(&self.program, &self.registry, &self.config)
    }

    pub fn initial_state(&self) -> MachineState {
        let mut state = MachineState::new(self.config.clone());
        self.image.install(&mut state.memory).expect("memory sized to the image");
        state
    }

    pub fn result_bytes<'m>(&self, memory: &'m MainMemory) -> &'m [u8] {
        let c = self.image.symbol("C").expect("result symbol");
        memory.load(c.offset, c.length).expect("result in bounds")
    }

    /// Stored `C`, row-major.
    pub fn result(&self, memory: &MainMemory) -> Vec<f64> {
        self.result_bytes(memory).chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect()
    }
}

struct Layout {
    blob: Vec<u8>,
    symbols: BTreeMap<String, Symbol>,
}

impl Layout {
    fn place(&mut self, name: &str, bytes: &[u8]) -> Symbol {
        let offset = self.blob.len().next_multiple_of(64);
        self.blob.resize(offset, 0);
        self.blob.extend_from_slice(bytes);
        let sym = Symbol { offset: offset as u64, length: bytes.len() as u64 };
        self.symbols.insert(name.to_string(), sym);
        sym
    }
}

fn fits(what: &str, needed: usize, capacity: usize) -> Result<(), MatrixError> {
    if needed > capacity {
        return Err(MatrixError::TooLarge { what: what.to_string(), needed, capacity });
    }
    Ok(())
}

/// Builds variant `kind` for `C = A·B`. `A` is stored in CSC; `B` in CSC for
/// the recode variants and in CSR otherwise.
pub fn build_variant(kind: VariantKind, a: &SparseMatrix, b: &SparseMatrix) -> Result<Variant, MatrixError> {
    if a.cols() != b.rows() {
        return Err(MatrixError::Shape(format!("{}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols())));
    }
    let config = MachineConfig::default();
    let l_bytes = config.l_register_bytes();
    let (rows, cols) = (a.rows(), b.cols());
    let a = a.to_format(Format::Csc);
    let b = b.to_format(if kind.recodes() { Format::Csc } else { Format::Csr });

    fits("result matrix", rows * cols * 8, l_bytes)?;
    for (what, m) in [("A block", &a), ("B block", &b)] {
        fits(what, PackedBlock::from_matrix(m).encoded_len(), l_bytes)?;
    }
    let a_per_k: Vec<usize> = (0..a.cols()).map(|k| a.ptr()[k + 1] - a.ptr()[k]).collect();
    let b_dense = b.to_dense();
    let partials: usize =
        (0..a.cols()).map(|k| a_per_k[k] * b_dense[k * cols..(k + 1) * cols].iter().filter(|&&v| v != 0.0).count()).sum();
    fits("partial products", 8 + 24 * partials, l_bytes)?;

    let mut layout = Layout { blob: Vec::new(), symbols: BTreeMap::new() };
    let mut src = String::new();
    let ldimm = |src: &mut String, reg: u32, v: u64| writeln!(src, "LDIMM R64B_{reg}, {v};").expect("string write");
    writeln!(src, "// {} ({}): C = A*B, {rows}x{cols}", kind.name(), kind.description()).unwrap();
    if kind.tiled() {
        let mid = a.cols().div_ceil(2);
        let tiles = [(0, mid), (mid, a.cols())];
        for (t, &(lo, hi)) in tiles.iter().enumerate() {
            let sa = layout.place(&format!("A{t}"), &a.k_slice(lo..hi).to_blob());
            let sb = layout.place(&format!("B{t}"), &b.k_slice(lo..hi).to_blob());
            let base = 6 + 4 * t as u32;
            ldimm(&mut src, base, sa.offset);
            ldimm(&mut src, base + 16, sa.length);
            ldimm(&mut src, base + 1, sb.offset);
            ldimm(&mut src, base + 17, sb.length);
        }
    } else {
        let sa = layout.place("A", &a.to_blob());
        let sb = layout.place("B", &b.to_blob());
        ldimm(&mut src, 6, sa.offset);
        ldimm(&mut src, 22, sa.length);
        ldimm(&mut src, 7, sb.offset);
        ldimm(&mut src, 23, sb.length);
    }
    let sc = layout.place("C", &vec![0; rows * cols * 8]);
    ldimm(&mut src, 8, pack_shape(rows, cols));
    ldimm(&mut src, 9, sc.offset);
    ldimm(&mut src, 24, sc.length);

    src.push_str(match kind {
        VariantKind::T5 => T5_BODY,
        VariantKind::T4 => T4_BODY,
        VariantKind::T3 | VariantKind::T1 => RECODE_BODY,
        VariantKind::T2 => STREAM_BODY,
    });
    src.push_str("COMMIT;\n");

    let program = parse_program(&src).expect("generated program parses");
    let profile = if kind.recodes() { CostProfile::PostRecode } else { CostProfile::PreRecode };
    let registry = spgemm_registry(profile, kind.streaming());
    let memory = layout.blob.len().next_multiple_of(4096).max(4096);
    let config = MachineConfig { main_memory_bytes: memory, ..config };
    let image = MemoryImage::new(layout.blob, layout.symbols).expect("symbols inside the blob");
    Ok(Variant { kind, source: src, program, registry, image, config, rows, cols })
}

const T5_BODY: &str = "\
// tile 0
MEMCOD LoadCSCBlock_2048L R2048L_2, R64B_6, R64B_22;
MEMCOD LoadCSRBlock_2048L R2048L_3, R64B_7, R64B_23;
COD spOuterMatMult_2048L R2048L_4, R2048L_2, R2048L_3;
COD PartialsSum_2048L R2048L_1, R64B_8, R2048L_4;
// tile 1 reuses the tile 0 registers
MEMCOD LoadCSCBlock_2048L R2048L_2, R64B_10, R64B_26;
MEMCOD LoadCSRBlock_2048L R2048L_3, R64B_11, R64B_27;
COD spOuterMatMult_2048L R2048L_4, R2048L_2, R2048L_3;
COD PartialsSum_2048L R2048L_1, R64B_8, R2048L_4;
MEMCOD StoreData_2048L R2048L_1, R64B_9, R64B_24;
";

const T4_BODY: &str = "\
// Load tile 0, prefetch tile 1
MEMCOD LoadCSCBlock_2048L R2048L_2, R64B_6, R64B_22;
MEMCOD LoadCSRBlock_2048L R2048L_3, R64B_7, R64B_23;
MEMCOD LoadCSCBlock_2048L R2048L_5, R64B_10, R64B_26;
MEMCOD LoadCSRBlock_2048L R2048L_6, R64B_11, R64B_27;
COD spOuterMatMult_2048L R2048L_4, R2048L_2, R2048L_3;
COD PartialsSum_2048L R2048L_1, R64B_8, R2048L_4;
COD spOuterMatMult_2048L R2048L_7, R2048L_5, R2048L_6;
COD PartialsSum_2048L R2048L_1, R64B_8, R2048L_7;
MEMCOD StoreData_2048L R2048L_1, R64B_9, R64B_24;
";

const STREAM_BODY: &str = "\
// Stream chunks of matrix to spOuterMatMult
MEMCOD StreamCSCBlock_2048L R2048L_2, R64B_6, R64B_22;
MEMCOD StreamCSRBlock_2048L R2048L_3, R64B_7, R64B_23;
// Perform outer product mult
// Stream partial result mats. out
COD spOuterMatMult_2048L R2048L_4, R2048L_2, R2048L_3;
// Stream in partial matrices and sum
COD PartialsSum_2048L R2048L_1, R64B_8, R2048L_4;
MEMCOD StoreData_2048L R2048L_1, R64B_9, R64B_24;
";

const RECODE_BODY: &str = "\
// Fetch block of B; recode block of C into CSR format;
// stream both to CU
MEMCOD FetchCSCBlock_2048L R2048L_2, R64B_6, R64B_22;
MEMCOD ConvertCSCBlock_2048L R2048L_3, R64B_7, R64B_23;
// Do sp outer product mult; stream partial mat. out
COD spOuterMatMult_2048L R2048L_4, R2048L_2, R2048L_3;
// Sum streamed-in matrices, store result
COD PartialsSum_2048L R2048L_1, R64B_8, R2048L_4;
MEMCOD StoreData_2048L R2048L_1, R64B_9, R64B_24;
";
