use std::fmt::Write as _;

use super::SplitMix64;
use crate::isa::{parse_program, Program, RegClass};
use crate::machine::MachineConfig;
use crate::registry::{load_contiguous, store_contiguous, stream_contiguous, CodeletDefinition, Direction, OperandSlot, Registry};
use crate::timing::CodeletCost;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorLimits {
    /// Upper bound on static instructions.
    pub max_instructions: usize,
    pub max_trip_count: u64,
    /// L-registers `R2048L_0 .. R2048L_{l_registers-1}` are used.
    pub l_registers: u32,
    /// Data registers `R64B_0 .. R64B_{b_registers-1}`.
    pub b_registers: u32,
}

impl Default for GeneratorLimits {
    fn default() -> Self {
        GeneratorLimits { max_instructions: 200, max_trip_count: 64, l_registers: 8, b_registers: 8 }
    }
}

pub struct RandomProgram {
    pub source: String,
    pub program: Program,
    pub registry: Registry,
    pub config: MachineConfig,
}

/// Machine shape for generated programs: 256-byte L-registers and 8 KiB of
/// memory keep runs cheap.
pub fn random_program_config() -> MachineConfig {
    MachineConfig { lines_per_l_register: 4, main_memory_bytes: 8192, ..MachineConfig::default() }
}

fn l(direction: Direction, stream: bool) -> OperandSlot {
    OperandSlot { class: RegClass::Lines2048, direction, stream }
}

/// Built-ins plus byte-wise compute stubs.
pub fn random_registry() -> Registry {
    let mut reg = Registry::new();
    let io = CodeletCost::new(10, 0.0);
    let defs = [
        load_contiguous("LoadContiguous").with_cost(io),
        store_contiguous("StoreContiguous").with_cost(io),
        stream_contiguous("StreamContiguous").with_cost(io),
        CodeletDefinition::compute("AddL", vec![l(Direction::ReadWrite, false), l(Direction::Read, false)], |ctx| {
            let (dst, [src]) = ctx.split(0, [1])?;
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = d.wrapping_add(*s));
            Ok(())
        })
        .with_cost(CodeletCost::new(20, 0.0)),
        CodeletDefinition::compute(
            "XorL",
            vec![l(Direction::Write, false), l(Direction::Read, false), l(Direction::Read, false)],
            |ctx| {
                let (dst, [a, b]) = ctx.split(0, [1, 2])?;
                dst.iter_mut().zip(a.iter().zip(b)).for_each(|(d, (x, y))| *d = x ^ y);
                Ok(())
            },
        )
        .with_cost(CodeletCost::new(30, 0.0)),
        CodeletDefinition::compute("RotL", vec![l(Direction::Write, false), l(Direction::Read, false), OperandSlot::read_b()], |ctx| {
            let (dst, [src, amount]) = ctx.split(0, [1, 2])?;
            let n = src.len();
            let shift = amount[0] as usize % n;
            for (i, &b) in src.iter().enumerate() {
                dst[(i + shift) % n] = b.rotate_left(u32::from(amount[1] & 7));
            }
            Ok(())
        })
        .with_cost(CodeletCost::new(15, 0.1)),
        CodeletDefinition::compute("SpreadL", vec![l(Direction::Write, true), l(Direction::Read, false)], |ctx| {
            let (dst, [src]) = ctx.split(0, [1])?;
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s.rotate_left(3));
            Ok(())
        })
        .with_cost(CodeletCost::new(40, 0.2)),
        CodeletDefinition::compute("FoldL", vec![l(Direction::Write, false), l(Direction::Read, true), OperandSlot::read_b()], |ctx| {
            let (dst, [src, k]) = ctx.split(0, [1, 2])?;
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = if *s == 0 { 0 } else { s.wrapping_add(k[0]) });
            Ok(())
        })
        .with_cost(CodeletCost::new(25, 0.0)),
    ];
    reg.extend(defs).expect("distinct names");
    reg
}

// Reserved control registers.
const COUNTER: u32 = 20;
const TRIP: u32 = 21;
const ONE: u32 = 22;
const ADDR: u32 = 23;
const LEN: u32 = 24;
const BASE: u32 = 25;
const STRIDE: u32 = 26;

struct Gen<'a> {
    rng: SplitMix64,
    limits: &'a GeneratorLimits,
    mem: u64,
    l_bytes: u64,
    lines: Vec<String>,
    pending_label: Option<String>,
    labels: usize,
}

impl Gen<'_> {
    fn emit(&mut self, text: String) {
        let line = match self.pending_label.take() {
            Some(label) => format!("{label}: {text}"),
            None => text,
        };
        self.lines.push(line);
    }

    fn label(&mut self) -> String {
        self.labels += 1;
        format!("L{}", self.labels)
    }

    fn pick(&mut self, n: u64) -> u64 {
        self.rng.below(n)
    }

    fn lreg(&mut self) -> String {
        format!("R2048L_{}", self.pick(self.limits.l_registers as u64))
    }

    fn breg(&mut self) -> String {
        format!("R64B_{}", self.pick(self.limits.b_registers as u64))
    }

    fn imm(&mut self) -> String {
        match self.pick(4) {
            0 => format!("{}", self.pick(16)),
            1 => format!("-{}", self.pick(1000)),
            2 => format!("{:#x}", self.rng.next_u64()),
            _ => format!("{}", self.pick(1 << 20)),
        }
    }

    /// One to four instructions with no control transfer. `in_loop` makes
    /// memory addresses depend on the loop counter.
    fn straight(&mut self, in_loop: bool) {
        match self.pick(12) {
            0 => {
                let (d, s) = (self.lreg(), self.lreg());
                self.emit(format!("COD AddL {d}, {s};"));
            }
            1 => {
                let (d, a, b) = (self.lreg(), self.lreg(), self.lreg());
                self.emit(format!("COD XorL {d}, {a}, {b};"));
            }
            2 => {
                let (d, s, k) = (self.lreg(), self.lreg(), self.breg());
                self.emit(format!("COD RotL {d}, {s}, {k};"));
            }
            3 => {
                let (d, s) = (self.lreg(), self.lreg());
                self.emit(format!("COD SpreadL {d}, {s};"));
                if self.pick(3) > 0 {
                    let (o, k) = (self.lreg(), self.breg());
                    self.emit(format!("COD FoldL {o}, {d}, {k};"));
                }
            }
            4 => {
                let (d, s, k) = (self.lreg(), self.lreg(), self.breg());
                self.emit(format!("COD FoldL {d}, {s}, {k};"));
            }
            5 => {
                let (d, v) = (self.breg(), self.imm());
                self.emit(format!("LDIMM {d}, {v};"));
            }
            6 => {
                let op = ["ADD", "SUB", "MULT"][self.pick(3) as usize];
                let (d, a, b) = (self.breg(), self.breg(), self.breg());
                self.emit(format!("{op} {d}, {a}, {b};"));
            }
            _ => self.memory_op(in_loop),
        }
    }

    fn memory_op(&mut self, in_loop: bool) {
        let len = self.pick(self.l_bytes + 1);
        if in_loop {
            self.emit(format!("MULT R64B_{ADDR}, R64B_{COUNTER}, R64B_{STRIDE};"));
            self.emit(format!("ADD R64B_{ADDR}, R64B_{ADDR}, R64B_{BASE};"));
        } else {
            let addr = self.pick(self.mem - self.l_bytes + 1);
            self.emit(format!("LDIMM R64B_{ADDR}, {addr};"));
        }
        self.emit(format!("LDIMM R64B_{LEN}, {len};"));
        let r = self.lreg();
        match self.pick(3) {
            0 => self.emit(format!("MEMCOD LoadContiguous {r}, R64B_{ADDR}, R64B_{LEN};")),
            1 => self.emit(format!("MEMCOD StoreContiguous {r}, R64B_{ADDR}, R64B_{LEN};")),
            _ => {
                self.emit(format!("MEMCOD StreamContiguous {r}, R64B_{ADDR}, R64B_{LEN};"));
                if self.pick(2) == 0 {
                    let (o, k) = (self.lreg(), self.breg());
                    self.emit(format!("COD FoldL {o}, {r}, {k};"));
                }
            }
        }
    }

    fn counted_loop(&mut self) {
        let trip = 1 + self.pick(self.limits.max_trip_count);
        let stride = self.pick(65);
        let base = self.pick(self.mem - self.l_bytes - (trip - 1) * stride + 1);
        self.emit(format!("LDIMM R64B_{COUNTER}, 0;"));
        self.emit(format!("LDIMM R64B_{TRIP}, {trip};"));
        self.emit(format!("LDIMM R64B_{ONE}, 1;"));
        self.emit(format!("LDIMM R64B_{BASE}, {base};"));
        self.emit(format!("LDIMM R64B_{STRIDE}, {stride};"));
        let top = self.label();
        self.pending_label = Some(top.clone());
        for _ in 0..1 + self.pick(4) {
            self.straight(true);
        }
        self.emit(format!("ADD R64B_{COUNTER}, R64B_{COUNTER}, R64B_{ONE};"));
        self.emit(format!("BRLT R64B_{COUNTER}, R64B_{TRIP}, {top};"));
    }

    fn forward_branch(&mut self) {
        let skip = self.label();
        let cond = ["BREQ", "BRNE", "BRLT"][self.pick(3) as usize];
        let (a, b) = (self.breg(), self.breg());
        self.emit(format!("{cond} {a}, {b}, {skip};"));
        for _ in 0..1 + self.pick(3) {
            self.straight(false);
        }
        self.pending_label = Some(skip);
    }
}

/// Deterministic, terminating, valid program for `seed` under
/// [`random_registry`] and [`random_program_config`].
pub fn generate_random_program(seed: u64, limits: &GeneratorLimits) -> RandomProgram {
    let config = random_program_config();
    let mut g = Gen {
        rng: SplitMix64::new(seed),
        limits,
        mem: config.main_memory_bytes as u64,
        l_bytes: config.l_register_bytes() as u64,
        lines: Vec::new(),
        pending_label: None,
        labels: 0,
    };
    // Largest block is a loop of 27 instructions, plus a final COMMIT.
    let budget = limits.max_instructions.saturating_sub(28);
    let target = g.pick(budget as u64 + 1) as usize;
    while g.lines.len() < target {
        match g.pick(10) {
            0 | 1 => g.counted_loop(),
            2 => g.forward_branch(),
            _ => g.straight(false),
        }
    }
    if g.pending_label.is_some() || g.pick(2) == 0 {
        g.emit("COMMIT;".to_string());
    }
    let mut source = String::new();
    for line in &g.lines {
        writeln!(source, "{line}").expect("string write");
    }
    let program = parse_program(&source).expect("generated program parses");
    RandomProgram { source, program, registry: random_registry(), config }
}
