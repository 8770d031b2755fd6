//! Program execution: the in-order reference interpreter and the
//! out-of-order pipelined core.

use std::fmt;

use serde::Serialize;

use crate::isa::{ControlOp, Op, Reg, ValidatedProgram};
use crate::machine::{low_u64, MachineConfig, MachineState, MainMemory, RegisterError, RegisterFile};
use crate::registry::{CodeletDefinition, CodeletError};
use crate::timing::{CostModel, TraceEvent};

mod pipeline;

pub use pipeline::run_timed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Commit,
    FellOffEnd,
}

/// Architectural state after every instruction has completed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinalState {
    pub registers: RegisterFile,
    pub memory: MainMemory,
    pub committed: u64,
    pub termination: Termination,
}

/// Execution resource. Ordinals are SU = 0, then CUs, then MCUs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Resource {
    Su,
    Cu(usize),
    Mcu(usize),
}

impl Resource {
    pub fn ordinal(self, cfg: &MachineConfig) -> usize {
        match self {
            Resource::Su => 0,
            Resource::Cu(i) => 1 + i,
            Resource::Mcu(j) => 1 + cfg.cu_count + j,
        }
    }

    pub fn is_cu(self) -> bool {
        matches!(self, Resource::Cu(_))
    }

    pub fn is_mcu(self) -> bool {
        matches!(self, Resource::Mcu(_))
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Su => write!(f, "SU"),
            Resource::Cu(i) => write!(f, "CU#{i}"),
            Resource::Mcu(j) => write!(f, "MCU#{j}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Dependency {
    pub seq: u64,
    /// Satisfied through a FIFO pairing rather than by completion.
    pub stream: bool,
}

/// One dynamic instruction as it went through the machine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScheduleEntry {
    pub seq: u64,
    pub index: usize,
    pub name: String,
    pub resource: Resource,
    pub fetch: u64,
    pub issue: u64,
    pub complete: u64,
    pub deps: Vec<Dependency>,
}

/// A chunk moved through a stream FIFO.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ChunkTransfer {
    pub channel: usize,
    pub producer: u64,
    pub consumer: u64,
    pub chunk: usize,
    pub bytes: usize,
    pub push_end: u64,
    pub pop_start: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Schedule {
    /// Entries in completion order.
    pub entries: Vec<ScheduleEntry>,
    pub events: Vec<TraceEvent>,
    pub transfers: Vec<ChunkTransfer>,
    pub makespan: u64,
    /// Stream operands that fell back to whole-register dependencies.
    pub stream_fallbacks: usize,
}

impl Schedule {
    pub fn entry(&self, seq: u64) -> Option<&ScheduleEntry> {
        self.entries.iter().find(|e| e.seq == seq)
    }

    pub fn entries_for(&self, index: usize) -> impl Iterator<Item = &ScheduleEntry> {
        self.entries.iter().filter(move |e| e.index == index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockedInstruction {
    pub seq: u64,
    pub index: usize,
    pub name: String,
    pub waiting_for: String,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("instruction {index} (`{name}`): {source}")]
    Codelet { index: usize, name: String, source: CodeletError },
    #[error("instruction {index}: {source}")]
    Register { index: usize, source: RegisterError },
    #[error("dynamic instruction limit of {0} exceeded")]
    DynamicLimit(u64),
    #[error("deadlock: {}", describe_cycle(.0))]
    Deadlock(Vec<BlockedInstruction>),
}

fn describe_cycle(blocked: &[BlockedInstruction]) -> String {
    blocked
        .iter()
        .map(|b| format!("#{} {} (instruction {}) waits for {}", b.seq, b.name, b.index, b.waiting_for))
        .collect::<Vec<_>>()
        .join("; ")
}

impl EngineError {
    pub fn is_runtime(&self) -> bool {
        !matches!(self, EngineError::Deadlock(_))
    }
}

/// Operand buffers for a codelet: register contents for readable slots,
/// zeroes for write-only slots.
fn gather_operands(
    def: &CodeletDefinition,
    cfg: &MachineConfig,
    mut read: impl FnMut(usize) -> Result<Vec<u8>, RegisterError>,
) -> Result<Vec<Vec<u8>>, RegisterError> {
    def.slots
        .iter()
        .enumerate()
        .map(|(i, slot)| if slot.direction.reads() { read(i) } else { Ok(vec![0; cfg.class_bytes(slot.class)]) })
        .collect()
}

pub(crate) fn control_value(op: &ControlOp, read: impl Fn(Reg) -> u64) -> Option<u64> {
    match op {
        ControlOp::LoadImm { imm, .. } => Some(*imm),
        ControlOp::Arith { op, lhs, rhs, .. } => Some(op.apply(read(*lhs), read(*rhs))),
        _ => None,
    }
}

/// Executes instructions one at a time in control-flow order. Stream flags
/// are ignored.
pub fn run_sequential(program: &ValidatedProgram, mut state: MachineState) -> Result<FinalState, EngineError> {
    let limit = state.config.max_dynamic_instructions;
    let mut pc = 0usize;
    let mut committed = 0u64;
    let termination = loop {
        if pc >= program.len() {
            break Termination::FellOffEnd;
        }
        if committed >= limit {
            return Err(EngineError::DynamicLimit(limit));
        }
        committed += 1;
        let reg_err = |source| EngineError::Register { index: pc, source };
        match program.op(pc) {
            Op::Codelet { operands, .. } => {
                let def = program.definition(pc).expect("validated codelet");
                let inputs = gather_operands(def, &state.config, |i| state.registers.read(operands[i])).map_err(reg_err)?;
                let out = def
                    .execute(inputs, Some(&mut state.memory))
                    .map_err(|source| EngineError::Codelet { index: pc, name: def.name.clone(), source })?;
                for (i, slot) in def.slots.iter().enumerate() {
                    if slot.direction.writes() {
                        state.registers.write(operands[i], &out.operands[i]).map_err(reg_err)?;
                    }
                }
                pc += 1;
            }
            Op::Control(ControlOp::Commit) => break Termination::Commit,
            Op::Control(c) => {
                let regs = &state.registers;
                let read = |r: Reg| regs.view(r).map(low_u64).unwrap_or(0);
                match c {
                    ControlOp::Branch { cond, lhs, rhs, .. } => {
                        pc = if cond.holds(read(*lhs), read(*rhs)) { program.target(pc).expect("resolved") } else { pc + 1 };
                    }
                    ControlOp::Jump { .. } => pc = program.target(pc).expect("resolved"),
                    _ => {
                        let value = control_value(c, read).expect("value-producing op");
                        let dst = c.destination().expect("value-producing op");
                        state.registers.write_u64(dst, value).map_err(reg_err)?;
                        pc += 1;
                    }
                }
            }
        }
    };
    Ok(FinalState { registers: state.registers, memory: state.memory, committed, termination })
}

/// Runs the out-of-order core with the default cost model.
pub fn run_pipelined(program: &ValidatedProgram, state: MachineState) -> Result<(FinalState, Schedule), EngineError> {
    run_timed(program, state, &CostModel::default())
}
