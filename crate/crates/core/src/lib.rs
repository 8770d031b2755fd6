//! Emulator and discrete-event timing simulator for sequential codelet
//! programs extended with memory codelets.
//!
//! A program is parsed ([`isa::parse_program`]), checked against a codelet
//! [`registry::Registry`] ([`isa::validate`]), and then run either by the
//! in-order reference interpreter ([`engine::run_sequential`]) or by the
//! out-of-order core ([`engine::run_pipelined`], [`timing::simulate`]).

pub mod engine;
pub mod isa;
pub mod machine;
pub mod registry;
pub mod spgemm;
pub mod timing;

pub use engine::{run_pipelined, run_sequential, EngineError, FinalState, Termination};
pub use isa::{parse_program, validate, Program, ValidatedProgram};
pub use machine::{MachineConfig, MachineState};
pub use registry::Registry;
pub use timing::{simulate, CostModel};
