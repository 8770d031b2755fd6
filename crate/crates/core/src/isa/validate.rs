use std::fmt;
use std::sync::Arc;

use super::{CodeletKind, Op, Program, Reg, RegClass};
use crate::machine::MachineConfig;
use crate::registry::{CodeletDefinition, Registry};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ValidateErrorKind {
    UnknownCodelet(String),
    KindMismatch { name: String, used_as: CodeletKind, registered_as: CodeletKind },
    Arity { name: String, expected: usize, found: usize },
    ClassMismatch { operand: usize, expected: RegClass, found: Reg },
    RegisterOutOfRange { reg: Reg, limit: usize },
}

impl fmt::Display for ValidateErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidateErrorKind::UnknownCodelet(n) => write!(f, "unknown codelet name `{n}`"),
            ValidateErrorKind::KindMismatch { name, used_as, registered_as } => write!(
                f,
                "kind mismatch: `{name}` used with {} but registered as a {} codelet",
                used_as.mnemonic(),
                match registered_as {
                    CodeletKind::Compute => "compute",
                    CodeletKind::Memory => "memory",
                }
            ),
            ValidateErrorKind::Arity { name, expected, found } => {
                write!(f, "operand arity mismatch: `{name}` takes {expected} operands, found {found}")
            }
            ValidateErrorKind::ClassMismatch { operand, expected, found } => {
                write!(f, "operand class mismatch: operand {operand} must be {}<n>, found {found}", expected.prefix())
            }
            ValidateErrorKind::RegisterOutOfRange { reg, limit } => {
                write!(f, "register index out of range: {reg} (limit {limit})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("instruction {index}: {kind}")]
pub struct ValidateError {
    pub index: usize,
    pub kind: ValidateErrorKind,
}

/// A program checked against a registry and machine configuration, with
/// codelet names and branch labels resolved.
#[derive(Clone, Debug)]
pub struct ValidatedProgram {
    program: Program,
    targets: Vec<Option<usize>>,
    defs: Vec<Option<Arc<CodeletDefinition>>>,
}

impl ValidatedProgram {
    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn len(&self) -> usize {
        self.program.len()
    }

    pub fn is_empty(&self) -> bool {
        self.program.is_empty()
    }

    pub fn op(&self, index: usize) -> &Op {
        &self.program.instructions()[index].op
    }

    /// Resolved branch target of instruction `index`.
    pub fn target(&self, index: usize) -> Option<usize> {
        self.targets[index]
    }

    pub fn definition(&self, index: usize) -> Option<&Arc<CodeletDefinition>> {
        self.defs[index].as_ref()
    }
}

pub fn validate(program: &Program, registry: &Registry, cfg: &MachineConfig) -> Result<ValidatedProgram, ValidateError> {
    let mut targets = Vec::with_capacity(program.len());
    let mut defs = Vec::with_capacity(program.len());
    for (index, ins) in program.instructions().iter().enumerate() {
        let fail = |kind| ValidateError { index, kind };
        let bound = |reg: Reg| {
            if reg.index as usize >= cfg.regs_per_class {
                Err(fail(ValidateErrorKind::RegisterOutOfRange { reg, limit: cfg.regs_per_class }))
            } else {
                Ok(())
            }
        };
        match &ins.op {
            Op::Codelet { kind, name, operands } => {
                let def = registry.get(name).ok_or_else(|| fail(ValidateErrorKind::UnknownCodelet(name.clone())))?;
                if def.kind != *kind {
                    return Err(fail(ValidateErrorKind::KindMismatch {
                        name: name.clone(),
                        used_as: *kind,
                        registered_as: def.kind,
                    }));
                }
                if def.slots.len() != operands.len() {
                    return Err(fail(ValidateErrorKind::Arity {
                        name: name.clone(),
                        expected: def.slots.len(),
                        found: operands.len(),
                    }));
                }
                for (operand, (reg, slot)) in operands.iter().zip(&def.slots).enumerate() {
                    if reg.class != slot.class {
                        return Err(fail(ValidateErrorKind::ClassMismatch { operand, expected: slot.class, found: *reg }));
                    }
                    bound(*reg)?;
                }
                targets.push(None);
                defs.push(Some(Arc::clone(def)));
            }
            Op::Control(c) => {
                for (operand, reg) in c.registers().into_iter().enumerate() {
                    if reg.class != RegClass::Bytes64 {
                        return Err(fail(ValidateErrorKind::ClassMismatch {
                            operand,
                            expected: RegClass::Bytes64,
                            found: reg,
                        }));
                    }
                    bound(reg)?;
                }
                // Program construction guarantees labels resolve.
                targets.push(c.target().map(|t| program.label_index(t).expect("label resolved at parse")));
                defs.push(None);
            }
        }
    }
    Ok(ValidatedProgram { program: program.clone(), targets, defs })
}
