//! Codelet instruction set: register names, instructions, programs and the
//! textual assembly format.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

mod parse;
mod validate;

pub use parse::{parse_located, parse_program, ParseError, ParseErrorKind};
pub use validate::{validate, ValidateError, ValidateErrorKind, ValidatedProgram};

/// Register classes. Both are oversized byte buffers used as dependencies
/// between codelets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegClass {
    /// 64-byte registers (`R64B_i`).
    #[serde(rename = "B")]
    Bytes64,
    /// Line-block registers (`R2048L_i`).
    #[serde(rename = "L")]
    Lines2048,
}

impl RegClass {
    pub const ALL: [RegClass; 2] = [RegClass::Bytes64, RegClass::Lines2048];

    pub fn prefix(self) -> &'static str {
        match self {
            RegClass::Bytes64 => "R64B_",
            RegClass::Lines2048 => "R2048L_",
        }
    }

    pub fn ordinal(self) -> usize {
        match self {
            RegClass::Bytes64 => 0,
            RegClass::Lines2048 => 1,
        }
    }
}

/// Architectural register name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg {
    pub class: RegClass,
    pub index: u32,
}

impl Reg {
    pub const fn b(index: u32) -> Reg {
        Reg { class: RegClass::Bytes64, index }
    }

    pub const fn l(index: u32) -> Reg {
        Reg { class: RegClass::Lines2048, index }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.class.prefix(), self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("malformed register name `{0}`")]
pub struct BadRegister(pub String);

impl FromStr for Reg {
    type Err = BadRegister;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        for class in RegClass::ALL {
            if let Some(digits) = s.strip_prefix(class.prefix()) {
                // Canonical decimal only, so `R64B_01` cannot alias `R64B_1`.
                let canonical = !digits.is_empty()
                    && digits.bytes().all(|b| b.is_ascii_digit())
                    && (digits == "0" || !digits.starts_with('0'));
                if canonical {
                    if let Ok(index) = digits.parse::<u32>() {
                        return Ok(Reg { class, index });
                    }
                }
                break;
            }
        }
        Err(BadRegister(s.to_string()))
    }
}

/// Whether a codelet instruction targets a compute unit or the memory
/// codelet unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CodeletKind {
    Compute,
    Memory,
}

impl CodeletKind {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CodeletKind::Compute => "COD",
            CodeletKind::Memory => "MEMCOD",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mult,
}

impl ArithOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            ArithOp::Add => "ADD",
            ArithOp::Sub => "SUB",
            ArithOp::Mult => "MULT",
        }
    }

    /// Two's-complement 64-bit arithmetic.
    pub fn apply(self, lhs: u64, rhs: u64) -> u64 {
        match self {
            ArithOp::Add => lhs.wrapping_add(rhs),
            ArithOp::Sub => lhs.wrapping_sub(rhs),
            ArithOp::Mult => lhs.wrapping_mul(rhs),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchCond {
    Eq,
    Ne,
    Lt,
}

impl BranchCond {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BranchCond::Eq => "BREQ",
            BranchCond::Ne => "BRNE",
            BranchCond::Lt => "BRLT",
        }
    }

    /// `Lt` compares as signed 64-bit values.
    pub fn holds(self, lhs: u64, rhs: u64) -> bool {
        match self {
            BranchCond::Eq => lhs == rhs,
            BranchCond::Ne => lhs != rhs,
            BranchCond::Lt => (lhs as i64) < (rhs as i64),
        }
    }
}

/// Scheduling-unit instructions. All register operands are 64-byte
/// registers and only their low 8 bytes participate.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ControlOp {
    LoadImm { dst: Reg, imm: u64 },
    Arith { op: ArithOp, dst: Reg, lhs: Reg, rhs: Reg },
    Branch { cond: BranchCond, lhs: Reg, rhs: Reg, target: String },
    Jump { target: String },
    Commit,
}

impl ControlOp {
    pub fn sources(&self) -> Vec<Reg> {
        match self {
            ControlOp::Arith { lhs, rhs, .. } | ControlOp::Branch { lhs, rhs, .. } => {
                vec![*lhs, *rhs]
            }
            _ => Vec::new(),
        }
    }

    pub fn destination(&self) -> Option<Reg> {
        match self {
            ControlOp::LoadImm { dst, .. } | ControlOp::Arith { dst, .. } => Some(*dst),
            _ => None,
        }
    }

    pub fn target(&self) -> Option<&str> {
        match self {
            ControlOp::Branch { target, .. } | ControlOp::Jump { target } => Some(target),
            _ => None,
        }
    }

    pub fn registers(&self) -> Vec<Reg> {
        let mut regs = self.sources();
        regs.extend(self.destination());
        regs
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Codelet { kind: CodeletKind, name: String, operands: Vec<Reg> },
    Control(ControlOp),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub label: Option<String>,
    pub op: Op,
}

impl Instruction {
    pub fn new(op: Op) -> Self {
        Instruction { label: None, op }
    }

    pub fn labeled(label: impl Into<String>, op: Op) -> Self {
        Instruction { label: Some(label.into()), op }
    }

    pub fn cod(name: &str, operands: &[Reg]) -> Self {
        Self::new(Op::Codelet {
            kind: CodeletKind::Compute,
            name: name.to_string(),
            operands: operands.to_vec(),
        })
    }

    pub fn memcod(name: &str, operands: &[Reg]) -> Self {
        Self::new(Op::Codelet {
            kind: CodeletKind::Memory,
            name: name.to_string(),
            operands: operands.to_vec(),
        })
    }

    pub fn control(op: ControlOp) -> Self {
        Self::new(Op::Control(op))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(label) = &self.label {
            write!(f, "{label}: ")?;
        }
        match &self.op {
            Op::Codelet { kind, name, operands } => {
                write!(f, "{} {}", kind.mnemonic(), name)?;
                for (i, r) in operands.iter().enumerate() {
                    let sep = if i == 0 { " " } else { ", " };
                    write!(f, "{sep}{r}")?;
                }
            }
            Op::Control(ControlOp::LoadImm { dst, imm }) => write!(f, "LDIMM {dst}, {imm}")?,
            Op::Control(ControlOp::Arith { op, dst, lhs, rhs }) => {
                write!(f, "{} {dst}, {lhs}, {rhs}", op.mnemonic())?
            }
            Op::Control(ControlOp::Branch { cond, lhs, rhs, target }) => {
                write!(f, "{} {lhs}, {rhs}, {target}", cond.mnemonic())?
            }
            Op::Control(ControlOp::Jump { target }) => write!(f, "JMPLBL {target}")?,
            Op::Control(ControlOp::Commit) => write!(f, "COMMIT")?,
        }
        write!(f, ";")
    }
}

/// An ordered instruction stream plus its label table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    instructions: Vec<Instruction>,
    labels: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ProgramError {
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
}

impl Program {
    /// Builds a program from instructions, deriving the label table and
    /// checking that every branch target resolves.
    pub fn new(instructions: Vec<Instruction>) -> Result<Self, ProgramError> {
        let mut labels = BTreeMap::new();
        for (i, ins) in instructions.iter().enumerate() {
            if let Some(label) = &ins.label {
                if labels.insert(label.clone(), i).is_some() {
                    return Err(ProgramError::DuplicateLabel(label.clone()));
                }
            }
        }
        for ins in &instructions {
            if let Op::Control(c) = &ins.op {
                if let Some(t) = c.target() {
                    if !labels.contains_key(t) {
                        return Err(ProgramError::UnresolvedLabel(t.to_string()));
                    }
                }
            }
        }
        Ok(Program { instructions, labels })
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.get(label).copied()
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}

/// Renders a program as assembly text, one instruction per line.
pub fn disassemble(program: &Program) -> String {
    let mut out = String::new();
    for ins in program.instructions() {
        out.push_str(&ins.to_string());
        out.push('\n');
    }
    out
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&disassemble(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_names() {
        assert_eq!("R64B_6".parse::<Reg>().unwrap(), Reg::b(6));
        assert_eq!("R2048L_22".parse::<Reg>().unwrap(), Reg::l(22));
        assert_eq!(Reg::l(3).to_string(), "R2048L_3");
        for bad in ["R64B2", "R64B_", "R64B_01", "R2048L_x", "r64b_1", "R64B_99999999999"] {
            assert!(bad.parse::<Reg>().is_err(), "{bad}");
        }
    }

    #[test]
    fn signed_less_than() {
        assert!(BranchCond::Lt.holds(u64::MAX, 0));
        assert!(!BranchCond::Lt.holds(0, u64::MAX));
        assert_eq!(ArithOp::Sub.apply(0, 1), u64::MAX);
    }

    #[test]
    fn program_rejects_bad_labels() {
        let jump = Instruction::control(ControlOp::Jump { target: "x".into() });
        assert_eq!(
            Program::new(vec![jump.clone()]),
            Err(ProgramError::UnresolvedLabel("x".into()))
        );
        let a = Instruction::control(ControlOp::Commit).with_label("x");
        assert_eq!(
            Program::new(vec![a.clone(), a]),
            Err(ProgramError::DuplicateLabel("x".into()))
        );
    }
}
