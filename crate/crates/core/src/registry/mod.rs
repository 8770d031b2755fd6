//! Codelet definitions and the registry that resolves names used in
//! assembly to them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::isa::{CodeletKind, RegClass};
use crate::machine::{low_u64, MainMemory, MemoryError};
use crate::timing::CodeletCost;

mod builtins;

pub use builtins::{load_contiguous, store_contiguous, stream_contiguous};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Read,
    Write,
    ReadWrite,
}

impl Direction {
    pub fn reads(self) -> bool {
        matches!(self, Direction::Read | Direction::ReadWrite)
    }

    pub fn writes(self) -> bool {
        matches!(self, Direction::Write | Direction::ReadWrite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperandSlot {
    pub class: RegClass,
    pub direction: Direction,
    #[serde(default)]
    pub stream: bool,
}

impl OperandSlot {
    pub const fn new(class: RegClass, direction: Direction) -> Self {
        OperandSlot { class, direction, stream: false }
    }

    pub const fn streamed(class: RegClass, direction: Direction) -> Self {
        OperandSlot { class, direction, stream: true }
    }

    pub const fn read_b() -> Self {
        Self::new(RegClass::Bytes64, Direction::Read)
    }

    pub const fn read_l() -> Self {
        Self::new(RegClass::Lines2048, Direction::Read)
    }

    pub const fn write_l() -> Self {
        Self::new(RegClass::Lines2048, Direction::Write)
    }

    fn check(&self) -> Result<(), &'static str> {
        if self.stream && self.class != RegClass::Lines2048 {
            return Err("only L-class operands may be streamed");
        }
        if self.stream && self.direction == Direction::ReadWrite {
            return Err("a streamed operand cannot be READWRITE");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CodeletError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("slot {slot} is not {wanted}")]
    Direction { slot: usize, wanted: &'static str },
    #[error("slot {0} does not exist")]
    NoSuchSlot(usize),
    #[error("{0}")]
    Failed(String),
}

/// What a codelet body sees: private copies of its operand buffers and,
/// for memory codelets only, main memory.
pub struct ExecContext<'a> {
    slots: &'a [OperandSlot],
    operands: Vec<Vec<u8>>,
    memory: Option<&'a mut MainMemory>,
    memory_bytes: u64,
}

impl<'a> ExecContext<'a> {
    /// `operands` holds one buffer per slot. `memory` must be `None` for
    /// compute codelets.
    pub fn new(slots: &'a [OperandSlot], operands: Vec<Vec<u8>>, memory: Option<&'a mut MainMemory>) -> Self {
        assert_eq!(slots.len(), operands.len());
        ExecContext { slots, operands, memory, memory_bytes: 0 }
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    fn slot(&self, i: usize) -> Result<OperandSlot, CodeletError> {
        self.slots.get(i).copied().ok_or(CodeletError::NoSuchSlot(i))
    }

    pub fn input(&self, i: usize) -> Result<&[u8], CodeletError> {
        if !self.slot(i)?.direction.reads() {
            return Err(CodeletError::Direction { slot: i, wanted: "readable" });
        }
        Ok(&self.operands[i])
    }

    pub fn input_u64(&self, i: usize) -> Result<u64, CodeletError> {
        self.input(i).map(low_u64)
    }

    pub fn output(&mut self, i: usize) -> Result<&mut [u8], CodeletError> {
        if !self.slot(i)?.direction.writes() {
            return Err(CodeletError::Direction { slot: i, wanted: "writable" });
        }
        Ok(&mut self.operands[i])
    }

    /// Borrows one writable slot and several readable ones at once.
    pub fn split<const N: usize>(&mut self, out: usize, ins: [usize; N]) -> Result<(&mut [u8], [&[u8]; N]), CodeletError> {
        if !self.slot(out)?.direction.writes() {
            return Err(CodeletError::Direction { slot: out, wanted: "writable" });
        }
        for (k, &i) in ins.iter().enumerate() {
            if !self.slot(i)?.direction.reads() {
                return Err(CodeletError::Direction { slot: i, wanted: "readable" });
            }
            if i == out || ins[..k].contains(&i) {
                return Err(CodeletError::Failed(format!("slot {i} borrowed twice")));
            }
        }
        let mut out_buf = None;
        let mut in_bufs: [Option<&[u8]>; N] = [None; N];
        for (i, buf) in self.operands.iter_mut().enumerate() {
            if i == out {
                out_buf = Some(buf.as_mut_slice());
            } else if let Some(k) = ins.iter().position(|&x| x == i) {
                in_bufs[k] = Some(buf.as_slice());
            }
        }
        Ok((out_buf.expect("checked"), in_bufs.map(|b| b.expect("checked"))))
    }

    fn memory(&mut self) -> Result<&mut MainMemory, CodeletError> {
        self.memory.as_deref_mut().ok_or(CodeletError::Memory(MemoryError::SandboxViolation))
    }

    pub fn load(&mut self, addr: u64, len: u64) -> Result<Vec<u8>, CodeletError> {
        let data = self.memory()?.load(addr, len)?.to_vec();
        self.memory_bytes += len;
        Ok(data)
    }

    pub fn store(&mut self, addr: u64, data: &[u8]) -> Result<(), CodeletError> {
        self.memory()?.store(addr, data)?;
        self.memory_bytes += data.len() as u64;
        Ok(())
    }

    pub fn memory_bytes(&self) -> u64 {
        self.memory_bytes
    }

    pub fn into_operands(self) -> Vec<Vec<u8>> {
        self.operands
    }
}

pub type CodeletFn = Arc<dyn Fn(&mut ExecContext<'_>) -> Result<(), CodeletError> + Send + Sync>;

#[derive(Clone)]
pub struct CodeletDefinition {
    pub name: String,
    pub kind: CodeletKind,
    pub slots: Vec<OperandSlot>,
    pub body: CodeletFn,
    /// Cost used when the cost configuration has no entry for this name.
    pub cost: Option<CodeletCost>,
}

impl fmt::Debug for CodeletDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CodeletDefinition")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("slots", &self.slots)
            .field("cost", &self.cost)
            .finish_non_exhaustive()
    }
}

impl CodeletDefinition {
    pub fn new<F>(name: impl Into<String>, kind: CodeletKind, slots: Vec<OperandSlot>, body: F) -> Self
    where
        F: Fn(&mut ExecContext<'_>) -> Result<(), CodeletError> + Send + Sync + 'static,
    {
        CodeletDefinition { name: name.into(), kind, slots, body: Arc::new(body), cost: None }
    }

    pub fn compute<F>(name: impl Into<String>, slots: Vec<OperandSlot>, body: F) -> Self
    where
        F: Fn(&mut ExecContext<'_>) -> Result<(), CodeletError> + Send + Sync + 'static,
    {
        Self::new(name, CodeletKind::Compute, slots, body)
    }

    pub fn memory<F>(name: impl Into<String>, slots: Vec<OperandSlot>, body: F) -> Self
    where
        F: Fn(&mut ExecContext<'_>) -> Result<(), CodeletError> + Send + Sync + 'static,
    {
        Self::new(name, CodeletKind::Memory, slots, body)
    }

    pub fn with_cost(mut self, cost: CodeletCost) -> Self {
        self.cost = Some(cost);
        self
    }

    /// Same definition under another name.
    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same definition with every stream flag cleared.
    pub fn without_streams(mut self) -> Self {
        for s in &mut self.slots {
            s.stream = false;
        }
        self
    }

    pub fn signature(&self) -> Signature {
        Signature { kind: self.kind, slots: self.slots.clone() }
    }

    /// Runs the body. Compute codelets never receive `memory`, whatever
    /// the caller passes.
    pub fn execute(&self, operands: Vec<Vec<u8>>, memory: Option<&mut MainMemory>) -> Result<Executed, CodeletError> {
        let memory = match self.kind {
            CodeletKind::Memory => memory,
            CodeletKind::Compute => None,
        };
        let mut ctx = ExecContext::new(&self.slots, operands, memory);
        (self.body)(&mut ctx)?;
        let memory_bytes = ctx.memory_bytes();
        Ok(Executed { operands: ctx.into_operands(), memory_bytes })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Executed {
    pub operands: Vec<Vec<u8>>,
    pub memory_bytes: u64,
}

/// Kind and operand slots of a codelet, without its implementation. This
/// is the unit of a signature manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signature {
    pub kind: CodeletKind,
    pub slots: Vec<OperandSlot>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("codelet `{0}` is already registered")]
    Duplicate(String),
    #[error("codelet `{name}` slot {slot}: {reason}")]
    InvalidSlot { name: String, slot: usize, reason: &'static str },
    #[error("codelet `{0}` declares no operands")]
    NoOperands(String),
    #[error("codelet `{0}` not found")]
    NotFound(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
}

/// Name → definition map. Write-once during setup, read-only afterwards.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    defs: BTreeMap<String, Arc<CodeletDefinition>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding `LoadContiguous`, `StoreContiguous` and
    /// `StreamContiguous`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        for def in [load_contiguous("LoadContiguous"), store_contiguous("StoreContiguous"), stream_contiguous("StreamContiguous")] {
            reg.register(def).expect("builtin names are distinct");
        }
        reg
    }

    pub fn register(&mut self, def: CodeletDefinition) -> Result<(), RegistryError> {
        if self.defs.contains_key(&def.name) {
            return Err(RegistryError::Duplicate(def.name));
        }
        if def.slots.is_empty() {
            return Err(RegistryError::NoOperands(def.name));
        }
        for (slot, s) in def.slots.iter().enumerate() {
            s.check().map_err(|reason| RegistryError::InvalidSlot { name: def.name.clone(), slot, reason })?;
        }
        self.defs.insert(def.name.clone(), Arc::new(def));
        Ok(())
    }

    /// Registers every definition, replacing none.
    pub fn extend(&mut self, defs: impl IntoIterator<Item = CodeletDefinition>) -> Result<(), RegistryError> {
        defs.into_iter().try_for_each(|d| self.register(d))
    }

    pub fn lookup(&self, name: &str) -> Result<&Arc<CodeletDefinition>, RegistryError> {
        self.defs.get(name).ok_or_else(|| RegistryError::NotFound(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&Arc<CodeletDefinition>> {
        self.defs.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<CodeletDefinition>> {
        self.defs.values()
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn manifest(&self) -> BTreeMap<String, Signature> {
        self.defs.iter().map(|(n, d)| (n.clone(), d.signature())).collect()
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes")
    }

    pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, Signature>, RegistryError> {
        serde_json::from_str(text).map_err(|e| RegistryError::Manifest(e.to_string()))
    }

    /// Builds a registry of signature-only definitions, suitable for static
    /// checking. Executing one of them fails.
    pub fn from_manifest(text: &str) -> Result<Self, RegistryError> {
        let mut reg = Self::new();
        for (name, sig) in Self::parse_manifest(text)? {
            let msg = format!("codelet `{name}` has a signature but no implementation");
            reg.register(CodeletDefinition::new(name, sig.kind, sig.slots, move |_| Err(CodeletError::Failed(msg.clone()))))?;
        }
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp_outer() -> CodeletDefinition {
        let s = OperandSlot::streamed;
        CodeletDefinition::compute(
            "spOuterMatMult_2048L",
            vec![
                s(RegClass::Lines2048, Direction::Write),
                s(RegClass::Lines2048, Direction::Read),
                s(RegClass::Lines2048, Direction::Read),
            ],
            |_| Ok(()),
        )
    }

    #[test]
    fn register_and_lookup() {
        let mut reg = Registry::new();
        reg.register(sp_outer()).unwrap();
        assert_eq!(reg.register(sp_outer()), Err(RegistryError::Duplicate("spOuterMatMult_2048L".into())));
        reg.register(CodeletDefinition::compute("Comp0_2048L", vec![OperandSlot::write_l(), OperandSlot::read_l()], |_| Ok(())))
            .unwrap();
        let a = reg.lookup("Comp0_2048L").unwrap();
        let b = reg.lookup("Comp0_2048L").unwrap();
        assert!(Arc::ptr_eq(a, b));
        assert_eq!(a.slots.len(), 2);
        assert_eq!(reg.lookup("nope").unwrap_err(), RegistryError::NotFound("nope".into()));
    }

    #[test]
    fn streamed_write_on_memory_codelet() {
        let mut reg = Registry::new();
        let def = stream_contiguous("StreamCSRBlock_2048L");
        assert!(def.slots[0].stream);
        reg.register(def).unwrap();
    }

    #[test]
    fn invalid_slots() {
        let mut reg = Registry::new();
        let bad = CodeletDefinition::compute("x", vec![OperandSlot::streamed(RegClass::Bytes64, Direction::Read)], |_| Ok(()));
        assert!(matches!(reg.register(bad), Err(RegistryError::InvalidSlot { slot: 0, .. })));
        let bad = CodeletDefinition::compute("y", vec![OperandSlot::streamed(RegClass::Lines2048, Direction::ReadWrite)], |_| Ok(()));
        assert!(matches!(reg.register(bad), Err(RegistryError::InvalidSlot { .. })));
        assert!(matches!(reg.register(CodeletDefinition::compute("z", vec![], |_| Ok(()))), Err(RegistryError::NoOperands(_))));
    }

    #[test]
    fn compute_context_has_no_memory() {
        let def = CodeletDefinition::compute("Snoop", vec![OperandSlot::write_l()], |ctx| {
            ctx.load(0, 8)?;
            Ok(())
        });
        let mut mm = MainMemory::new(64);
        let err = def.execute(vec![vec![0; 64]], Some(&mut mm)).unwrap_err();
        assert_eq!(err, CodeletError::Memory(MemoryError::SandboxViolation));
    }

    #[test]
    fn read_slots_are_not_writable() {
        let def = CodeletDefinition::compute("Cheat", vec![OperandSlot::write_l(), OperandSlot::read_l()], |ctx| {
            ctx.output(1)?[0] = 1;
            Ok(())
        });
        let err = def.execute(vec![vec![0; 4], vec![0; 4]], None).unwrap_err();
        assert_eq!(err, CodeletError::Direction { slot: 1, wanted: "writable" });
    }

    #[test]
    fn split_borrows() {
        let slots = [OperandSlot::write_l(), OperandSlot::read_l(), OperandSlot::read_l()];
        let mut ctx = ExecContext::new(&slots, vec![vec![0; 2], vec![1; 2], vec![2; 2]], None);
        let (out, [a, b]) = ctx.split(0, [1, 2]).unwrap();
        out[0] = a[0] + b[0];
        assert_eq!(ctx.into_operands()[0], vec![3, 0]);
        let mut ctx = ExecContext::new(&slots, vec![vec![0; 2], vec![1; 2], vec![2; 2]], None);
        assert!(ctx.split(0, [1, 1]).is_err());
        assert!(ctx.split(1, [0]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let mut reg = Registry::with_builtins();
        reg.register(sp_outer()).unwrap();
        let json = reg.manifest_json();
        let sigs = Registry::from_manifest(&json).unwrap();
        assert_eq!(sigs.manifest(), reg.manifest());
        let def = sigs.lookup("LoadContiguous").unwrap();
        assert!(def.execute(vec![vec![0; 8], vec![0; 8], vec![0; 8]], None).is_err());
        assert!(Registry::from_manifest(r#"{"x": {"kind": "COMPUTE", "slots": [{"class": "B", "direction": "READ", "stream": true}]}}"#).is_err());
        assert!(Registry::from_manifest("{").is_err());
    }
}
