use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::isa::CodeletKind;
use crate::registry::CodeletDefinition;

/// Per-codelet cost: `fixed_cycles + ceil(cycles_per_byte × operand bytes)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeletCost {
    pub fixed_cycles: u64,
    pub cycles_per_byte: f64,
}

impl CodeletCost {
    pub const fn new(fixed_cycles: u64, cycles_per_byte: f64) -> Self {
        CodeletCost { fixed_cycles, cycles_per_byte }
    }

    /// Per-byte rate is applied at 1/1000-cycle resolution so that decimal
    /// rates such as 0.1 are exact.
    pub fn cycles(&self, bytes: u64) -> u64 {
        let milli = (self.cycles_per_byte.max(0.0) * 1000.0).round() as u128;
        let variable = (milli * bytes as u128).div_ceil(1000);
        self.fixed_cycles.saturating_add(variable.min(u64::MAX as u128) as u64)
    }
}

/// Cycle costs for every pipeline event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Overrides keyed by codelet name.
    pub codelets: BTreeMap<String, CodeletCost>,
    /// Used for codelets with neither an override nor a built-in cost.
    pub default_codelet: CodeletCost,
    pub mem_latency_cycles: u64,
    pub mem_bytes_per_cycle: u64,
    pub control_op_cycles: u64,
    pub dispatch_cycles: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            codelets: BTreeMap::new(),
            default_codelet: CodeletCost::new(0, 1.0),
            mem_latency_cycles: 200,
            mem_bytes_per_cycle: 16,
            control_op_cycles: 1,
            dispatch_cycles: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CostError {
    #[error("invalid cost json: {0}")]
    Json(String),
    #[error("mem_bytes_per_cycle must be positive")]
    ZeroBandwidth,
    #[error("codelet `{0}` has a negative or non-finite cycles_per_byte")]
    BadRate(String),
}

/// Where a codelet's cost came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostSource {
    Configured,
    Definition,
    Default,
}

impl CostModel {
    pub fn from_json(text: &str) -> Result<Self, CostError> {
        let model: CostModel = serde_json::from_str(text).map_err(|e| CostError::Json(e.to_string()))?;
        model.check()?;
        Ok(model)
    }

    pub fn check(&self) -> Result<(), CostError> {
        if self.mem_bytes_per_cycle == 0 {
            return Err(CostError::ZeroBandwidth);
        }
        let rates = self.codelets.iter().map(|(n, c)| (n.as_str(), c)).chain([("default_codelet", &self.default_codelet)]);
        for (name, c) in rates {
            if !c.cycles_per_byte.is_finite() || c.cycles_per_byte < 0.0 {
                return Err(CostError::BadRate(name.to_string()));
            }
        }
        Ok(())
    }

    pub fn with_codelet(mut self, name: &str, cost: CodeletCost) -> Self {
        self.codelets.insert(name.to_string(), cost);
        self
    }

    pub fn resolve(&self, def: &CodeletDefinition) -> (CodeletCost, CostSource) {
        if let Some(c) = self.codelets.get(&def.name) {
            (*c, CostSource::Configured)
        } else if let Some(c) = def.cost {
            (c, CostSource::Definition)
        } else {
            (self.default_codelet, CostSource::Default)
        }
    }

    /// Cycles for one codelet execution. `operand_bytes` counts the occupied
    /// bytes of every operand; `memory_bytes` is what the body moved to or
    /// from main memory.
    pub fn codelet_cycles(&self, def: &CodeletDefinition, operand_bytes: u64, memory_bytes: u64) -> u64 {
        let (cost, _) = self.resolve(def);
        let mut cycles = cost.cycles(operand_bytes);
        if def.kind == CodeletKind::Memory && memory_bytes > 0 {
            cycles = cycles
                .saturating_add(self.mem_latency_cycles)
                .saturating_add(memory_bytes.div_ceil(self.mem_bytes_per_cycle.max(1)));
        }
        cycles.max(1)
    }

    pub fn control_cycles(&self) -> u64 {
        self.control_op_cycles.max(1)
    }
}

/// Bytes up to and including the last nonzero byte.
pub fn occupied_bytes(buf: &[u8]) -> usize {
    buf.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{load_contiguous, CodeletDefinition, OperandSlot};

    #[test]
    fn exact_decimal_rates() {
        assert_eq!(CodeletCost::new(1000, 0.1).cycles(30), 1003);
        assert_eq!(CodeletCost::new(1000, 0.1).cycles(31), 1004);
        assert_eq!(CodeletCost::new(1000, 0.5).cycles(4632), 3316);
        assert_eq!(CodeletCost::new(7, 0.0).cycles(1 << 40), 7);
    }

    #[test]
    fn memory_term() {
        let model = CostModel::default();
        let load = load_contiguous("L").with_cost(CodeletCost::new(0, 0.0));
        assert_eq!(model.codelet_cycles(&load, 100, 64), 200 + 4);
        assert_eq!(model.codelet_cycles(&load, 100, 65), 200 + 5);
        assert_eq!(model.codelet_cycles(&load, 0, 0), 1);
    }

    #[test]
    fn resolution_order() {
        let def = CodeletDefinition::compute("c", vec![OperandSlot::read_l()], |_| Ok(()));
        let model = CostModel::default();
        assert_eq!(model.resolve(&def).1, CostSource::Default);
        let def = def.with_cost(CodeletCost::new(5, 0.0));
        assert_eq!(model.resolve(&def), (CodeletCost::new(5, 0.0), CostSource::Definition));
        let model = model.with_codelet("c", CodeletCost::new(9, 0.0));
        assert_eq!(model.resolve(&def), (CodeletCost::new(9, 0.0), CostSource::Configured));
    }

    #[test]
    fn json() {
        let m = CostModel::from_json(r#"{"dispatch_cycles": 3, "codelets": {"X": {"fixed_cycles": 10, "cycles_per_byte": 0.25}}}"#)
            .unwrap();
        assert_eq!(m.dispatch_cycles, 3);
        assert_eq!(m.mem_latency_cycles, 200);
        assert_eq!(m.codelets["X"], CodeletCost::new(10, 0.25));
        assert_eq!(CostModel::from_json(r#"{"mem_bytes_per_cycle": 0}"#), Err(CostError::ZeroBandwidth));
        assert!(matches!(
            CostModel::from_json(r#"{"codelets": {"X": {"fixed_cycles": 1, "cycles_per_byte": -1}}}"#),
            Err(CostError::BadRate(_))
        ));
        assert!(matches!(CostModel::from_json(r#"{"latency": 1}"#), Err(CostError::Json(_))));
    }

    #[test]
    fn occupancy() {
        assert_eq!(occupied_bytes(&[0, 0, 0]), 0);
        assert_eq!(occupied_bytes(&[1, 0, 2, 0]), 3);
    }
}
