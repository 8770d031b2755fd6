use serde::{Deserialize, Serialize};

use crate::isa::RegClass;

/// Shape of the simulated machine. Every field has a default so a config
/// file may list only what it overrides.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineConfig {
    pub cu_count: usize,
    pub mcu_count: usize,
    pub regs_per_class: usize,
    pub line_bytes: usize,
    pub lines_per_l_register: usize,
    pub main_memory_bytes: usize,
    pub fifo_chunk_bytes: usize,
    pub fifo_depth_chunks: usize,
    pub renaming_enabled: bool,
    pub physical_regs_per_class: usize,
    /// Dynamic instructions allowed in flight between fetch and completion.
    pub max_in_flight: usize,
    /// Guard against non-terminating programs.
    pub max_dynamic_instructions: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            cu_count: 4,
            mcu_count: 1,
            regs_per_class: 32,
            line_bytes: 64,
            lines_per_l_register: 2048,
            main_memory_bytes: 1 << 26,
            fifo_chunk_bytes: 64,
            fifo_depth_chunks: 16,
            renaming_enabled: false,
            physical_regs_per_class: 64,
            max_in_flight: 64,
            max_dynamic_instructions: 10_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("`{0}` must be positive")]
    NotPositive(&'static str),
    #[error("fifo_chunk_bytes ({chunk}) must divide the L-register size ({size})")]
    ChunkDoesNotDivide { chunk: usize, size: usize },
    #[error("physical_regs_per_class ({physical}) is smaller than regs_per_class ({architectural})")]
    TooFewPhysical { physical: usize, architectural: usize },
    #[error("invalid config json: {0}")]
    Json(String),
}

impl MachineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: MachineConfig = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let positive = [
            ("cu_count", self.cu_count),
            ("mcu_count", self.mcu_count),
            ("regs_per_class", self.regs_per_class),
            ("line_bytes", self.line_bytes),
            ("lines_per_l_register", self.lines_per_l_register),
            ("main_memory_bytes", self.main_memory_bytes),
            ("fifo_chunk_bytes", self.fifo_chunk_bytes),
            ("fifo_depth_chunks", self.fifo_depth_chunks),
            ("physical_regs_per_class", self.physical_regs_per_class),
            ("max_in_flight", self.max_in_flight),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        let size = self
            .lines_per_l_register
            .checked_mul(self.line_bytes)
            .ok_or(ConfigError::NotPositive("lines_per_l_register"))?;
        if size % self.fifo_chunk_bytes != 0 {
            return Err(ConfigError::ChunkDoesNotDivide { chunk: self.fifo_chunk_bytes, size });
        }
        if self.renaming_enabled && self.physical_regs_per_class < self.regs_per_class {
            return Err(ConfigError::TooFewPhysical {
                physical: self.physical_regs_per_class,
                architectural: self.regs_per_class,
            });
        }
        Ok(())
    }

    /// Size in bytes of one register of `class`.
    pub fn class_bytes(&self, class: RegClass) -> usize {
        match class {
            RegClass::Bytes64 => 64,
            RegClass::Lines2048 => self.lines_per_l_register * self.line_bytes,
        }
    }

    pub fn l_register_bytes(&self) -> usize {
        self.class_bytes(RegClass::Lines2048)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let cfg = MachineConfig::default();
        assert_eq!(cfg.l_register_bytes(), 131_072);
        assert!(cfg.check().is_ok());
        let cfg = MachineConfig::from_json(r#"{"cu_count": 2, "renaming_enabled": true}"#).unwrap();
        assert_eq!(cfg.cu_count, 2);
        assert_eq!(cfg.mcu_count, 1);
        assert!(cfg.renaming_enabled);
        assert_eq!(MachineConfig::from_json("{}").unwrap(), MachineConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        assert_eq!(MachineConfig::from_json(r#"{"cu_count": 0}"#), Err(ConfigError::NotPositive("cu_count")));
        assert!(matches!(
            MachineConfig::from_json(r#"{"fifo_chunk_bytes": 100}"#),
            Err(ConfigError::ChunkDoesNotDivide { .. })
        ));
        assert!(matches!(
            MachineConfig::from_json(r#"{"renaming_enabled": true, "physical_regs_per_class": 8}"#),
            Err(ConfigError::TooFewPhysical { .. })
        ));
        assert!(matches!(MachineConfig::from_json(r#"{"cus": 3}"#), Err(ConfigError::Json(_))));
    }
}
