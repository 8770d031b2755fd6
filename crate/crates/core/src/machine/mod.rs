//! Architectural state: register file, main memory, FIFO channels and the
//! machine configuration.

mod config;
mod fifo;
mod image;

pub use config::{ConfigError, MachineConfig};
pub use fifo::{FifoChannel, FifoError, Pop, Push};
pub use image::{ImageError, MemoryImage, Symbol};

use crate::isa::{Reg, RegClass};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RegisterError {
    #[error("register {reg} out of range (limit {limit})")]
    OutOfRange { reg: Reg, limit: usize },
    #[error("write to {reg}: expected {expected} bytes, got {got}")]
    LengthMismatch { reg: Reg, expected: usize, got: usize },
}

/// Fixed pool of byte-buffer registers, one array per class. Buffer
/// lengths never change after construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterFile {
    banks: [Vec<Vec<u8>>; 2],
}

impl RegisterFile {
    pub fn new(cfg: &MachineConfig) -> Self {
        Self::with_count(cfg, cfg.regs_per_class)
    }

    pub fn with_count(cfg: &MachineConfig, count: usize) -> Self {
        let bank = |class| vec![vec![0u8; cfg.class_bytes(class)]; count];
        RegisterFile { banks: [bank(RegClass::Bytes64), bank(RegClass::Lines2048)] }
    }

    pub fn count(&self, class: RegClass) -> usize {
        self.banks[class.ordinal()].len()
    }

    pub fn view(&self, reg: Reg) -> Result<&[u8], RegisterError> {
        let bank = &self.banks[reg.class.ordinal()];
        bank.get(reg.index as usize)
            .map(Vec::as_slice)
            .ok_or(RegisterError::OutOfRange { reg, limit: bank.len() })
    }

    pub fn read(&self, reg: Reg) -> Result<Vec<u8>, RegisterError> {
        self.view(reg).map(<[u8]>::to_vec)
    }

    pub fn write(&mut self, reg: Reg, data: &[u8]) -> Result<(), RegisterError> {
        let bank = &mut self.banks[reg.class.ordinal()];
        let limit = bank.len();
        let buf = bank.get_mut(reg.index as usize).ok_or(RegisterError::OutOfRange { reg, limit })?;
        if buf.len() != data.len() {
            return Err(RegisterError::LengthMismatch { reg, expected: buf.len(), got: data.len() });
        }
        buf.copy_from_slice(data);
        Ok(())
    }

    /// Low 8 bytes of a register as a little-endian integer.
    pub fn read_u64(&self, reg: Reg) -> Result<u64, RegisterError> {
        self.view(reg).map(low_u64)
    }

    /// Stores `value` in the low 8 bytes and zeroes the rest.
    pub fn write_u64(&mut self, reg: Reg, value: u64) -> Result<(), RegisterError> {
        let mut data = vec![0u8; self.view(reg)?.len()];
        data[..8].copy_from_slice(&value.to_le_bytes());
        self.write(reg, &data)
    }
}

pub fn low_u64(bytes: &[u8]) -> u64 {
    let mut word = [0u8; 8];
    let n = bytes.len().min(8);
    word[..n].copy_from_slice(&bytes[..n]);
    u64::from_le_bytes(word)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MemoryError {
    #[error("memory access [{addr}, {addr}+{len}) outside {size}-byte main memory")]
    OutOfBounds { addr: u64, len: u64, size: usize },
    #[error("sandbox violation: compute codelets have no main-memory access")]
    SandboxViolation,
}

/// Flat byte-addressable main memory, zero-initialized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MainMemory {
    bytes: Vec<u8>,
}

impl MainMemory {
    pub fn new(size: usize) -> Self {
        MainMemory { bytes: vec![0; size] }
    }

    pub fn size(&self) -> usize {
        self.bytes.len()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn range(&self, addr: u64, len: u64) -> Result<std::ops::Range<usize>, MemoryError> {
        let oob = MemoryError::OutOfBounds { addr, len, size: self.bytes.len() };
        let end = addr.checked_add(len).ok_or(oob.clone())?;
        if end > self.bytes.len() as u64 {
            return Err(oob);
        }
        Ok(addr as usize..end as usize)
    }

    pub fn load(&self, addr: u64, len: u64) -> Result<&[u8], MemoryError> {
        let r = self.range(addr, len)?;
        Ok(&self.bytes[r])
    }

    pub fn store(&mut self, addr: u64, data: &[u8]) -> Result<(), MemoryError> {
        let r = self.range(addr, data.len() as u64)?;
        self.bytes[r].copy_from_slice(data);
        Ok(())
    }
}

/// Everything a program run reads and mutates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineState {
    pub config: MachineConfig,
    pub registers: RegisterFile,
    pub memory: MainMemory,
}

impl MachineState {
    pub fn new(config: MachineConfig) -> Self {
        let registers = RegisterFile::new(&config);
        let memory = MainMemory::new(config.main_memory_bytes);
        MachineState { config, registers, memory }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fresh_register_is_zero() {
        let rf = RegisterFile::new(&MachineConfig::default());
        assert_eq!(rf.read(Reg::b(0)).unwrap(), vec![0u8; 64]);
    }

    #[test]
    fn write_then_read() {
        let mut rf = RegisterFile::new(&MachineConfig::default());
        let mut data = vec![0u8; 64];
        data[..8].copy_from_slice(&0x10u64.to_le_bytes());
        rf.write(Reg::b(6), &data).unwrap();
        assert_eq!(rf.read(Reg::b(6)).unwrap(), data);
        rf.write_u64(Reg::b(6), 4096).unwrap();
        assert_eq!(&rf.read(Reg::b(6)).unwrap()[..8], &4096u64.to_le_bytes());
        assert_eq!(rf.read_u64(Reg::b(6)).unwrap(), 4096);
    }

    #[test]
    fn write_lengths() {
        let mut rf = RegisterFile::new(&MachineConfig::default());
        assert!(rf.write(Reg::b(3), &[0; 64]).is_ok());
        assert_eq!(
            rf.write(Reg::b(3), &[0; 63]),
            Err(RegisterError::LengthMismatch { reg: Reg::b(3), expected: 64, got: 63 })
        );
        assert!(rf.write(Reg::l(1), &vec![7; 2048 * 64]).is_ok());
        assert_eq!(rf.read(Reg::b(99)), Err(RegisterError::OutOfRange { reg: Reg::b(99), limit: 32 }));
    }

    #[test]
    fn memory_bounds() {
        let mut mm = MainMemory::new(1 << 26);
        mm.store(100, &[1, 2, 3]).unwrap();
        assert_eq!(mm.load(100, 3).unwrap(), &[1, 2, 3]);
        assert!(matches!(mm.load((1 << 26) - 1, 2), Err(MemoryError::OutOfBounds { .. })));
        assert!(mm.load(u64::MAX, 2).is_err());
        assert!(mm.load(1 << 26, 0).is_ok());
    }

    proptest! {
        #[test]
        fn register_sizes_never_change(ops in prop::collection::vec((any::<bool>(), 0u32..40, 0usize..300), 0..50)) {
            let cfg = MachineConfig { lines_per_l_register: 4, ..MachineConfig::default() };
            let mut rf = RegisterFile::new(&cfg);
            for (is_l, idx, len) in ops {
                let reg = if is_l { Reg::l(idx) } else { Reg::b(idx) };
                let _ = rf.write(reg, &vec![0xAB; len]);
            }
            for class in RegClass::ALL {
                for i in 0..rf.count(class) {
                    let reg = Reg { class, index: i as u32 };
                    prop_assert_eq!(rf.view(reg).unwrap().len(), cfg.class_bytes(class));
                }
            }
        }
    }
}
