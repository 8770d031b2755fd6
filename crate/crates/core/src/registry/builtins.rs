//! Contiguous load/store/stream memory codelets. Address and length come
//! from the low 8 bytes (little-endian) of their 64-byte operands.

use super::{CodeletDefinition, CodeletError, Direction, ExecContext, OperandSlot};
use crate::isa::RegClass;

fn range(ctx: &ExecContext<'_>, capacity: usize) -> Result<(u64, u64), CodeletError> {
    let addr = ctx.input_u64(1)?;
    let len = ctx.input_u64(2)?;
    if len > capacity as u64 {
        return Err(CodeletError::Failed(format!("length {len} exceeds the {capacity}-byte register")));
    }
    Ok((addr, len))
}

fn load_body(ctx: &mut ExecContext<'_>) -> Result<(), CodeletError> {
    let capacity = ctx.output(0)?.len();
    let (addr, len) = range(ctx, capacity)?;
    if len == 0 {
        return Ok(());
    }
    let data = ctx.load(addr, len)?;
    ctx.output(0)?[..data.len()].copy_from_slice(&data);
    Ok(())
}

/// `(dst: WRITE L, addr: READ B, len: READ B)`: copies `memory[addr, addr+len)`
/// into `dst`; the rest of `dst` is zero.
pub fn load_contiguous(name: &str) -> CodeletDefinition {
    CodeletDefinition::memory(name, vec![OperandSlot::write_l(), OperandSlot::read_b(), OperandSlot::read_b()], load_body)
}

/// Like [`load_contiguous`] but `dst` is a streamed operand.
pub fn stream_contiguous(name: &str) -> CodeletDefinition {
    CodeletDefinition::memory(
        name,
        vec![OperandSlot::streamed(RegClass::Lines2048, Direction::Write), OperandSlot::read_b(), OperandSlot::read_b()],
        load_body,
    )
}

/// `(src: READ L, addr: READ B, len: READ B)`: writes `src[0, len)` to memory.
pub fn store_contiguous(name: &str) -> CodeletDefinition {
    CodeletDefinition::memory(name, vec![OperandSlot::read_l(), OperandSlot::read_b(), OperandSlot::read_b()], |ctx| {
        let capacity = ctx.input(0)?.len();
        let (addr, len) = range(ctx, capacity)?;
        if len == 0 {
            return Ok(());
        }
        let data = ctx.input(0)?[..len as usize].to_vec();
        ctx.store(addr, &data)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{MainMemory, MemoryError};
    use proptest::prelude::*;

    const L: usize = 256;

    fn word(v: u64) -> Vec<u8> {
        let mut b = vec![0u8; 64];
        b[..8].copy_from_slice(&v.to_le_bytes());
        b[8..].fill(0xEE); // ignored upper bytes
        b
    }

    fn load(mm: &mut MainMemory, addr: u64, len: u64) -> Result<Vec<u8>, CodeletError> {
        let out = load_contiguous("Load").execute(vec![vec![0; L], word(addr), word(len)], Some(mm))?;
        Ok(out.operands[0].clone())
    }

    fn store(mm: &mut MainMemory, src: Vec<u8>, addr: u64, len: u64) -> Result<u64, CodeletError> {
        Ok(store_contiguous("Store").execute(vec![src, word(addr), word(len)], Some(mm))?.memory_bytes)
    }

    #[test]
    fn load_zero_fills() {
        let mut mm = MainMemory::new(8192);
        let pattern: Vec<u8> = (0..64).map(|i| i as u8 ^ 0x5A).collect();
        mm.store(4096, &pattern).unwrap();
        let dst = load(&mut mm, 4096, 64).unwrap();
        assert_eq!(&dst[..64], &pattern[..]);
        assert!(dst[64..].iter().all(|&b| b == 0));
    }

    #[test]
    fn zero_length_touches_nothing() {
        let mut mm = MainMemory::new(16);
        let out = load_contiguous("Load").execute(vec![vec![0; L], word(1 << 40), word(0)], Some(&mut mm)).unwrap();
        assert!(out.operands[0].iter().all(|&b| b == 0));
        assert_eq!(out.memory_bytes, 0);
        assert_eq!(store(&mut mm, vec![1; L], 1 << 40, 0).unwrap(), 0);
        assert_eq!(mm, MainMemory::new(16));
    }

    #[test]
    fn errors() {
        let mut mm = MainMemory::new(512);
        assert!(matches!(load(&mut mm, 500, 64), Err(CodeletError::Memory(MemoryError::OutOfBounds { .. }))));
        assert!(matches!(load(&mut mm, 0, L as u64 + 1), Err(CodeletError::Failed(_))));
        assert!(matches!(store(&mut mm, vec![0; L], 0, L as u64 + 1), Err(CodeletError::Failed(_))));
    }

    proptest! {
        #[test]
        fn store_load_round_trip(addr in 0u64..2048, len in 0u64..=L as u64, seed in any::<u8>()) {
            let mut mm = MainMemory::new(4096);
            let src: Vec<u8> = (0..L).map(|i| (i as u8).wrapping_mul(31) ^ seed).collect();
            store(&mut mm, src.clone(), addr, len).unwrap();
            let back = load(&mut mm, addr, len).unwrap();
            prop_assert_eq!(&back[..len as usize], &src[..len as usize]);
            prop_assert!(back[len as usize..].iter().all(|&b| b == 0));
        }

        #[test]
        fn load_store_round_trip(addr in 0u64..2048, len in 0u64..=L as u64, seed in any::<u8>()) {
            let mut mm = MainMemory::new(4096);
            let fill: Vec<u8> = (0..4096).map(|i| (i as u8) ^ seed).collect();
            mm.store(0, &fill).unwrap();
            let before = mm.clone();
            let reg = load(&mut mm, addr, len).unwrap();
            store(&mut mm, reg, addr, len).unwrap();
            prop_assert_eq!(mm, before);
        }
    }
}
