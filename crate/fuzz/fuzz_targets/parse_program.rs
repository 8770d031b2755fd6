#![no_main]

use libfuzzer_sys::fuzz_target;
use mcsim::isa::{disassemble, parse_program};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    match parse_program(text) {
        // Anything accepted must survive a disassembly round trip.
        Ok(p) => assert_eq!(parse_program(&disassemble(&p)).as_ref(), Ok(&p)),
        Err(e) => assert!(e.line >= 1 && e.column >= 1),
    }
});
