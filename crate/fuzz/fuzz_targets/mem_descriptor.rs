#![no_main]

use libfuzzer_sys::fuzz_target;
use mcsim::machine::MemoryImage;

// First byte picks a blob length; the rest is the descriptor text.
fuzz_target!(|data: &[u8]| {
    let Some((&len, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    if let Ok(symbols) = MemoryImage::parse_descriptor(text) {
        let _ = MemoryImage::new(vec![0; len as usize * 16], symbols);
    }
});
