#![no_main]

use libfuzzer_sys::fuzz_target;
use mcsim::machine::MachineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = MachineConfig::from_json(text) {
        assert!(cfg.check().is_ok());
        let _ = cfg.l_register_bytes();
    }
});
