#![no_main]

use libfuzzer_sys::fuzz_target;
use mcsim::registry::Registry;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(reg) = Registry::from_manifest(text) {
        let again = Registry::from_manifest(&reg.manifest_json()).expect("manifest round trip");
        assert_eq!(again.manifest(), reg.manifest());
    }
});
