#![no_main]

use libfuzzer_sys::fuzz_target;
use mcsim::timing::CostModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = CostModel::from_json(text) {
        let _ = model.default_codelet.cycles(u64::MAX);
        let _ = model.control_cycles();
    }
});
