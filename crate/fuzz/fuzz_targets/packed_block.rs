#![no_main]

use libfuzzer_sys::fuzz_target;
use mcsim::spgemm::{recode_csc_to_csr, PackedBlock};

fuzz_target!(|data: &[u8]| {
    if let Ok(block) = PackedBlock::decode(data) {
        let reg = block.encode(data.len()).expect("decoded block fits its register");
        assert_eq!(PackedBlock::decode(&reg).map(|b| b.len()), Ok(block.len()));
        let recoded = recode_csc_to_csr(data).expect("decodable block recodes");
        assert_eq!(recoded.len(), data.len());
    }
});
