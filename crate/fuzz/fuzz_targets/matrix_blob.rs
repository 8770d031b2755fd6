#![no_main]

use libfuzzer_sys::fuzz_target;
use mcsim::spgemm::SparseMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = SparseMatrix::from_blob(data) {
        // Bytes, not values: NaN entries are legal.
        let blob = m.to_blob();
        assert_eq!(SparseMatrix::from_blob(&blob).expect("re-encoded blob decodes").to_blob(), blob);
        if m.rows().saturating_mul(m.cols()) <= 1 << 16 {
            let _ = m.to_dense();
        }
    }
});
