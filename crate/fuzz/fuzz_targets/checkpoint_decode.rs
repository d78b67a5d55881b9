#![no_main]

use libfuzzer_sys::fuzz_target;
use lunarhop::estimator::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&m);
        assert_eq!(decode_checkpoint(&bytes).expect("re-decode"), m);
    }
});
