#![no_main]

use libfuzzer_sys::fuzz_target;
use lunarhop::terrain::Heightfield;

fuzz_target!(|data: &[u8]| {
    if let Ok(hf) = Heightfield::from_bytes(data) {
        // Anything that decodes must encode back to a decodable buffer.
        let again = Heightfield::from_bytes(&hf.to_bytes()).expect("re-decode");
        assert_eq!(again.to_bytes(), hf.to_bytes());
    }
});
