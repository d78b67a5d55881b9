#![no_main]

use libfuzzer_sys::fuzz_target;
use lunarhop::harness::HarnessConfig;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = HarnessConfig::parse(&text);
});
