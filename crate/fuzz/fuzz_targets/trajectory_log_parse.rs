#![no_main]

use libfuzzer_sys::fuzz_target;
use lunarhop::harness::log::parse_log;

fuzz_target!(|data: &[u8]| {
    let _ = parse_log(data);
});
