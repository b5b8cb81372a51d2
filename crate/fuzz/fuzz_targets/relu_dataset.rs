#![no_main]

use libfuzzer_sys::fuzz_target;
use sosp_harness::dataset::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(inst) = decode(data) {
        assert_eq!(encode(&inst), data);
    }
});
