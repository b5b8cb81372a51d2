#![no_main]

use libfuzzer_sys::fuzz_target;
use sosp_harness::descriptor::{InstanceDescriptor, InstanceSecret};

// input: descriptor JSON, a NUL byte, secret JSON
fuzz_target!(|data: &[u8]| {
    let (a, b) = match data.iter().position(|&c| c == 0) {
        Some(i) => (&data[..i], &data[i + 1..]),
        None => (data, &[][..]),
    };
    if let Ok(desc) = InstanceDescriptor::from_json(a) {
        let _ = desc.validate();
        if let Ok(secret) = InstanceSecret::from_json(b) {
            let _ = desc.open(&secret);
        }
    }
});
