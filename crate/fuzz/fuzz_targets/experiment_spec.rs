#![no_main]

use libfuzzer_sys::fuzz_target;
use sosp_harness::ExperimentSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = ExperimentSpec::from_json(data) {
        // resolution may reject, but must not panic; accepted specs are stable
        if let Ok(r) = spec.resolve() {
            let again = r.spec.resolve().expect("resolved spec resolves");
            assert_eq!(again.spec, r.spec);
        }
    }
});
