#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(values) = permissive::io::parse_solution(text) {
            for v in values.values() {
                assert!(v.is_finite());
            }
        }
    }
});
