#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(prop) = permissive::io::parse_property(text) {
            let rendered = format!("{prop}");
            let again = permissive::io::parse_property(&rendered).expect("round-trip reparse");
            assert_eq!(format!("{again}"), rendered);
        }
    }
});
