#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // parsing may fail, but must never panic; a successful parse must
        // round-trip exactly
        if let Ok(ds) = owr::Dataset::from_csv_str(text) {
            let back = owr::Dataset::from_csv_str(&ds.to_csv_string()).unwrap();
            assert_eq!(ds, back);
        }
    }
});
