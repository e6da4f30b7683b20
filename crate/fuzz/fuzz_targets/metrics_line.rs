#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(record) = owr::metrics::parse_metrics_line(text) {
            let line = serde_json::to_string(&record).unwrap();
            let back = owr::metrics::parse_metrics_line(&line).unwrap();
            assert_eq!(record, back);
        }
    }
});
