#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // an accepted config must be valid and re-serializable
        if let Ok(cfg) = owr::RunConfig::from_json_str(text) {
            cfg.validate().unwrap();
            let json = cfg.to_json_string().unwrap();
            let back = owr::RunConfig::from_json_str(&json).unwrap();
            assert_eq!(cfg, back);
        }
    }
});
