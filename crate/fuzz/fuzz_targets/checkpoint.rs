#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // a checkpoint that deserializes and validates must survive a
        // save/load cycle bit for bit
        if let Ok(state) = owr::checkpoint::checkpoint_from_str(text) {
            let json = owr::checkpoint::checkpoint_to_string(&state).unwrap();
            owr::checkpoint::checkpoint_from_str(&json).unwrap();
        }
    }
});
