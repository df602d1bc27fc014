#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ckpt) = serde_json::from_str::<b2f_core::model::Checkpoint>(text) {
            // Shape and coverage validation happens here, not in serde.
            let _ = ckpt.build_model();
        }
    }
});
