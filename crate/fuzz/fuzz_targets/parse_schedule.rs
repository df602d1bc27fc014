#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(schedule) = b2f_core::inference::parse_schedule(text) {
            // Resolving a few frames exercises the keyframe walk; rendering
            // exercises the writer on anything the parser accepts.
            let _ = schedule.style_rows(4);
            let _ = b2f_core::inference::render_schedule(&schedule);
        }
    }
});
