#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(clip) = b2f_core::motion::parse_clip(text) {
            // A clip that parses must also survive the typed conversions
            // and re-render without panicking.
            let _ = b2f_core::motion::body_from_clip(&clip);
            let _ = b2f_core::motion::face_from_clip(&clip);
            let _ = b2f_core::motion::render_clip(&clip);
        }
    }
});
