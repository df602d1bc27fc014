#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(file) = b2f_core::inference::parse_style(text) {
            let _ = b2f_core::inference::render_style(&file);
        }
    }
});
