#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = b2f_core::trainer::RunConfig::from_toml_str(text) {
            let _ = config.to_toml_string();
        }
    }
});
