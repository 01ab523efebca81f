#![no_main]

use hardball_core::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = parse_config(text) {
            for (key, _) in config.iter() {
                assert!(config.line_of(key).is_some());
            }
            let _ = config.parse::<f64>("r");
        }
    }
});
