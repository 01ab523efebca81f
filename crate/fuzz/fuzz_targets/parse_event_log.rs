#![no_main]

use hardball_core::dynamics::jsonl::{parse_event_log, write_segment};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(log) = parse_event_log(text) {
            assert!(log.events.windows(2).all(|w| w[0].time <= w[1].time));
            if let Ok(seg) = log.to_segment() {
                let again = parse_event_log(&write_segment(&seg, log.header.seed, None)).unwrap();
                assert_eq!(again.events.len(), log.events.len());
            }
        }
    }
});
