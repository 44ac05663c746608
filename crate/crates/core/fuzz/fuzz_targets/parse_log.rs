#![no_main]

use hybridloc::log::{format_log, parse_log};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(records) = parse_log(text) {
        let canonical = format_log(&records);
        let back = parse_log(&canonical).expect("canonical log parses");
        assert_eq!(back, records);
        assert_eq!(format_log(&back), canonical);
    }
});
