#![no_main]

use hybridloc::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text) {
        let echo = cfg.to_toml();
        assert_eq!(parse_config(&echo).expect("echo parses"), cfg);
    }
});
