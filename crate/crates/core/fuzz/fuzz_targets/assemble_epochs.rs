#![no_main]

use hybridloc::fusion::{assemble_epochs, ScheduleConfig};
use hybridloc::log::parse_log;
use libfuzzer_sys::fuzz_target;

// First byte picks the decimation, the rest is a measurement log.
fuzz_target!(|data: &[u8]| {
    let Some((&d, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let Ok(records) = parse_log(text) else {
        return;
    };
    let sched = ScheduleConfig {
        decimation: u32::from(d % 8) + 1,
        ..ScheduleConfig::default()
    };
    if let Ok(frames) = assemble_epochs(&records, &sched) {
        assert!(frames.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert!(frames.iter().all(|f| !f.is_empty()));
    }
});
