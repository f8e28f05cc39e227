#![no_main]

use delay_dtp::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json_str(text) {
            let echoed = serde_json::to_string(&cfg).expect("config serialises");
            assert_eq!(RunConfig::from_json_str(&echoed).expect("echo parses"), cfg);
        }
    }
});
