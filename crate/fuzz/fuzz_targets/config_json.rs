#![no_main]

use gridmpc_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::default().with_json(text) {
            let _ = cfg.loop_config();
        }
    }
});
