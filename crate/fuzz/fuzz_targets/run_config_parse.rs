#![no_main]

use artistembed_cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let _ = cfg.validate();
        let echo = cfg.resolved();
        assert_eq!(RunConfig::from_json(&echo.to_json()).expect("echo parses"), echo);
    }
});
