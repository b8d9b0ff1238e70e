#![no_main]

use libfuzzer_sys::fuzz_target;
use pilir::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let _ = cfg.resolve();
        if let Ok(again) = ExperimentConfig::parse(&cfg.to_toml()) {
            assert_eq!(again.to_toml(), cfg.to_toml());
        }
    }
});
