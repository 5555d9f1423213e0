#![no_main]
use gestalt_core::experiments::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::parse(text, std::path::Path::new("/")) {
            let _ = cfg.to_toml();
        }
    }
});
