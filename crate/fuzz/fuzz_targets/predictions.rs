#![no_main]
use gestalt_core::ensemble::parse_predictions;
use gestalt_core::evaluation::evaluate_predictions;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_predictions(text, "fuzz") {
        let _ = evaluate_predictions(&records, &[1, 5], 16, 0);
    }
});
