#![no_main]
use gestalt_core::preproc::annotation::{format_template, parse_template};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_template(text, "fuzz") {
        // Whatever parses must survive a format/parse round trip.
        let again = parse_template(&format_template(&t), "fuzz").expect("formatted template reparses");
        assert_eq!(format_template(&again), format_template(&t));
    }
});
