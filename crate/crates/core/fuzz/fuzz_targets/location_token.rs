#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Some(t) = geoprompt::layout::LocationToken::parse(text) {
            assert_eq!(t.to_string(), text);
        }
    }
});
