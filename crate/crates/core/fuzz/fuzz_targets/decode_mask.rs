#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = geoprompt::mask::decode_mask(data) {
        assert_eq!(geoprompt::mask::encode_mask(&mask), data);
    }
});
