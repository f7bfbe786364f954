#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = geoprompt::token::decode_embeddings(data) {
        assert_eq!(geoprompt::token::encode_embeddings(&table).len(), data.len());
    }
});
