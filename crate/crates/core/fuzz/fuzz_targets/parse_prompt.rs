#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    use geoprompt::layout::{ClassTable, GridSpec};
    use geoprompt::token::TokenVocabulary;
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut classes = ClassTable::new();
    for (id, name) in [(1, "car"), (2, "pedestrian"), (3, "traffic cone")] {
        classes.insert(id, name).unwrap();
    }
    let _ = geoprompt::prompt::parse_prompt(text, &TokenVocabulary::new(GridSpec::DEFAULT), &classes);
});
