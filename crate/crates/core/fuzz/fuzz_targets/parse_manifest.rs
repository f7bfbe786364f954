#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let views = geoprompt::layout::default_views();
    if let Ok(parsed) = geoprompt::ingest::parse_manifest(data, &views, "fuzz") {
        let bytes = geoprompt::ingest::write_manifest(&parsed.manifest);
        let again = geoprompt::ingest::parse_manifest(&bytes, &views, "fuzz").expect("canonical manifest reparses");
        assert_eq!(geoprompt::ingest::write_manifest(&again.manifest), bytes);
    }
});
