#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rig) = geoprompt::geo3d::CameraRig::from_json(data) {
        geoprompt::geo3d::CameraRig::from_json(rig.to_json().as_bytes()).expect("serialized rig reparses");
    }
});
