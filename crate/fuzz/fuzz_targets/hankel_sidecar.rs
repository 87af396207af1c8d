#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = sdeepc::io::HankelSidecar::from_json(text) {
            let back =
                sdeepc::io::HankelSidecar::from_json(&s.to_json()).expect("own output parses");
            assert_eq!(back, s);
        }
    }
});
