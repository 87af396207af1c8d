#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = sdeepc::experiment::parse_spec(text) {
            // A spec that validates must also yield its derived objects without panicking.
            let _ = spec.model();
            let _ = spec.schedule();
        }
    }
});
