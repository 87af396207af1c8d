#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(t) = sdeepc::io::trajectory_from_csv(text, 0) {
            let again = sdeepc::io::trajectory_to_csv(&t);
            let back = sdeepc::io::trajectory_from_csv(&again, 0).expect("own output parses");
            assert_eq!(sdeepc::io::trajectory_to_csv(&back), again);
        }
    }
});
