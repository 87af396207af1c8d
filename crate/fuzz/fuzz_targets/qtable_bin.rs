#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(q) = sdeepc::sarsa::QTable::from_bytes(data) {
        assert_eq!(q.to_bytes(), data);
    }
});
