#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for kw in agentmem::dataset::split_keywords(text) {
            assert!(!kw.trim().is_empty());
        }
    }
});
