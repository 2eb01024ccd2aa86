#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for call in agentmem::toolcall::parse_calls(text) {
            let _ = format!("{call:?}");
        }
    }
});
