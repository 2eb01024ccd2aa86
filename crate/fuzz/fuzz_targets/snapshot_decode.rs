#![no_main]
use agentmem::MemorySnapshot;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(snap) = MemorySnapshot::decode(data) {
        // anything that decodes must survive a round trip unchanged
        let again = MemorySnapshot::decode(snap.encode().as_bytes()).expect("re-decode");
        assert_eq!(again, snap);
    }
});
