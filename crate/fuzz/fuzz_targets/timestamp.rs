#![no_main]
use agentmem::Timestamp;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ts) = Timestamp::parse(text) {
        assert_eq!(Timestamp::parse(&ts.to_string()).expect("canonical form parses"), ts);
    }
});
