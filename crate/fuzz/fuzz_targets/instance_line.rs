#![no_main]
use agentmem::dataset::{instance_line, parse_instance_line};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(inst) = parse_instance_line(text) {
        let line = instance_line(&inst);
        assert_eq!(parse_instance_line(&line).expect("re-parse"), inst);
    }
});
