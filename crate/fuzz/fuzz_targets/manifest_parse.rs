#![no_main]

use fusiondepth::data::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = parse_manifest(text) {
            assert_eq!(parse_manifest(&m.render()).expect("rendered manifest parses"), m);
        }
    }
});
