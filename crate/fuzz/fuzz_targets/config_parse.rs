#![no_main]

use std::path::Path;

use fusiondepth::train::{arch_to_text, parse_arch, parse_config};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(text, Path::new("/base")) {
            let arch = parse_arch(&arch_to_text(&cfg.arch)).expect("arch text parses");
            assert_eq!(arch, cfg.arch);
        }
        let _ = parse_arch(text);
    }
});
