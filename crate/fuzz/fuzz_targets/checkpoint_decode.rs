#![no_main]

use fusiondepth::arch::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = checkpoint::decode(data) {
        assert_eq!(checkpoint::encode(&params), data);
    }
});
