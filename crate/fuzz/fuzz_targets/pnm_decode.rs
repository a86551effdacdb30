#![no_main]

use fusiondepth::data::pnm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = pnm::decode(data) {
        let again = pnm::decode(&pnm::encode(&img)).expect("re-encoded image decodes");
        assert_eq!(again, img);
        let _ = pnm::to_tensor(&img);
    }
});
