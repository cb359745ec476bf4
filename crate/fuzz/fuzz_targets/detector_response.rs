#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((_, boxes)) = dietwise_core::detection::decode_detector_response(data) {
        for b in boxes {
            assert!((0.0..=1.0).contains(&b.confidence));
            assert!(b.w >= 0.0 && b.h >= 0.0);
        }
    }
});
