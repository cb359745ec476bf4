#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(dataset) = dietwise_core::coco::parse_coco(data) {
        let _ = dietwise_core::coco::validate(&dataset);
        let _ = dietwise_core::coco::dataset_stats(&dataset);
        // Serializing and reparsing must be stable.
        let again = dietwise_core::coco::parse_coco(&dataset.to_json()).expect("round trip");
        assert_eq!(again.to_json(), dataset.to_json());
    }
});
