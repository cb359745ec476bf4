#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(ids) = dietwise_core::coco::parse_id_list(data) {
        let text = dietwise_core::coco::format_id_list(&ids);
        assert_eq!(dietwise_core::coco::parse_id_list(&text).unwrap(), ids);
    }
});
