#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(responses) = dietwise_core::analytics::parse_responses(data) {
        let _ = dietwise_core::analytics::survey_summary(&responses);
    }
});
