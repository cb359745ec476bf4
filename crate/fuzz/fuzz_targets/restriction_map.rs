#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = dietwise_core::recommend::RestrictionMap::from_toml(data);
});
