#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = dietwise_core::preprocess::PreprocessConfig::from_toml(data);
});
