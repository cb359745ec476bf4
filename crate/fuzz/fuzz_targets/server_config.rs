#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = dietwise::config::Config::from_toml(data, std::path::Path::new("/nonexistent"));
});
