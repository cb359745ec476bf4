#![no_main]
use libfuzzer_sys::fuzz_target;

use dietwise_core::security::{decrypt_field, EncryptedBlob, MasterKey};

fuzz_target!(|data: &[u8]| {
    if let Ok(blob) = EncryptedBlob::from_json(data) {
        let key = MasterKey::from_bytes("fuzz", &[7; 32]).unwrap();
        let _ = decrypt_field(&blob, &key);
    }
});
