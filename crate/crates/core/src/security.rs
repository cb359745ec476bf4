//! Field-level encryption at rest and credential hashing.
//!
//! Sensitive fields are sealed individually with AES-256-GCM under a master
//! key loaded from `DIETWISE_MASTER_KEY` (64 hex chars) or a key file. Each
//! [`EncryptedBlob`] is self-describing: algorithm tag, key id, a fresh random
//! 96-bit nonce, and ciphertext with the 16-byte tag appended. The algorithm
//! tag and key id are bound as associated data.

use std::fmt;
use std::path::Path;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use base64::Engine;
use base64::engine::general_purpose::STANDARD as B64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const ALGORITHM: &str = "AES-256-GCM";
pub const MASTER_KEY_ENV: &str = "DIETWISE_MASTER_KEY";
const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SecurityError {
    #[error("master key must be 256 bits, got {bits}")]
    InvalidKeyLength { bits: usize },
    #[error("master key is not valid hex")]
    InvalidKeyEncoding,
    #[error("no master key: set {MASTER_KEY_ENV} or pass --key-file")]
    MissingKey,
    #[error("key file {path}: {message}")]
    KeyFile { path: String, message: String },
    #[error("key id must be 1-64 chars of [A-Za-z0-9._-]")]
    InvalidKeyId,
    #[error("ciphertext failed authentication")]
    Authentication,
    #[error("blob sealed under key {found:?}, expected {expected:?}")]
    WrongKey { expected: String, found: String },
    #[error("unsupported algorithm {0:?}")]
    UnsupportedAlgorithm(String),
    #[error("malformed blob: {0}")]
    MalformedBlob(String),
    #[error("system randomness unavailable")]
    Randomness,
    #[error("credential hashing: {0}")]
    Hashing(String),
}

/// 256-bit master key with its identifier. Never serialized, never printed.
#[derive(Clone)]
pub struct MasterKey {
    key_id: String,
    material: [u8; 32],
    rotation_note: String,
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MasterKey")
            .field("key_id", &self.key_id)
            .field("material", &"<redacted>")
            .finish()
    }
}

impl Drop for MasterKey {
    fn drop(&mut self) {
        self.material.fill(0);
    }
}

fn valid_key_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl MasterKey {
    pub fn from_bytes(key_id: &str, material: &[u8]) -> Result<Self, SecurityError> {
        if !valid_key_id(key_id) {
            return Err(SecurityError::InvalidKeyId);
        }
        let material: [u8; 32] = material
            .try_into()
            .map_err(|_| SecurityError::InvalidKeyLength { bits: material.len() * 8 })?;
        Ok(Self { key_id: key_id.to_string(), material, rotation_note: String::new() })
    }

    pub fn from_hex(key_id: &str, hex_material: &str) -> Result<Self, SecurityError> {
        let bytes = hex::decode(hex_material.trim()).map_err(|_| SecurityError::InvalidKeyEncoding)?;
        Self::from_bytes(key_id, &bytes)
    }

    pub fn from_env(key_id: &str) -> Result<Self, SecurityError> {
        match std::env::var(MASTER_KEY_ENV) {
            Ok(v) if !v.trim().is_empty() => Self::from_hex(key_id, &v),
            _ => Err(SecurityError::MissingKey),
        }
    }

    /// Key file holds either 64 hex chars (surrounding whitespace ignored) or
    /// exactly 32 raw bytes.
    pub fn from_key_file(key_id: &str, path: &Path) -> Result<Self, SecurityError> {
        let bytes = std::fs::read(path).map_err(|e| SecurityError::KeyFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if bytes.len() == 32 {
            return Self::from_bytes(key_id, &bytes);
        }
        let text = std::str::from_utf8(&bytes).map_err(|_| SecurityError::InvalidKeyEncoding)?;
        Self::from_hex(key_id, text)
    }

    /// Fresh random key, for ephemeral development setups.
    pub fn generate(key_id: &str) -> Result<Self, SecurityError> {
        let mut material = [0u8; 32];
        getrandom::fill(&mut material).map_err(|_| SecurityError::Randomness)?;
        Self::from_bytes(key_id, &material)
    }

    pub fn with_rotation_note(mut self, note: impl Into<String>) -> Self {
        self.rotation_note = note.into();
        self
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn rotation_note(&self) -> &str {
        &self.rotation_note
    }

    fn cipher(&self) -> Aes256Gcm {
        Aes256Gcm::new((&self.material).into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedBlob {
    pub algorithm: String,
    pub key_id: String,
    #[serde(with = "b64_nonce")]
    pub nonce: [u8; NONCE_LEN],
    #[serde(rename = "ciphertext", with = "b64_bytes")]
    pub ciphertext_and_tag: Vec<u8>,
}

fn associated_data(algorithm: &str, key_id: &str) -> Vec<u8> {
    format!("{algorithm}|{key_id}").into_bytes()
}

impl EncryptedBlob {
    /// Structural checks that do not need the key.
    pub fn check(&self) -> Result<(), SecurityError> {
        if self.algorithm != ALGORITHM {
            return Err(SecurityError::UnsupportedAlgorithm(self.algorithm.clone()));
        }
        if !valid_key_id(&self.key_id) {
            return Err(SecurityError::MalformedBlob("key_id".into()));
        }
        if self.ciphertext_and_tag.len() < TAG_LEN {
            return Err(SecurityError::MalformedBlob("ciphertext shorter than tag".into()));
        }
        Ok(())
    }

    /// Decodes and structurally checks a JSON-encoded blob.
    pub fn from_json(bytes: &[u8]) -> Result<Self, SecurityError> {
        let blob: Self =
            serde_json::from_slice(bytes).map_err(|e| SecurityError::MalformedBlob(e.to_string()))?;
        blob.check()?;
        Ok(blob)
    }
}

pub fn encrypt_field(plaintext: &[u8], key: &MasterKey) -> Result<EncryptedBlob, SecurityError> {
    let mut nonce = [0u8; NONCE_LEN];
    getrandom::fill(&mut nonce).map_err(|_| SecurityError::Randomness)?;
    let aad = associated_data(ALGORITHM, &key.key_id);
    let ciphertext_and_tag = key
        .cipher()
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: &aad })
        .map_err(|_| SecurityError::Authentication)?;
    Ok(EncryptedBlob {
        algorithm: ALGORITHM.to_string(),
        key_id: key.key_id.clone(),
        nonce,
        ciphertext_and_tag,
    })
}

pub fn decrypt_field(blob: &EncryptedBlob, key: &MasterKey) -> Result<Vec<u8>, SecurityError> {
    blob.check()?;
    if blob.key_id != key.key_id {
        return Err(SecurityError::WrongKey {
            expected: key.key_id.clone(),
            found: blob.key_id.clone(),
        });
    }
    let aad = associated_data(&blob.algorithm, &blob.key_id);
    key.cipher()
        .decrypt(
            Nonce::from_slice(&blob.nonce),
            Payload { msg: &blob.ciphertext_and_tag, aad: &aad },
        )
        .map_err(|_| SecurityError::Authentication)
}

mod b64_bytes {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text).map_err(serde::de::Error::custom)
    }
}

mod b64_nonce {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8; NONCE_LEN], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; NONCE_LEN], D::Error> {
        let bytes = b64_bytes::deserialize(d)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("nonce must be 96 bits"))
    }
}

/// Argon2id work factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashCost {
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl Default for HashCost {
    /// Roughly 100 ms per verification on a current desktop core.
    fn default() -> Self {
        Self { memory_kib: 65_536, iterations: 3, parallelism: 1 }
    }
}

impl HashCost {
    /// Smallest parameters Argon2 accepts. Test fixtures only.
    pub fn minimal() -> Self {
        Self { memory_kib: 8, iterations: 1, parallelism: 1 }
    }
}

/// Salted Argon2id hashing producing PHC strings.
#[derive(Clone)]
pub struct CredentialHasher {
    argon: Argon2<'static>,
}

impl fmt::Debug for CredentialHasher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CredentialHasher").finish_non_exhaustive()
    }
}

impl CredentialHasher {
    pub fn new(cost: HashCost) -> Result<Self, SecurityError> {
        let params = Params::new(cost.memory_kib, cost.iterations, cost.parallelism, None)
            .map_err(|e| SecurityError::Hashing(e.to_string()))?;
        Ok(Self { argon: Argon2::new(Algorithm::Argon2id, Version::V0x13, params) })
    }

    pub fn hash(&self, secret: &str) -> Result<String, SecurityError> {
        let mut salt = [0u8; 16];
        getrandom::fill(&mut salt).map_err(|_| SecurityError::Randomness)?;
        let salt = SaltString::encode_b64(&salt).map_err(|e| SecurityError::Hashing(e.to_string()))?;
        self.argon
            .hash_password(secret.as_bytes(), &salt)
            .map(|h| h.to_string())
            .map_err(|e| SecurityError::Hashing(e.to_string()))
    }

    /// False for a wrong secret and for an unparsable hash alike.
    pub fn verify(&self, secret: &str, phc: &str) -> bool {
        PasswordHash::new(phc)
            .map(|parsed| self.argon.verify_password(secret.as_bytes(), &parsed).is_ok())
            .unwrap_or(false)
    }
}
