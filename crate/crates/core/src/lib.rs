//! Core library for the dietwise dietary assistant.
//!
//! The crate is organised by subsystem:
//!
//! * [`catalog`] food items, nutrient profiles and label lookup over a [`store`].
//! * [`profiles`] accounts, sessions and encrypted health profiles.
//! * [`security`] field-level AES-256-GCM and credential hashing.
//! * [`coco`] COCO annotation parsing, validation, food filtering and splits.
//! * [`preprocess`] resize, normalization and seeded augmentation.
//! * [`detection`] the grounded-detection contract, the reference detector,
//!   the remote detector client and image-level evaluation.
//! * [`recommend`] glycemic banding, compatibility rules and alternatives.
//! * [`analytics`] sample size, confusion metrics, NPS and Likert summaries.

pub mod analytics;
pub mod catalog;
pub mod coco;
pub mod detection;
pub mod preprocess;
pub mod profiles;
pub mod recommend;
pub mod rng;
pub mod security;
pub mod store;
pub mod text;

/// Bundled fixtures compiled into the library.
pub mod fixtures {
    /// The ten-item seed catalog (one record per COCO "food" category).
    ///
    /// Glycemic indices and nutrient values are illustrative, not clinical data.
    pub const SEED_CATALOG: &str = include_str!("../fixtures/seed-catalog.jsonl");

    /// Default restriction → forbidden-tag mapping.
    pub const RESTRICTIONS: &str = include_str!("../fixtures/restrictions.toml");
}
