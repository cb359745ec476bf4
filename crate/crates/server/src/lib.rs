//! HTTP service for the dietwise dietary assistant.
//!
//! [`service::Service`] owns the stores and detectors, [`http`] maps it onto
//! axum routes, and [`startup`] resolves keys and TLS before binding.

pub mod cli;
pub mod config;
pub mod error;
pub mod http;
pub mod service;
pub mod startup;
pub mod telemetry;
