//! Service configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the config
//! file.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use dietwise_core::detection::{ExternalDetectorConfig, DEFAULT_THRESHOLD};
use dietwise_core::preprocess::Size;
use dietwise_core::recommend::GlycemicBands;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default)]
    pub telemetry: TelemetrySection,
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub security: SecuritySection,
    #[serde(default)]
    pub tls: Option<TlsSection>,
    #[serde(default)]
    pub auth: AuthSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub catalog: CatalogSection,
    #[serde(default)]
    pub survey: SurveySection,
    #[serde(default)]
    pub glycemic: GlycemicBands,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub bind: SocketAddr,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self { bind: ([127, 0, 0, 1], 8443).into() }
    }
}

/// Without a `bind`, `/metrics` is served on the main listener.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetrySection {
    pub bind: Option<SocketAddr>,
}

/// Without a `path` the store is in memory and lost on exit.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecuritySection {
    pub key_id: String,
    pub key_file: Option<PathBuf>,
    #[serde(default)]
    pub rotation_note: String,
}

impl Default for SecuritySection {
    fn default() -> Self {
        Self { key_id: "primary".into(), key_file: None, rotation_note: String::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum TlsVersion {
    #[serde(rename = "1.2")]
    Tls12,
    #[serde(rename = "1.3")]
    Tls13,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsSection {
    pub cert_path: PathBuf,
    pub key_path: PathBuf,
    #[serde(default = "default_tls_version")]
    pub min_version: TlsVersion,
}

fn default_tls_version() -> TlsVersion {
    TlsVersion::Tls12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthSection {
    /// Account names allowed to read survey summaries.
    #[serde(default)]
    pub admins: BTreeSet<String>,
    #[serde(default = "default_ttl")]
    pub session_ttl_hours: u32,
    #[serde(default)]
    pub fast_hashing: bool,
}

fn default_ttl() -> u32 {
    24
}

impl Default for AuthSection {
    fn default() -> Self {
        Self { admins: BTreeSet::new(), session_ttl_hours: default_ttl(), fast_hashing: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorMode {
    Reference,
    Remote,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub mode: DetectorMode,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Uploads are resized to this before they reach the detector.
    #[serde(default = "default_input")]
    pub input_size: Size,
    pub remote: Option<ExternalDetectorConfig>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_input() -> Size {
    Size::MODEL_INPUT
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self { mode: DetectorMode::Reference, threshold: DEFAULT_THRESHOLD, input_size: Size::MODEL_INPUT, remote: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub annotations: PathBuf,
    /// Directory with `val.txt` and `test.txt` id lists.
    pub splits_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSection {
    /// Seed catalog loaded at startup; the bundled one when absent.
    pub seed: Option<PathBuf>,
    pub restrictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveySection {
    /// Response files imported at startup.
    #[serde(default)]
    pub import: Vec<PathBuf>,
}

impl Config {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.store.path {
            fix(p);
        }
        if let Some(p) = &mut self.security.key_file {
            fix(p);
        }
        if let Some(tls) = &mut self.tls {
            fix(&mut tls.cert_path);
            fix(&mut tls.key_path);
        }
        if let Some(d) = &mut self.dataset {
            fix(&mut d.annotations);
            fix(&mut d.splits_dir);
        }
        if let Some(p) = &mut self.catalog.seed {
            fix(p);
        }
        if let Some(p) = &mut self.catalog.restrictions {
            fix(p);
        }
        self.survey.import.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, message: String| Err(ConfigError::Invalid { field, message });
        if !(0.0..=1.0).contains(&self.detector.threshold) {
            return invalid("detector.threshold", format!("{} outside [0, 1]", self.detector.threshold));
        }
        if self.detector.input_size.width == 0 || self.detector.input_size.height == 0 {
            return invalid("detector.input_size", "dimensions must be positive".into());
        }
        match (&self.detector.mode, &self.detector.remote) {
            (DetectorMode::Remote, None) => {
                return invalid("detector.remote", "required when mode = \"remote\"".into());
            }
            (_, Some(remote)) => {
                if let Err(e) = remote.validate() {
                    return invalid("detector.remote", e.to_string());
                }
            }
            _ => {}
        }
        if self.security.key_id.trim().is_empty() {
            return invalid("security.key_id", "empty".into());
        }
        if self.auth.session_ttl_hours == 0 {
            return invalid("auth.session_ttl_hours", "must be > 0".into());
        }
        if let Err(e) = self.glycemic.validate() {
            return invalid("glycemic", e.to_string());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_has_defaults() {
        let c = Config::from_toml("", Path::new("/etc/dietwise")).unwrap();
        assert_eq!(c.detector.mode, DetectorMode::Reference);
        assert_eq!(c.detector.threshold, 0.5);
        assert!(c.tls.is_none());
        assert_eq!(c.auth.session_ttl_hours, 24);
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let c = Config::from_toml(
            "[tls]\ncert_path = \"cert.pem\"\nkey_path = \"/abs/key.pem\"\n",
            Path::new("/etc/dietwise"),
        )
        .unwrap();
        let tls = c.tls.unwrap();
        assert_eq!(tls.cert_path, Path::new("/etc/dietwise/cert.pem"));
        assert_eq!(tls.key_path, Path::new("/abs/key.pem"));
        assert_eq!(tls.min_version, TlsVersion::Tls12);
    }

    #[test]
    fn remote_mode_needs_remote_section() {
        let err = Config::from_toml("[detector]\nmode = \"remote\"\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "detector.remote", .. }));
        assert!(Config::from_toml("[detector]\nmode = \"remote\"\n[detector.remote]\nendpoint = \"http://x\"\ntimeout_ms = 0\n", Path::new(".")).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml("[server]\nbind = \"127.0.0.1:1\"\nport = 3\n", Path::new(".")).is_err());
        assert!(Config::from_toml("[tls]\ncert_path = \"a\"\nkey_path = \"b\"\nmin_version = \"1.1\"\n", Path::new(".")).is_err());
    }
}
