use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use super::{DetectionBox, DetectionError, DetectionResult, Prompt};

fn default_max_in_flight() -> usize {
    16
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalDetectorConfig {
    /// Base URL; requests go to `{endpoint}/detect`.
    pub endpoint: String,
    pub timeout_ms: u64,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl fmt::Debug for ExternalDetectorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalDetectorConfig")
            .field("endpoint", &self.endpoint)
            .field("timeout_ms", &self.timeout_ms)
            .field("auth_token", &self.auth_token.as_ref().map(|_| "<redacted>"))
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl ExternalDetectorConfig {
    pub fn new(endpoint: impl Into<String>, timeout_ms: u64) -> Self {
        Self { endpoint: endpoint.into(), timeout_ms, auth_token: None, max_in_flight: default_max_in_flight() }
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.timeout_ms == 0 {
            return Err(DetectionError::validation("timeout_ms", "must be > 0"));
        }
        if self.max_in_flight == 0 {
            return Err(DetectionError::validation("max_in_flight", "must be > 0"));
        }
        let scheme_ok = self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://");
        if !scheme_ok {
            return Err(DetectionError::validation("endpoint", "must be an http(s) URL"));
        }
        Ok(())
    }

    fn detect_url(&self) -> String {
        format!("{}/detect", self.endpoint.trim_end_matches('/'))
    }
}

/// What the external detector is asked to look at.
#[derive(Debug, Clone, Copy)]
pub enum ImageSource<'a> {
    Bytes(&'a [u8]),
    Ref(&'a str),
}

impl ImageSource<'_> {
    fn image_ref(&self) -> String {
        match self {
            ImageSource::Bytes(b) => format!("upload:{}", &hex::encode(Sha256::digest(b))[..16]),
            ImageSource::Ref(r) => r.to_string(),
        }
    }
}

/// HTTP client for an external grounded detector, capping in-flight calls.
#[derive(Debug, Clone)]
pub struct RemoteDetector {
    config: ExternalDetectorConfig,
    client: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl RemoteDetector {
    pub fn new(config: ExternalDetectorConfig) -> Result<Self, DetectionError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| DetectionError::validation("endpoint", e.to_string()))?;
        let permits = Arc::new(Semaphore::new(config.max_in_flight));
        Ok(Self { config, client, permits })
    }

    pub fn config(&self) -> &ExternalDetectorConfig {
        &self.config
    }

    pub async fn detect(
        &self,
        source: ImageSource<'_>,
        prompt: &Prompt,
        threshold: f64,
    ) -> Result<DetectionResult, DetectionError> {
        let mut body = json!({ "prompts": prompt.phrases(), "threshold": threshold });
        match source {
            ImageSource::Bytes(b) => {
                body["image"] = Value::String(base64::engine::general_purpose::STANDARD.encode(b));
            }
            ImageSource::Ref(r) => body["image_ref"] = Value::String(r.to_string()),
        }
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| DetectionError::Unavailable("client closed".into()))?;
        let started = Instant::now();
        let mut request = self.client.post(self.config.detect_url()).json(&body);
        if let Some(token) = &self.config.auth_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().await.map_err(transport_error)?;
        let status = response.status();
        if !status.is_success() {
            return Err(DetectionError::Upstream { status: status.as_u16() });
        }
        let bytes = response.bytes().await.map_err(transport_error)?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        let (detector_id, boxes) = decode_detector_response(&bytes)?;
        DetectionResult { image_ref: source.image_ref(), boxes, detector_id, latency_ms }.normalized()
    }
}

fn transport_error(e: reqwest::Error) -> DetectionError {
    if e.is_timeout() {
        DetectionError::Unavailable("timed out".into())
    } else if e.is_connect() {
        DetectionError::Unavailable(format!("connect: {e}"))
    } else if e.is_decode() || e.is_body() {
        DetectionError::protocol("body", e.to_string())
    } else {
        DetectionError::Unavailable(e.to_string())
    }
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value, DetectionError> {
    obj.get(key).ok_or_else(|| DetectionError::protocol(join(path, key), "missing"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn number(obj: &Map<String, Value>, path: &str, key: &str) -> Result<f64, DetectionError> {
    field(obj, path, key)?
        .as_f64()
        .ok_or_else(|| DetectionError::protocol(join(path, key), "expected a number"))
}

/// Decodes a detector response body `{detector_id, boxes: [...]}` into its
/// id and validated (unsorted) boxes. Errors name the offending field, e.g.
/// `boxes[1].confidence`.
pub fn decode_detector_response(body: &[u8]) -> Result<(String, Vec<DetectionBox>), DetectionError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| DetectionError::protocol("body", e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| DetectionError::protocol("body", "expected an object"))?;
    let detector_id = field(obj, "", "detector_id")?
        .as_str()
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| DetectionError::protocol("detector_id", "expected a nonempty string"))?
        .to_string();
    let raw_boxes = field(obj, "", "boxes")?
        .as_array()
        .ok_or_else(|| DetectionError::protocol("boxes", "expected an array"))?;
    let mut boxes = Vec::with_capacity(raw_boxes.len());
    for (i, raw) in raw_boxes.iter().enumerate() {
        let path = format!("boxes[{i}]");
        let b = raw.as_object().ok_or_else(|| DetectionError::protocol(&path, "expected an object"))?;
        let label = field(b, &path, "label")?
            .as_str()
            .ok_or_else(|| DetectionError::protocol(join(&path, "label"), "expected a string"))?
            .to_string();
        let decoded = DetectionBox {
            x: number(b, &path, "x")?,
            y: number(b, &path, "y")?,
            w: number(b, &path, "w")?,
            h: number(b, &path, "h")?,
            label,
            confidence: number(b, &path, "confidence")?,
        };
        decoded.check(&path)?;
        boxes.push(decoded);
    }
    Ok((detector_id, boxes))
}
