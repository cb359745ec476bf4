//! Grounded detection: the contract, a reference detector over COCO ground
//! truth, an HTTP client for an external detector, and image-level
//! evaluation.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::coco::BBox;
use crate::text::fold_tokens;

mod eval;
mod reference;
mod remote;

pub use eval::{evaluate_detector, evaluate_reference, food_category_prompt, image_outcome, Outcome};
pub use reference::{detect_reference, REFERENCE_DETECTOR_ID};
pub use remote::{decode_detector_response, ExternalDetectorConfig, ImageSource, RemoteDetector};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectionError {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("image {0} not found")]
    NotFound(u64),
    #[error("detector unavailable: {0}")]
    Unavailable(String),
    #[error("detector returned status {status}")]
    Upstream { status: u16 },
    #[error("detector protocol error at {field}: {message}")]
    Protocol { field: String, message: String },
}

impl DetectionError {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation { field: field.into(), message: message.into() }
    }

    pub(crate) fn protocol(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Protocol { field: field.into(), message: message.into() }
    }

    /// Whether the same request may succeed later.
    pub fn is_retriable(&self) -> bool {
        match self {
            Self::Unavailable(_) => true,
            Self::Upstream { status } => *status >= 500,
            _ => false,
        }
    }
}

/// Ordered label phrases. An empty prompt detects nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Prompt(Vec<String>);

impl Prompt {
    pub fn new<I, S>(phrases: I) -> Result<Self, DetectionError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let phrases: Vec<String> = phrases.into_iter().map(Into::into).collect();
        if let Some(i) = phrases.iter().position(|p| p.trim().is_empty()) {
            return Err(DetectionError::validation(format!("prompts[{i}]"), "empty phrase"));
        }
        Ok(Self(phrases))
    }

    pub fn phrases(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<String>> for Prompt {
    type Error = DetectionError;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Prompt::new(v)
    }
}

impl From<Prompt> for Vec<String> {
    fn from(p: Prompt) -> Self {
        p.0
    }
}

/// Jaccard similarity of folded token sets; `0.0` if either side is blank.
pub fn match_score(category_name: &str, phrase: &str) -> f64 {
    let a: BTreeSet<String> = fold_tokens(category_name).into_iter().collect();
    let b: BTreeSet<String> = fold_tokens(phrase).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// One grounded box in pixel coordinates of the scanned image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub label: String,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn new(bbox: BBox, label: impl Into<String>, confidence: f64) -> Self {
        Self { x: bbox.x, y: bbox.y, w: bbox.w, h: bbox.h, label: label.into(), confidence }
    }

    pub fn bbox(&self) -> BBox {
        BBox { x: self.x, y: self.y, w: self.w, h: self.h }
    }

    /// Checks box invariants, naming the failing field under `path`.
    pub fn check(&self, path: &str) -> Result<(), DetectionError> {
        for (name, v) in [("x", self.x), ("y", self.y)] {
            if !v.is_finite() {
                return Err(DetectionError::protocol(format!("{path}.{name}"), "must be finite"));
            }
        }
        for (name, v) in [("w", self.w), ("h", self.h)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DetectionError::protocol(format!("{path}.{name}"), format!("{v} must be > 0")));
            }
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(DetectionError::protocol(
                format!("{path}.confidence"),
                format!("{} outside (0, 1]", self.confidence),
            ));
        }
        if self.label.trim().is_empty() {
            return Err(DetectionError::protocol(format!("{path}.label"), "empty"));
        }
        Ok(())
    }
}

/// Result ordering: confidence descending, then x, y, w, h and label ascending.
pub fn box_order(a: &DetectionBox, b: &DetectionBox) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
        .then_with(|| a.label.cmp(&b.label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub image_ref: String,
    pub boxes: Vec<DetectionBox>,
    pub detector_id: String,
    pub latency_ms: f64,
}

impl DetectionResult {
    /// Validates every box and sorts by [`box_order`]. Idempotent.
    pub fn normalized(mut self) -> Result<Self, DetectionError> {
        for (i, b) in self.boxes.iter().enumerate() {
            b.check(&format!("boxes[{i}]"))?;
        }
        if !(self.latency_ms.is_finite() && self.latency_ms >= 0.0) {
            return Err(DetectionError::protocol("latency_ms", "must be finite and >= 0"));
        }
        if self.detector_id.trim().is_empty() {
            return Err(DetectionError::protocol("detector_id", "empty"));
        }
        self.boxes.sort_by(box_order);
        Ok(self)
    }

    /// Maps boxes from a resized frame back to the source frame.
    pub fn rescaled(mut self, sx: f64, sy: f64) -> Self {
        for b in &mut self.boxes {
            b.x *= sx;
            b.w *= sx;
            b.y *= sy;
            b.h *= sy;
        }
        self
    }

    /// Distinct labels in result order.
    pub fn distinct_labels(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.boxes.iter().map(|b| b.label.as_str()).filter(|l| seen.insert(*l)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_score_examples() {
        assert_eq!(match_score("hot dog", "hot dog"), 1.0);
        assert_eq!(match_score("hot dog", "dog"), 0.5);
        assert_eq!(match_score("pizza", "sushi"), 0.0);
        assert_eq!(match_score("Donut", "donuts"), 1.0);
        assert_eq!(match_score("", "pizza"), 0.0);
    }

    #[test]
    fn prompt_rejects_empty_phrase() {
        assert!(Prompt::new(["pizza", " "]).is_err());
        assert!(Prompt::new(Vec::<String>::new()).unwrap().is_empty());
        assert!(serde_json::from_str::<Prompt>(r#"["a", ""]"#).is_err());
    }

    fn bx(x: f64, conf: f64) -> DetectionBox {
        DetectionBox { x, y: 0.0, w: 1.0, h: 1.0, label: "pizza".into(), confidence: conf }
    }

    #[test]
    fn normalize_sorts_and_is_idempotent() {
        let r = DetectionResult {
            image_ref: "i".into(),
            boxes: vec![bx(5.0, 0.6), bx(1.0, 0.9), bx(0.0, 0.6)],
            detector_id: "d".into(),
            latency_ms: 1.0,
        };
        let once = r.normalized().unwrap();
        let xs: Vec<f64> = once.boxes.iter().map(|b| b.x).collect();
        assert_eq!(xs, vec![1.0, 0.0, 5.0]);
        assert_eq!(once.clone().normalized().unwrap(), once);
    }

    #[test]
    fn box_checks_name_fields() {
        let err = bx(0.0, 1.7).check("boxes[1]").unwrap_err();
        assert_eq!(err, DetectionError::protocol("boxes[1].confidence", "1.7 outside (0, 1]"));
        let mut b = bx(0.0, 0.5);
        b.w = 0.0;
        assert!(matches!(b.check("b"), Err(DetectionError::Protocol { field, .. }) if field == "b.w"));
    }

    #[test]
    fn retriable_classification() {
        assert!(DetectionError::Unavailable("x".into()).is_retriable());
        assert!(DetectionError::Upstream { status: 503 }.is_retriable());
        assert!(!DetectionError::Upstream { status: 400 }.is_retriable());
        assert!(!DetectionError::NotFound(1).is_retriable());
    }
}
