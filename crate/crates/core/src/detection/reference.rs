use super::{match_score, DetectionBox, DetectionError, DetectionResult, Prompt};
use crate::coco::CocoDataset;

pub const REFERENCE_DETECTOR_ID: &str = "reference-grounding-v1";

/// Grounds prompt phrases against the ground-truth annotations of
/// `image_id`: each annotation scores the best phrase (first wins on ties)
/// and is emitted as a box when that score exceeds `threshold`.
pub fn detect_reference(
    dataset: &CocoDataset,
    image_id: u64,
    prompt: &Prompt,
    threshold: f64,
) -> Result<DetectionResult, DetectionError> {
    if dataset.image(image_id).is_none() {
        return Err(DetectionError::NotFound(image_id));
    }
    if !threshold.is_finite() {
        return Err(DetectionError::validation("threshold", "must be finite"));
    }
    let mut boxes = Vec::new();
    for ann in dataset.annotations_of(image_id) {
        let Some(category) = dataset.category(ann.category_id) else { continue };
        let mut best: Option<(&str, f64)> = None;
        for phrase in prompt.phrases() {
            let s = match_score(&category.name, phrase);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((phrase, s));
            }
        }
        if let Some((label, score)) = best {
            if score > threshold && ann.bbox.w > 0.0 && ann.bbox.h > 0.0 {
                boxes.push(DetectionBox::new(ann.bbox, label, score));
            }
        }
    }
    DetectionResult {
        image_ref: format!("coco:{image_id}"),
        boxes,
        detector_id: REFERENCE_DETECTOR_ID.to_string(),
        latency_ms: 0.0,
    }
    .normalized()
}
