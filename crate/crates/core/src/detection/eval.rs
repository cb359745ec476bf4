use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{detect_reference, DetectionError, DetectionResult, Prompt};
use crate::analytics::ConfusionCounts;
use crate::coco::{CocoDataset, FOOD_SUPERCATEGORY};
use crate::text::fold_key;

/// Image-level outcome. When several apply, the first in declaration order
/// wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TruePositive,
    FalseNegative,
    FalsePositive,
    TrueNegative,
}

/// Classifies one image:
/// * TP when some box label folds to a food category present in its ground truth;
/// * FN when it has food ground truth and no box matches;
/// * FP when it has no food ground truth and any box was emitted;
/// * TN otherwise.
pub fn image_outcome(dataset: &CocoDataset, image_id: u64, result: &DetectionResult) -> Outcome {
    let food: BTreeSet<String> = dataset
        .annotations_of(image_id)
        .filter_map(|a| dataset.category(a.category_id))
        .filter(|c| c.supercategory == FOOD_SUPERCATEGORY)
        .map(|c| fold_key(&c.name))
        .collect();
    let hit = result.boxes.iter().any(|b| food.contains(&fold_key(&b.label)));
    match (hit, food.is_empty(), result.boxes.is_empty()) {
        (true, _, _) => Outcome::TruePositive,
        (false, false, _) => Outcome::FalseNegative,
        (false, true, false) => Outcome::FalsePositive,
        (false, true, true) => Outcome::TrueNegative,
    }
}

/// Runs `detect` over every id in `split_ids` with the prompt from
/// `prompt_builder` and tallies image outcomes. Ids missing from the dataset
/// are rejected before any detection runs.
pub fn evaluate_detector<P, D>(
    dataset: &CocoDataset,
    split_ids: &[u64],
    prompt_builder: P,
    mut detect: D,
) -> Result<ConfusionCounts, DetectionError>
where
    P: Fn(&CocoDataset, u64) -> Prompt,
    D: FnMut(u64, &Prompt) -> Result<DetectionResult, DetectionError>,
{
    if let Some(missing) = split_ids.iter().find(|&&id| dataset.image(id).is_none()) {
        return Err(DetectionError::validation("split_ids", format!("image {missing} not in dataset")));
    }
    let mut counts = ConfusionCounts::default();
    for &id in split_ids {
        let result = detect(id, &prompt_builder(dataset, id))?;
        match image_outcome(dataset, id, &result) {
            Outcome::TruePositive => counts.tp += 1,
            Outcome::FalseNegative => counts.fn_ += 1,
            Outcome::FalsePositive => counts.fp += 1,
            Outcome::TrueNegative => counts.tn += 1,
        }
    }
    Ok(counts)
}

/// Every food category name, in category id order.
pub fn food_category_prompt(dataset: &CocoDataset) -> Prompt {
    let mut cats: Vec<_> = dataset.categories().iter().filter(|c| c.supercategory == FOOD_SUPERCATEGORY).collect();
    cats.sort_by_key(|c| c.id);
    Prompt::new(cats.into_iter().map(|c| c.name.clone())).expect("category names are nonempty")
}

/// [`evaluate_detector`] with the reference detector and the all-food prompt.
pub fn evaluate_reference(
    dataset: &CocoDataset,
    split_ids: &[u64],
    threshold: f64,
) -> Result<ConfusionCounts, DetectionError> {
    let prompt = food_category_prompt(dataset);
    evaluate_detector(dataset, split_ids, |_, _| prompt.clone(), |id, p| detect_reference(dataset, id, p, threshold))
}
