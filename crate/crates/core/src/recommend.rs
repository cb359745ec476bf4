//! Glycemic banding, profile compatibility and lower-GI alternatives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, FoodId, FoodItem, NutrientProfile};
use crate::detection::DetectionResult;
use crate::profiles::{Restriction, UserProfile};

pub const MAX_ALTERNATIVES: usize = 5;
pub const GI_MAX: f64 = 110.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecommendError {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("restriction map: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlycemicClass {
    Low,
    Medium,
    High,
}

impl fmt::Display for GlycemicClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GlycemicClass::Low => "low",
            GlycemicClass::Medium => "medium",
            GlycemicClass::High => "high",
        })
    }
}

/// `gi <= low_max` is low, `gi >= high_min` is high, medium in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlycemicBands {
    pub low_max: f64,
    pub high_min: f64,
}

impl Default for GlycemicBands {
    fn default() -> Self {
        Self { low_max: 55.0, high_min: 70.0 }
    }
}

impl GlycemicBands {
    pub fn validate(&self) -> Result<(), RecommendError> {
        if !(0.0 <= self.low_max && self.low_max < self.high_min && self.high_min <= GI_MAX) {
            return Err(RecommendError::Validation {
                field: "glycemic_bands".into(),
                message: format!("need 0 <= low_max ({}) < high_min ({}) <= {GI_MAX}", self.low_max, self.high_min),
            });
        }
        Ok(())
    }

    pub fn classify(&self, gi: f64) -> Result<GlycemicClass, RecommendError> {
        if !(0.0..=GI_MAX).contains(&gi) {
            return Err(RecommendError::Validation {
                field: "glycemic_index".into(),
                message: format!("{gi} outside [0, {GI_MAX}]"),
            });
        }
        Ok(if gi <= self.low_max {
            GlycemicClass::Low
        } else if gi >= self.high_min {
            GlycemicClass::High
        } else {
            GlycemicClass::Medium
        })
    }
}

/// Classification under the default 55 / 70 bands.
pub fn classify_glycemic(gi: f64) -> Result<GlycemicClass, RecommendError> {
    GlycemicBands::default().classify(gi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Compatible,
    Caution,
    Incompatible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasonCode {
    RestrictionViolation,
    HighGlycemic,
    ModerateGlycemic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reason {
    pub code: ReasonCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compatibility {
    pub verdict: Verdict,
    pub reasons: Vec<Reason>,
}

/// Restriction to forbidden food tags, loaded from a versioned TOML file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestrictionMap {
    forbidden: BTreeMap<Restriction, BTreeSet<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRestrictionMap {
    version: u32,
    restrictions: BTreeMap<Restriction, BTreeSet<String>>,
}

impl RestrictionMap {
    pub const VERSION: u32 = 1;

    /// Every known restriction must be listed; unknown ones are rejected.
    pub fn from_toml(text: &str) -> Result<Self, RecommendError> {
        let raw: RawRestrictionMap = toml::from_str(text).map_err(|e| RecommendError::Config(e.to_string()))?;
        if raw.version != Self::VERSION {
            return Err(RecommendError::Config(format!(
                "unsupported version {} (expected {})",
                raw.version,
                Self::VERSION
            )));
        }
        for r in Restriction::ALL {
            if !raw.restrictions.contains_key(r) {
                return Err(RecommendError::Config(format!("missing restriction {r}")));
            }
        }
        for (r, tags) in &raw.restrictions {
            if tags.iter().any(|t| t.trim().is_empty()) {
                return Err(RecommendError::Config(format!("{r}: empty tag")));
            }
        }
        Ok(Self { forbidden: raw.restrictions })
    }

    /// The map shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_toml(crate::fixtures::RESTRICTIONS).expect("bundled restriction map is valid")
    }

    pub fn forbidden(&self, r: Restriction) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.forbidden.get(&r).unwrap_or(&EMPTY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub food_id: FoodId,
    pub canonical_name: String,
    pub verdict: Compatibility,
    pub glycemic: GlycemicClass,
    pub glycemic_index: f64,
    pub nutrient_summary: NutrientProfile,
    pub alternatives: Vec<FoodId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanAdvice {
    pub recommendations: Vec<Recommendation>,
    pub unrecognized_labels: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Recommender {
    bands: GlycemicBands,
    restrictions: RestrictionMap,
}

impl Recommender {
    pub fn new(bands: GlycemicBands, restrictions: RestrictionMap) -> Result<Self, RecommendError> {
        bands.validate()?;
        Ok(Self { bands, restrictions })
    }

    pub fn bands(&self) -> &GlycemicBands {
        &self.bands
    }

    /// Rule cascade. The verdict comes from the first rule that fires:
    /// a restriction whose forbidden tag the food carries makes it
    /// incompatible; otherwise diabetes with a high or medium GI food is a
    /// caution; otherwise compatible. Reasons list every rule that fired, in
    /// rule order.
    pub fn assess(&self, profile: &UserProfile, food: &FoodItem) -> Compatibility {
        let mut reasons = Vec::new();
        for &r in &profile.restrictions {
            let hits: Vec<&str> =
                self.restrictions.forbidden(r).intersection(&food.tags).map(String::as_str).collect();
            if !hits.is_empty() {
                reasons.push(Reason {
                    code: ReasonCode::RestrictionViolation,
                    message: format!("{} is tagged {}, excluded by {r}", food.canonical_name, hits.join(", ")),
                });
            }
        }
        let restricted = !reasons.is_empty();
        let mut cautioned = false;
        if profile.has_diabetes() {
            // An out-of-range GI is unreachable for validated catalog items.
            let class = self.bands.classify(food.glycemic_index).unwrap_or(GlycemicClass::High);
            let code = match class {
                GlycemicClass::High => Some(ReasonCode::HighGlycemic),
                GlycemicClass::Medium => Some(ReasonCode::ModerateGlycemic),
                GlycemicClass::Low => None,
            };
            if let Some(code) = code {
                cautioned = true;
                reasons.push(Reason {
                    code,
                    message: format!(
                        "{} has a {class} glycemic index ({}), which matters with diabetes",
                        food.canonical_name, food.glycemic_index
                    ),
                });
            }
        }
        let verdict = if restricted {
            Verdict::Incompatible
        } else if cautioned {
            Verdict::Caution
        } else {
            Verdict::Compatible
        };
        Compatibility { verdict, reasons }
    }

    /// Same-category items with strictly lower GI that are compatible for
    /// `profile`, by ascending GI then canonical name, at most five.
    pub fn alternatives(&self, profile: &UserProfile, food: &FoodItem, catalog: &[FoodItem]) -> Vec<FoodId> {
        let mut picks: Vec<&FoodItem> = catalog
            .iter()
            .filter(|c| c.id != food.id && c.category == food.category && c.glycemic_index < food.glycemic_index)
            .filter(|c| self.assess(profile, c).verdict == Verdict::Compatible)
            .collect();
        picks.sort_by(|a, b| {
            a.glycemic_index.total_cmp(&b.glycemic_index).then_with(|| a.canonical_name.cmp(&b.canonical_name))
        });
        picks.into_iter().take(MAX_ALTERNATIVES).map(|c| c.id.clone()).collect()
    }

    pub fn recommend(&self, profile: &UserProfile, food: &FoodItem, catalog: &[FoodItem]) -> Recommendation {
        Recommendation {
            food_id: food.id.clone(),
            canonical_name: food.canonical_name.clone(),
            verdict: self.assess(profile, food),
            glycemic: self.bands.classify(food.glycemic_index).unwrap_or(GlycemicClass::High),
            glycemic_index: food.glycemic_index,
            nutrient_summary: food.nutrients.clone(),
            alternatives: self.alternatives(profile, food, catalog),
        }
    }

    /// One recommendation per distinct food resolved from the detected
    /// labels, in detection order. Labels the catalog cannot resolve are
    /// listed once each under `unrecognized_labels`.
    pub fn recommend_for_scan(&self, profile: &UserProfile, detections: &DetectionResult, catalog: &Catalog) -> ScanAdvice {
        let items = catalog.items();
        let mut advice = ScanAdvice::default();
        let mut seen = BTreeSet::new();
        for label in detections.distinct_labels() {
            match catalog.find_by_label(label) {
                Ok(food) => {
                    if seen.insert(food.id.clone()) {
                        advice.recommendations.push(self.recommend(profile, &food, &items));
                    }
                }
                Err(_) => advice.unrecognized_labels.push(label.to_string()),
            }
        }
        advice
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::coco::BBox;
    use crate::detection::DetectionBox;
    use crate::profiles::Condition;
    use crate::store::MemoryStore;

    fn catalog() -> Catalog {
        let c = Catalog::open(Arc::new(MemoryStore::new())).unwrap();
        c.load_seed_catalog(crate::fixtures::SEED_CATALOG).unwrap();
        c
    }

    fn recommender() -> Recommender {
        Recommender::new(GlycemicBands::default(), RestrictionMap::bundled()).unwrap()
    }

    fn diabetic() -> UserProfile {
        UserProfile::anonymous([Condition::DiabetesType2], [])
    }

    fn scan(labels: &[&str]) -> DetectionResult {
        DetectionResult {
            image_ref: "t".into(),
            boxes: labels
                .iter()
                .map(|l| DetectionBox::new(BBox { x: 0.0, y: 0.0, w: 1.0, h: 1.0 }, *l, 1.0))
                .collect(),
            detector_id: "t".into(),
            latency_ms: 0.0,
        }
    }

    #[test]
    fn glycemic_boundaries() {
        assert_eq!(classify_glycemic(55.0), Ok(GlycemicClass::Low));
        assert_eq!(classify_glycemic(55.5), Ok(GlycemicClass::Medium));
        assert_eq!(classify_glycemic(62.0), Ok(GlycemicClass::Medium));
        assert_eq!(classify_glycemic(70.0), Ok(GlycemicClass::High));
        assert!(classify_glycemic(-1.0).is_err());
        assert!(classify_glycemic(110.5).is_err());
        assert!(classify_glycemic(f64::NAN).is_err());
    }

    #[test]
    fn bands_validate() {
        assert!(GlycemicBands { low_max: 70.0, high_min: 55.0 }.validate().is_err());
        assert!(GlycemicBands { low_max: 50.0, high_min: 60.0 }.validate().is_ok());
    }

    #[test]
    fn restriction_map_checks() {
        assert!(RestrictionMap::bundled().forbidden(Restriction::NutAllergy).contains("contains-nuts"));
        assert!(RestrictionMap::from_toml("version = 2\n[restrictions]\n").is_err());
        assert!(RestrictionMap::from_toml("version = 1\n[restrictions]\nnut-allergy = [\"contains-nuts\"]\n").is_err());
        let unknown = format!("{}\nkosher = [\"contains-pork\"]\n", crate::fixtures::RESTRICTIONS);
        assert!(RestrictionMap::from_toml(&unknown).is_err());
    }

    #[test]
    fn cascade_examples() {
        let r = recommender();
        let cat = catalog();
        let cake = cat.find_by_label("cake").unwrap();
        let nut = UserProfile::anonymous([], [Restriction::NutAllergy]);
        let c = r.assess(&nut, &cake);
        assert_eq!(c.verdict, Verdict::Incompatible);
        assert_eq!(c.reasons[0].code, ReasonCode::RestrictionViolation);

        let pizza = cat.find_by_label("pizza").unwrap();
        let c = r.assess(&diabetic(), &pizza);
        assert_eq!(c.verdict, Verdict::Caution);
        assert_eq!(c.reasons.iter().map(|r| r.code).collect::<Vec<_>>(), vec![ReasonCode::HighGlycemic]);

        let c = r.assess(&diabetic(), &cake);
        assert_eq!((c.verdict, c.reasons[0].code), (Verdict::Caution, ReasonCode::ModerateGlycemic));

        let plain = UserProfile::anonymous([], []);
        for item in cat.items() {
            assert_eq!(r.assess(&plain, &item), Compatibility { verdict: Verdict::Compatible, reasons: vec![] });
        }
    }

    #[test]
    fn both_rules_list_both_reasons() {
        let r = recommender();
        let pizza = catalog().find_by_label("pizza").unwrap();
        let p = UserProfile::anonymous([Condition::DiabetesType1], [Restriction::GlutenFree]);
        let c = r.assess(&p, &pizza);
        assert_eq!(c.verdict, Verdict::Incompatible);
        let codes: Vec<_> = c.reasons.iter().map(|r| r.code).collect();
        assert_eq!(codes, vec![ReasonCode::RestrictionViolation, ReasonCode::HighGlycemic]);
    }

    #[test]
    fn diabetic_pizza_scan() {
        let advice = recommender().recommend_for_scan(&diabetic(), &scan(&["pizza"]), &catalog());
        assert_eq!(advice.recommendations.len(), 1);
        let rec = &advice.recommendations[0];
        assert_eq!(rec.verdict.verdict, Verdict::Caution);
        assert_eq!(rec.glycemic, GlycemicClass::High);
        // Meals below GI 80: sandwich (45), hot dog (52).
        assert_eq!(rec.alternatives, vec![FoodId::from("sandwich"), FoodId::from("hot-dog")]);
    }

    #[test]
    fn restrictions_prune_alternatives() {
        let p = UserProfile::anonymous([Condition::DiabetesType2], [Restriction::Vegetarian]);
        let advice = recommender().recommend_for_scan(&p, &scan(&["pizza"]), &catalog());
        assert!(advice.recommendations[0].alternatives.is_empty());
    }

    #[test]
    fn empty_duplicate_and_unknown_labels() {
        let r = recommender();
        let cat = catalog();
        assert_eq!(r.recommend_for_scan(&diabetic(), &scan(&[]), &cat), ScanAdvice::default());
        let advice = r.recommend_for_scan(&diabetic(), &scan(&["banana", "bananas", "banana", "sushi", "sushi"]), &cat);
        assert_eq!(advice.recommendations.len(), 1);
        assert_eq!(advice.recommendations[0].food_id, FoodId::from("banana"));
        assert_eq!(advice.unrecognized_labels, vec!["sushi".to_string()]);
    }

    #[test]
    fn aliases_resolve_to_one_food() {
        let advice = recommender().recommend_for_scan(&diabetic(), &scan(&["donut", "doughnut"]), &catalog());
        assert_eq!(advice.recommendations.len(), 1);
        // Baked below 76: cake is 67 (medium) so it is not compatible for a diabetic.
        assert!(advice.recommendations[0].alternatives.is_empty());
    }
}
