//! Survey sample sizing, detection metrics, Net Promoter Score and Likert
//! aggregation.
//!
//! Rounding is half-up on exact integer arithmetic wherever the inputs are
//! counts, so reported figures never depend on binary floating point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("degenerate proportion p = {p}: p(1 - p) is zero")]
    DegenerateProportion { p: f64 },
    #[error("undefined metric: {}", .0.join(", "))]
    UndefinedMetric(Vec<&'static str>),
    #[error("empty sample")]
    EmptySample,
    #[error("responses line {line}: {message}")]
    Record { line: usize, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> AnalyticsError {
    AnalyticsError::Validation { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeSpec {
    pub z: f64,
    pub p: f64,
    pub e: f64,
}

impl SampleSizeSpec {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(invalid("z", format!("{} must be > 0", self.z)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid("p", format!("{} outside [0, 1]", self.p)));
        }
        if !(self.e > 0.0 && self.e < 1.0) {
            return Err(invalid("e", format!("{} outside (0, 1)", self.e)));
        }
        Ok(())
    }
}

/// `ceil(z² p (1 - p) / e²)`. A slack of 1e-9 keeps float noise on a
/// quotient that is mathematically an integer from rounding it up.
pub fn sample_size(spec: SampleSizeSpec) -> Result<u64, AnalyticsError> {
    spec.validate()?;
    let variance = spec.p * (1.0 - spec.p);
    if variance == 0.0 {
        return Err(AnalyticsError::DegenerateProportion { p: spec.p });
    }
    let n = spec.z * spec.z * variance / (spec.e * spec.e);
    Ok((n - 1e-9).ceil().max(1.0) as u64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.tn += rhs.tn;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

/// Ratios in `[0, 1]`, with the counts they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

/// `num / den` as a percentage with two decimals, rounded half-up in integer
/// arithmetic. `den` must be nonzero.
pub fn percent(num: u64, den: u64) -> String {
    let (num, den) = (u128::from(num), u128::from(den));
    let hundredths = (2 * num * 10_000 + den) / (2 * den);
    format!("{}.{:02}%", hundredths / 100, hundredths % 100)
}

impl MetricReport {
    /// `[("precision", "90.79%"), ...]` in a fixed order, rounded from the
    /// exact fractions rather than the floating-point ratios.
    pub fn rendered(&self) -> [(&'static str, String); 4] {
        let c = self.counts;
        [
            ("precision", percent(c.tp, c.tp + c.fp)),
            ("accuracy", percent(c.tp + c.tn, c.total())),
            ("recall", percent(c.tp, c.tp + c.fn_)),
            ("f1", percent(2 * c.tp, 2 * c.tp + c.fp + c.fn_)),
        ]
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, value)) in self.rendered().iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{name:<10}{value}")?;
        }
        Ok(())
    }
}

/// Precision, recall, accuracy and F1. Every ratio with a zero denominator
/// is named in the error. F1 is undefined when precision or recall is, and
/// when both are zero.
pub fn compute_metrics(c: ConfusionCounts) -> Result<MetricReport, AnalyticsError> {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let accuracy = ratio(c.tp + c.tn, c.total());
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let mut undefined = Vec::new();
    for (name, value) in [("precision", precision), ("recall", recall), ("accuracy", accuracy), ("f1", f1)] {
        if value.is_none() {
            undefined.push(name);
        }
    }
    match (precision, recall, accuracy, f1) {
        (Some(precision), Some(recall), Some(accuracy), Some(f1)) => {
            Ok(MetricReport { precision, recall, accuracy, f1, counts: c })
        }
        _ => Err(AnalyticsError::UndefinedMetric(undefined)),
    }
}

/// `floor(num / den * 10^decimals + 1/2) / 10^decimals`, exactly.
fn round_ratio(num: i64, den: u64, decimals: u32) -> f64 {
    let scale = 10_i128.pow(decimals);
    let den = den as i128;
    let q = (2 * num as i128 * scale + den).div_euclid(2 * den);
    q as f64 / scale as f64
}

pub const NPS_MAX_RATING: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpsBreakdown {
    pub promoters: u64,
    pub passives: u64,
    pub detractors: u64,
    /// Rounded half-up to one decimal.
    pub score: f64,
    pub raw_score: f64,
}

/// Net Promoter Score on a 0–5 scale: 0–2 detractor, 3 passive, 4–5 promoter.
pub fn nps(ratings: &[u8]) -> Result<NpsBreakdown, AnalyticsError> {
    if ratings.is_empty() {
        return Err(AnalyticsError::EmptySample);
    }
    let (mut promoters, mut passives, mut detractors) = (0u64, 0u64, 0u64);
    for (i, &r) in ratings.iter().enumerate() {
        match r {
            0..=2 => detractors += 1,
            3 => passives += 1,
            4 | 5 => promoters += 1,
            _ => return Err(invalid(format!("ratings[{i}]"), format!("{r} outside 0..={NPS_MAX_RATING}"))),
        }
    }
    let n = ratings.len() as u64;
    let diff = promoters as i64 - detractors as i64;
    Ok(NpsBreakdown {
        promoters,
        passives,
        detractors,
        score: round_ratio(100 * diff, n, 1),
        raw_score: 100.0 * diff as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub min: u8,
    pub max: u8,
}

impl Scale {
    pub const LIKERT: Scale = Scale { min: 1, max: 5 };
    pub const NPS: Scale = Scale { min: 0, max: NPS_MAX_RATING };

    pub fn contains(&self, rating: u8) -> bool {
        (self.min..=self.max).contains(&rating)
    }
}

/// The 0–5 recommendation item scored by [`nps`].
pub const NPS_ITEM: &str = "nps";

/// Likert items in questionnaire order.
pub const LIKERT_ITEMS: [&str; 7] = [
    "user-friendliness",
    "suggestion-accuracy",
    "recognition-speed",
    "personalized-guidance",
    "privacy-trust",
    "contentment",
    "recommend-likelihood",
];

/// Declared scale of a survey item, `None` for unknown ids.
pub fn item_scale(item_id: &str) -> Option<Scale> {
    if item_id == NPS_ITEM {
        Some(Scale::NPS)
    } else if LIKERT_ITEMS.contains(&item_id) {
        Some(Scale::LIKERT)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyResponse {
    pub respondent_id: String,
    pub item_id: String,
    pub rating: u8,
}

impl SurveyResponse {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if self.respondent_id.trim().is_empty() {
            return Err(invalid("respondent_id", "empty"));
        }
        let scale = item_scale(&self.item_id)
            .ok_or_else(|| invalid("item_id", format!("unknown item {:?}", self.item_id)))?;
        if !scale.contains(self.rating) {
            return Err(invalid(
                "rating",
                format!("{} outside {}..={} for {}", self.rating, scale.min, scale.max, self.item_id),
            ));
        }
        Ok(())
    }
}

/// One validated response per line; blank lines skipped.
pub fn parse_responses(document: &str) -> Result<Vec<SurveyResponse>, AnalyticsError> {
    let mut out = Vec::new();
    for (i, line) in document.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = |message: String| AnalyticsError::Record { line: i + 1, message };
        let response: SurveyResponse = serde_json::from_str(line).map_err(|e| record(e.to_string()))?;
        response.validate().map_err(|e| record(e.to_string()))?;
        out.push(response);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub responses: u64,
    /// Rounded half-up to two decimals.
    pub mean: f64,
    pub histogram: BTreeMap<u8, u64>,
    /// Fraction of responses rating 4 or higher.
    pub satisfaction_share: f64,
}

/// Per-item mean, histogram and satisfaction share. Items with no responses
/// are absent. The NPS item is summarized too, on its own scale.
pub fn likert_summary(responses: &[SurveyResponse]) -> Result<BTreeMap<String, ItemSummary>, AnalyticsError> {
    let mut buckets: BTreeMap<&str, BTreeMap<u8, u64>> = BTreeMap::new();
    for r in responses {
        r.validate()?;
        *buckets.entry(&r.item_id).or_default().entry(r.rating).or_default() += 1;
    }
    Ok(buckets
        .into_iter()
        .map(|(item, histogram)| {
            let n: u64 = histogram.values().sum();
            let sum: u64 = histogram.iter().map(|(&r, &c)| u64::from(r) * c).sum();
            let satisfied: u64 = histogram.range(4..).map(|(_, &c)| c).sum();
            let summary = ItemSummary {
                responses: n,
                mean: round_ratio(sum as i64, n, 2),
                histogram,
                satisfaction_share: satisfied as f64 / n as f64,
            };
            (item.to_string(), summary)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySummary {
    pub respondents: u64,
    pub items: BTreeMap<String, ItemSummary>,
    pub nps: Option<NpsBreakdown>,
}

/// [`likert_summary`] plus [`nps`] over the NPS item, if any was answered.
pub fn survey_summary(responses: &[SurveyResponse]) -> Result<SurveySummary, AnalyticsError> {
    let items = likert_summary(responses)?;
    let ratings: Vec<u8> = responses.iter().filter(|r| r.item_id == NPS_ITEM).map(|r| r.rating).collect();
    let nps = if ratings.is_empty() { None } else { Some(nps(&ratings)?) };
    let respondents = responses.iter().map(|r| r.respondent_id.as_str()).collect::<BTreeSet<_>>().len() as u64;
    Ok(SurveySummary { respondents, items, nps })
}
