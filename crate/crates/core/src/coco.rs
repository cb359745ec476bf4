//! COCO object-detection annotations: parse, validate, filter to food, split,
//! and tally.
//!
//! Only the detection subset of the schema is read: `images`, `annotations`
//! (`bbox` as `[x, y, width, height]`) and `categories` (with
//! `supercategory`). Other keys, including segmentations, are ignored.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Deserializer, Serialize};

use crate::rng::SplitMix64;

pub const FOOD_SUPERCATEGORY: &str = "food";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub area: f64,
    #[serde(default, deserialize_with = "flag", serialize_with = "flag_out")]
    pub iscrowd: bool,
}

fn flag<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Bool(bool),
        Int(u64),
    }
    match Raw::deserialize(d)? {
        Raw::Bool(b) => Ok(b),
        Raw::Int(0) => Ok(false),
        Raw::Int(1) => Ok(true),
        Raw::Int(n) => Err(serde::de::Error::custom(format!("iscrowd must be 0 or 1, got {n}"))),
    }
}

fn flag_out<S: serde::Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(default)]
    pub supercategory: String,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CocoError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("schema error at byte {offset}: {message}")]
    Schema { offset: usize, message: String },
    #[error("annotation {annotation_id} references missing image {image_id}")]
    DanglingImage { annotation_id: u64, image_id: u64 },
    #[error("annotation {annotation_id} references missing category {category_id}")]
    DanglingCategory { annotation_id: u64, category_id: u64 },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("image {id}: {reason}")]
    InvalidImage { id: u64, reason: String },
    #[error("category {id}: name is empty")]
    EmptyCategoryName { id: u64 },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

#[derive(Deserialize)]
struct RawDataset {
    #[serde(default)]
    images: Vec<ImageRecord>,
    #[serde(default)]
    annotations: Vec<Annotation>,
    #[serde(default)]
    categories: Vec<Category>,
}

#[derive(Serialize)]
struct RawDatasetRef<'a> {
    images: &'a [ImageRecord],
    annotations: &'a [Annotation],
    categories: &'a [Category],
}

/// Immutable, referentially checked dataset.
///
/// Image and category ids are unique; every annotation resolves. Annotation
/// ids are not required to be unique here (nothing references them);
/// [`validate`] reports duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoDataset {
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
    image_pos: HashMap<u64, usize>,
    category_pos: HashMap<u64, usize>,
    by_image: HashMap<u64, Vec<usize>>,
}

impl CocoDataset {
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
        categories: Vec<Category>,
    ) -> Result<Self, CocoError> {
        let mut image_pos = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if img.width == 0 || img.height == 0 {
                return Err(CocoError::InvalidImage {
                    id: img.id,
                    reason: format!("dimensions {}x{} must be positive", img.width, img.height),
                });
            }
            if image_pos.insert(img.id, i).is_some() {
                return Err(CocoError::DuplicateId { kind: "image", id: img.id });
            }
        }
        let mut category_pos = HashMap::with_capacity(categories.len());
        for (i, cat) in categories.iter().enumerate() {
            if cat.name.trim().is_empty() {
                return Err(CocoError::EmptyCategoryName { id: cat.id });
            }
            if category_pos.insert(cat.id, i).is_some() {
                return Err(CocoError::DuplicateId { kind: "category", id: cat.id });
            }
        }
        let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, ann) in annotations.iter().enumerate() {
            if !image_pos.contains_key(&ann.image_id) {
                return Err(CocoError::DanglingImage { annotation_id: ann.id, image_id: ann.image_id });
            }
            if !category_pos.contains_key(&ann.category_id) {
                return Err(CocoError::DanglingCategory {
                    annotation_id: ann.id,
                    category_id: ann.category_id,
                });
            }
            by_image.entry(ann.image_id).or_default().push(i);
        }
        Ok(Self { images, annotations, categories, image_pos, category_pos, by_image })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.image_pos.get(&id).map(|&i| &self.images[i])
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.category_pos.get(&id).map(|&i| &self.categories[i])
    }

    pub fn annotations_of(&self, image_id: u64) -> impl Iterator<Item = &Annotation> {
        self.by_image
            .get(&image_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.annotations[i])
    }

    pub fn image_ids(&self) -> Vec<u64> {
        self.images.iter().map(|i| i.id).collect()
    }

    pub fn is_food(&self, ann: &Annotation) -> bool {
        self.category(ann.category_id)
            .is_some_and(|c| c.supercategory == FOOD_SUPERCATEGORY)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RawDatasetRef {
            images: &self.images,
            annotations: &self.annotations,
            categories: &self.categories,
        })
        .expect("dataset serializes")
    }
}

/// Byte offset of a 1-based (line, column) position as reported by serde_json.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn parse_coco(document: &str) -> Result<CocoDataset, CocoError> {
    let raw: RawDataset = serde_json::from_str(document).map_err(|e| {
        let offset = byte_offset(document, e.line(), e.column());
        let message = e.to_string();
        match e.classify() {
            serde_json::error::Category::Data => CocoError::Schema { offset, message },
            _ => CocoError::Syntax { offset, message },
        }
    })?;
    CocoDataset::new(raw.images, raw.annotations, raw.categories)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingKind {
    BboxOutOfBounds,
    NonPositiveArea,
    ZeroDimensionBox,
    DuplicateAnnotationId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub annotation_id: u64,
    pub kind: FindingKind,
    pub detail: String,
}

/// Data-quality findings; an empty report means clean.
pub fn validate(dataset: &CocoDataset) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut seen = HashSet::new();
    for ann in &dataset.annotations {
        let b = ann.bbox;
        if !seen.insert(ann.id) {
            findings.push(Finding {
                annotation_id: ann.id,
                kind: FindingKind::DuplicateAnnotationId,
                detail: format!("annotation id {} appears more than once", ann.id),
            });
        }
        if !(b.w > 0.0 && b.h > 0.0) {
            findings.push(Finding {
                annotation_id: ann.id,
                kind: FindingKind::ZeroDimensionBox,
                detail: format!("box size {}x{}", b.w, b.h),
            });
        }
        if ann.area.is_nan() || ann.area <= 0.0 {
            findings.push(Finding {
                annotation_id: ann.id,
                kind: FindingKind::NonPositiveArea,
                detail: format!("area {}", ann.area),
            });
        }
        let img = dataset.image(ann.image_id).expect("checked at construction");
        let (iw, ih) = (f64::from(img.width), f64::from(img.height));
        if b.x < 0.0 || b.y < 0.0 || b.x + b.w > iw || b.y + b.h > ih {
            findings.push(Finding {
                annotation_id: ann.id,
                kind: FindingKind::BboxOutOfBounds,
                detail: format!(
                    "bbox [{}, {}, {}, {}] exceeds image {} ({}x{})",
                    b.x, b.y, b.w, b.h, img.id, img.width, img.height
                ),
            });
        }
    }
    findings
}

/// Images with at least one food annotation, their food annotations, and all
/// food categories. Input order is preserved.
pub fn filter_food(dataset: &CocoDataset) -> CocoDataset {
    let categories: Vec<Category> = dataset
        .categories
        .iter()
        .filter(|c| c.supercategory == FOOD_SUPERCATEGORY)
        .cloned()
        .collect();
    let annotations: Vec<Annotation> =
        dataset.annotations.iter().filter(|a| dataset.is_food(a)).cloned().collect();
    let keep: HashSet<u64> = annotations.iter().map(|a| a.image_id).collect();
    let images = dataset.images.iter().filter(|i| keep.contains(&i.id)).cloned().collect();
    CocoDataset::new(images, annotations, categories).expect("subset of a valid dataset")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, CocoError> {
        let spec = Self { train, val, test, seed };
        spec.check()?;
        Ok(spec)
    }

    /// 70 / 15 / 15.
    pub fn standard(seed: u64) -> Self {
        Self { train: 0.70, val: 0.15, test: 0.15, seed }
    }

    pub fn check(&self) -> Result<(), CocoError> {
        for (name, f) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(CocoError::InvalidSplit(format!("{name} fraction {f} outside [0, 1]")));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CocoError::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Bucket sizes `(train, val, test)` for `n` items: val and test get
    /// `floor(fraction * n)`, train takes the remainder. A 1e-9 slack absorbs
    /// products like `0.29 * 100 = 28.999…`.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let bucket = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let val = bucket(self.val).min(n);
        let test = bucket(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// Deterministic split: SplitMix64(seed) Fisher–Yates shuffle, then the first
/// `train` ids, the next `val`, and the rest to `test`.
pub fn split(ids: &[u64], spec: &SplitSpec) -> Result<SplitResult, CocoError> {
    spec.check()?;
    let mut seen = HashSet::with_capacity(ids.len());
    if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(CocoError::DuplicateId { kind: "split input", id: *dup });
    }
    let mut order = ids.to_vec();
    SplitMix64::new(spec.seed).shuffle(&mut order);
    let (n_train, n_val, _) = spec.sizes(order.len());
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitResult { train: order, val, test })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CategoryCount {
    pub annotations: u64,
    pub images: u64,
    pub crowd_annotations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub per_category: BTreeMap<String, CategoryCount>,
    pub total: CategoryCount,
}

pub fn dataset_stats(dataset: &CocoDataset) -> DatasetStats {
    let mut per_category: BTreeMap<String, CategoryCount> = dataset
        .categories
        .iter()
        .map(|c| (c.name.clone(), CategoryCount::default()))
        .collect();
    let mut images_per: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    let mut all_images = BTreeSet::new();
    let mut total = CategoryCount::default();
    for ann in &dataset.annotations {
        let name = &dataset.category(ann.category_id).expect("checked").name;
        let entry = per_category.entry(name.clone()).or_default();
        entry.annotations += 1;
        total.annotations += 1;
        if ann.iscrowd {
            entry.crowd_annotations += 1;
            total.crowd_annotations += 1;
        }
        images_per.entry(name).or_default().insert(ann.image_id);
        all_images.insert(ann.image_id);
    }
    for (name, ids) in images_per {
        per_category.get_mut(name).expect("inserted").images = ids.len() as u64;
    }
    total.images = all_images.len() as u64;
    DatasetStats { per_category, total }
}

/// Parses an id-list file: one unsigned integer per line, blank lines ignored.
pub fn parse_id_list(text: &str) -> Result<Vec<u64>, CocoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u64>().map_err(|e| CocoError::Schema {
                offset: text.lines().take(i).map(|l| l.len() + 1).sum(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

pub fn format_id_list(ids: &[u64]) -> String {
    let mut out = String::with_capacity(ids.len() * 6);
    for id in ids {
        out.push_str(&id.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = include_str!("../../../fixtures/coco/mini.json");

    fn img(id: u64, w: u32, h: u32) -> ImageRecord {
        ImageRecord { id, file_name: format!("{id}.jpg"), width: w, height: h }
    }

    fn ann(id: u64, image_id: u64, category_id: u64, bbox: [f64; 4], area: f64) -> Annotation {
        Annotation { id, image_id, category_id, bbox: bbox.into(), area, iscrowd: false }
    }

    fn cat(id: u64, name: &str, sup: &str) -> Category {
        Category { id, name: name.into(), supercategory: sup.into() }
    }

    #[test]
    fn mini_fixture_counts() {
        let d = parse_coco(MINI).unwrap();
        assert_eq!((d.images().len(), d.annotations().len()), (3, 5));
        assert!(validate(&d).is_empty());
    }

    #[test]
    fn dangling_image_reference() {
        let doc = r#"{"images":[{"id":1,"file_name":"a.jpg","width":10,"height":10}],
            "annotations":[{"id":7,"image_id":99,"category_id":1,"bbox":[0,0,1,1],"area":1}],
            "categories":[{"id":1,"name":"pizza","supercategory":"food"}]}"#;
        assert_eq!(
            parse_coco(doc).unwrap_err(),
            CocoError::DanglingImage { annotation_id: 7, image_id: 99 }
        );
    }

    #[test]
    fn dangling_category_reference() {
        let doc = r#"{"images":[{"id":1,"file_name":"a.jpg","width":10,"height":10}],
            "annotations":[{"id":7,"image_id":1,"category_id":5,"bbox":[0,0,1,1],"area":1}],
            "categories":[]}"#;
        assert!(matches!(parse_coco(doc), Err(CocoError::DanglingCategory { category_id: 5, .. })));
    }

    #[test]
    fn empty_arrays_are_valid() {
        let d = parse_coco(r#"{"images":[],"annotations":[],"categories":[]}"#).unwrap();
        assert!(d.images().is_empty() && d.annotations().is_empty());
        assert_eq!(dataset_stats(&d), DatasetStats::default());
    }

    #[test]
    fn syntax_error_has_byte_offset() {
        let doc = "{\"images\": [\n  {\"id\": 1,,}\n]}";
        match parse_coco(doc) {
            Err(CocoError::Syntax { offset, .. }) => assert_eq!(&doc[offset..offset + 1], ","),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_error_is_schema_error() {
        let doc = r#"{"images":[{"id":"one","file_name":"a","width":1,"height":1}]}"#;
        assert!(matches!(parse_coco(doc), Err(CocoError::Schema { .. })));
    }

    #[test]
    fn duplicate_image_ids_rejected() {
        let err = CocoDataset::new(vec![img(1, 5, 5), img(1, 6, 6)], vec![], vec![]).unwrap_err();
        assert_eq!(err, CocoError::DuplicateId { kind: "image", id: 1 });
    }

    #[test]
    fn iscrowd_accepts_int_and_bool() {
        let doc = r#"{"images":[{"id":1,"file_name":"a","width":9,"height":9}],
            "annotations":[{"id":1,"image_id":1,"category_id":1,"bbox":[0,0,1,1],"area":1,"iscrowd":1},
                           {"id":2,"image_id":1,"category_id":1,"bbox":[0,0,1,1],"area":1,"iscrowd":false}],
            "categories":[{"id":1,"name":"cake","supercategory":"food"}]}"#;
        let d = parse_coco(doc).unwrap();
        assert!(d.annotations()[0].iscrowd);
        assert!(!d.annotations()[1].iscrowd);
        assert_eq!(dataset_stats(&d).total.crowd_annotations, 1);
    }

    #[test]
    fn validate_findings() {
        let d = CocoDataset::new(
            vec![img(1, 512, 512)],
            vec![
                ann(1, 1, 1, [600.0, 10.0, 50.0, 50.0], 2500.0),
                ann(2, 1, 1, [0.0, 0.0, 10.0, 10.0], 0.0),
                ann(3, 1, 1, [0.0, 0.0, 0.0, 10.0], 1.0),
                ann(3, 1, 1, [0.0, 0.0, 5.0, 5.0], 25.0),
            ],
            vec![cat(1, "pizza", "food")],
        )
        .unwrap();
        let kinds: Vec<(u64, FindingKind)> =
            validate(&d).into_iter().map(|f| (f.annotation_id, f.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (1, FindingKind::BboxOutOfBounds),
                (2, FindingKind::NonPositiveArea),
                (3, FindingKind::ZeroDimensionBox),
                (3, FindingKind::DuplicateAnnotationId),
            ]
        );
    }

    #[test]
    fn filter_keeps_food_images() {
        let d = parse_coco(MINI).unwrap();
        let f = filter_food(&d);
        assert_eq!(f.images().len(), 2);
        assert!(f.annotations().iter().all(|a| f.is_food(a)));
        assert!(f.categories().iter().all(|c| c.supercategory == FOOD_SUPERCATEGORY));
        assert_eq!(filter_food(&f), f);
    }

    #[test]
    fn filter_without_food_is_empty() {
        let d = CocoDataset::new(
            vec![img(1, 10, 10)],
            vec![ann(1, 1, 1, [0.0, 0.0, 2.0, 2.0], 4.0)],
            vec![cat(1, "car", "vehicle")],
        )
        .unwrap();
        let f = filter_food(&d);
        assert!(f.images().is_empty() && f.annotations().is_empty() && f.categories().is_empty());
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::standard(1);
        assert_eq!(spec.sizes(10_596), (7_418, 1_589, 1_589));
        assert_eq!(spec.sizes(10), (8, 1, 1));
        assert_eq!(spec.sizes(0), (0, 0, 0));
        assert_eq!(SplitSpec::new(0.42, 0.29, 0.29, 0).unwrap().sizes(100), (42, 29, 29));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let ids: Vec<u64> = (100..200).collect();
        let spec = SplitSpec::standard(42);
        let a = split(&ids, &spec).unwrap();
        assert_eq!(a, split(&ids, &spec).unwrap());
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (70, 15, 15));
        let mut all: Vec<u64> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_ne!(a, split(&ids, &SplitSpec::standard(43)).unwrap());
    }

    #[test]
    fn invalid_split_specs() {
        assert!(SplitSpec::new(0.7, 0.2, 0.2, 0).is_err());
        assert!(SplitSpec::new(1.2, -0.1, -0.1, 0).is_err());
        assert!(split(&[1, 2, 1], &SplitSpec::standard(0)).is_err());
    }

    #[test]
    fn stats_hand_tally_of_mini_fixture() {
        let s = dataset_stats(&parse_coco(MINI).unwrap());
        let one = CategoryCount { annotations: 1, images: 1, crowd_annotations: 0 };
        for name in ["pizza", "carrot", "banana", "donut", "car"] {
            assert_eq!(s.per_category[name], one, "{name}");
        }
        assert_eq!(s.per_category["cake"], CategoryCount::default());
        assert_eq!(s.total, CategoryCount { annotations: 5, images: 3, crowd_annotations: 0 });
    }

    #[test]
    fn id_lists() {
        assert_eq!(parse_id_list("3\n1\n\n2\n").unwrap(), vec![3, 1, 2]);
        assert_eq!(format_id_list(&[3, 1, 2]), "3\n1\n2\n");
        assert!(parse_id_list("1\nx\n").is_err());
    }
}
