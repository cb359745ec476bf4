//! Food catalog: validated items with nutrient profiles and glycemic indices,
//! looked up by detected label.
//!
//! The on-disk exchange format is one JSON object per line (see
//! `docs/catalog-format.md`). Persistence goes through a [`KvStore`]
//! namespace; the in-memory index is rebuilt from it on open.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::store::{KvStore, Op, StoreError};
use crate::text::fold_key;

const NAMESPACE: &str = "foods";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FoodId(pub String);

impl fmt::Display for FoodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FoodId {
    fn from(s: &str) -> Self {
        FoodId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassUnit {
    #[serde(rename = "mg")]
    Milligram,
    #[serde(rename = "µg", alias = "ug", alias = "mcg")]
    Microgram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Micronutrient {
    pub amount: f64,
    pub unit: MassUnit,
}

/// Nutrients per 100 g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NutrientProfile {
    pub calories_kcal_per_100g: f64,
    pub protein_g: f64,
    pub carbs_g: f64,
    pub fat_g: f64,
    pub fiber_g: f64,
    pub sugars_g: f64,
    #[serde(default)]
    pub micronutrients: BTreeMap<String, Micronutrient>,
}

/// A failed invariant, naming the field that broke it.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

fn check_range(field: &str, value: f64, lo: f64, hi: f64) -> Result<(), ValidationError> {
    if !value.is_finite() || value < lo || value > hi {
        return Err(ValidationError::new(field, format!("{value} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl NutrientProfile {
    pub fn validate(&self) -> Result<(), ValidationError> {
        check_range("nutrients.calories_kcal_per_100g", self.calories_kcal_per_100g, 0.0, 900.0)?;
        check_range("nutrients.protein_g", self.protein_g, 0.0, 100.0)?;
        check_range("nutrients.carbs_g", self.carbs_g, 0.0, 100.0)?;
        check_range("nutrients.fat_g", self.fat_g, 0.0, 100.0)?;
        check_range("nutrients.fiber_g", self.fiber_g, 0.0, 100.0)?;
        check_range("nutrients.sugars_g", self.sugars_g, 0.0, 100.0)?;
        let macros = self.protein_g + self.carbs_g + self.fat_g;
        if macros > 100.0 {
            return Err(ValidationError::new(
                "nutrients",
                format!("protein + carbs + fat = {macros} g exceeds 100 g"),
            ));
        }
        if self.fiber_g > self.carbs_g {
            return Err(ValidationError::new("nutrients.fiber_g", "exceeds carbs_g"));
        }
        if self.sugars_g > self.carbs_g {
            return Err(ValidationError::new("nutrients.sugars_g", "exceeds carbs_g"));
        }
        for (name, m) in &self.micronutrients {
            if name.trim().is_empty() {
                return Err(ValidationError::new("nutrients.micronutrients", "empty nutrient name"));
            }
            if !m.amount.is_finite() || m.amount < 0.0 {
                return Err(ValidationError::new(
                    format!("nutrients.micronutrients.{name}"),
                    format!("amount {} must be >= 0", m.amount),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoodItem {
    pub id: FoodId,
    pub canonical_name: String,
    pub category: String,
    pub glycemic_index: f64,
    pub nutrients: NutrientProfile,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub aliases: BTreeSet<String>,
}

impl FoodItem {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.id.0.trim().is_empty() {
            return Err(ValidationError::new("id", "empty"));
        }
        if fold_key(&self.canonical_name).is_empty() {
            return Err(ValidationError::new("canonical_name", "empty"));
        }
        if self.category.trim().is_empty() {
            return Err(ValidationError::new("category", "empty"));
        }
        check_range("glycemic_index", self.glycemic_index, 0.0, 110.0)?;
        if self.aliases.iter().any(|a| fold_key(a).is_empty()) {
            return Err(ValidationError::new("aliases", "empty alias"));
        }
        if self.tags.iter().any(|t| t.trim().is_empty()) {
            return Err(ValidationError::new("tags", "empty tag"));
        }
        self.nutrients.validate()
    }

    pub fn name_key(&self) -> String {
        fold_key(&self.canonical_name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("invalid food item: {0}")]
    Validation(#[from] ValidationError),
    #[error("canonical name {name:?} already used by food {existing}")]
    NameConflict { name: String, existing: FoodId },
    #[error("no food matches {0:?}")]
    NotFound(String),
    #[error("catalog line {line}{}: {message}", record_suffix(.record))]
    Record { line: usize, record: Option<String>, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn record_suffix(record: &Option<String>) -> String {
    record.as_ref().map(|id| format!(" (record {id:?})")).unwrap_or_default()
}

/// Parses and validates a catalog document without touching any store.
///
/// Blank lines are skipped. The first bad record aborts with its line number
/// and, when it can be read, its `id`.
pub fn parse_catalog(document: &str) -> Result<Vec<FoodItem>, CatalogError> {
    let mut items = Vec::new();
    let mut names: HashMap<String, (FoodId, usize)> = HashMap::new();
    for (idx, raw) in document.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw)
            .map_err(|e| CatalogError::Record { line, record: None, message: e.to_string() })?;
        let record = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
        let item: FoodItem = serde_json::from_value(value).map_err(|e| CatalogError::Record {
            line,
            record: record.clone(),
            message: e.to_string(),
        })?;
        item.validate().map_err(|e| CatalogError::Record {
            line,
            record: record.clone(),
            message: e.to_string(),
        })?;
        if let Some((other, other_line)) = names.get(&item.name_key()) {
            if *other != item.id {
                return Err(CatalogError::Record {
                    line,
                    record,
                    message: format!(
                        "canonical_name {:?} duplicates record {other} on line {other_line}",
                        item.canonical_name
                    ),
                });
            }
        }
        names.insert(item.name_key(), (item.id.clone(), line));
        items.push(item);
    }
    Ok(items)
}

#[derive(Default)]
struct Index {
    items: BTreeMap<FoodId, FoodItem>,
    by_name: HashMap<String, FoodId>,
    by_alias: HashMap<String, FoodId>,
}

impl Index {
    fn build(items: BTreeMap<FoodId, FoodItem>) -> Self {
        let mut by_name = HashMap::new();
        let mut by_alias: HashMap<String, FoodId> = HashMap::new();
        // BTreeMap order: on alias collisions the smallest id wins.
        for (id, item) in &items {
            by_name.insert(item.name_key(), id.clone());
            for alias in &item.aliases {
                by_alias.entry(fold_key(alias)).or_insert_with(|| id.clone());
            }
        }
        Self { items, by_name, by_alias }
    }

    fn name_owner(&self, item: &FoodItem) -> Option<&FoodId> {
        self.by_name.get(&item.name_key()).filter(|owner| **owner != item.id)
    }
}

/// Catalog over a persistent store. Reads are concurrent; writes are
/// serialized by the index lock and committed to the store before the index
/// changes.
pub struct Catalog {
    store: Arc<dyn KvStore>,
    index: RwLock<Index>,
}

impl Catalog {
    pub fn open(store: Arc<dyn KvStore>) -> Result<Self, CatalogError> {
        let mut items = BTreeMap::new();
        for (key, value) in store.scan(NAMESPACE)? {
            let item: FoodItem = serde_json::from_value(value).map_err(|e| CatalogError::Record {
                line: 0,
                record: Some(key),
                message: format!("stored record unreadable: {e}"),
            })?;
            items.insert(item.id.clone(), item);
        }
        Ok(Self { store, index: RwLock::new(Index::build(items)) })
    }

    pub fn upsert_food(&self, item: FoodItem) -> Result<FoodId, CatalogError> {
        item.validate()?;
        let mut index = self.index.write();
        if let Some(existing) = index.name_owner(&item) {
            return Err(CatalogError::NameConflict {
                name: item.canonical_name.clone(),
                existing: existing.clone(),
            });
        }
        self.store.put(NAMESPACE, &item.id.0, serde_json::to_value(&item).map_err(StoreError::from)?)?;
        let id = item.id.clone();
        let mut items = std::mem::take(&mut index.items);
        items.insert(id.clone(), item);
        *index = Index::build(items);
        Ok(id)
    }

    pub fn get_food(&self, id: &FoodId) -> Option<FoodItem> {
        self.index.read().items.get(id).cloned()
    }

    /// Case- and plural-folded match against canonical names first, then
    /// aliases.
    pub fn find_by_label(&self, label: &str) -> Result<FoodItem, CatalogError> {
        let key = fold_key(label);
        if key.is_empty() {
            return Err(ValidationError::new("label", "empty").into());
        }
        let index = self.index.read();
        index
            .by_name
            .get(&key)
            .or_else(|| index.by_alias.get(&key))
            .and_then(|id| index.items.get(id))
            .cloned()
            .ok_or_else(|| CatalogError::NotFound(label.to_string()))
    }

    /// Validates every record, then commits them in one store batch.
    pub fn load_seed_catalog(&self, document: &str) -> Result<usize, CatalogError> {
        let parsed = parse_catalog(document)?;
        if parsed.is_empty() {
            return Ok(0);
        }
        let mut index = self.index.write();
        let mut items = index.items.clone();
        for item in &parsed {
            items.insert(item.id.clone(), item.clone());
        }
        let merged = Index::build(items);
        // A loaded item may collide with an existing item's name under another id.
        if merged.by_name.len() != merged.items.len() {
            let clash = parsed
                .iter()
                .find(|item| merged.by_name.get(&item.name_key()) != Some(&item.id))
                .or_else(|| parsed.first())
                .expect("nonempty");
            return Err(CatalogError::NameConflict {
                name: clash.canonical_name.clone(),
                existing: merged.by_name[&clash.name_key()].clone(),
            });
        }
        let ops = parsed
            .iter()
            .map(|item| Ok(Op::put(NAMESPACE, item.id.0.clone(), serde_json::to_value(item)?)))
            .collect::<Result<Vec<_>, serde_json::Error>>()
            .map_err(StoreError::from)?;
        self.store.apply(ops)?;
        *index = merged;
        Ok(parsed.len())
    }

    /// Snapshot of all items in id order.
    pub fn items(&self) -> Vec<FoodItem> {
        self.index.read().items.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.index.read().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The catalog in the line format, sorted by id. Two catalogs holding the
    /// same items export byte-identical documents.
    pub fn export_canonical(&self) -> String {
        let index = self.index.read();
        let mut out = String::new();
        for item in index.items.values() {
            out.push_str(&serde_json::to_string(item).expect("FoodItem serializes"));
            out.push('\n');
        }
        out
    }
}
