//! Request handling independent of the HTTP layer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use base64::Engine;
use chrono::{DateTime, Utc};
use dietwise_core::analytics::{
    compute_metrics, parse_responses, survey_summary, ConfusionCounts, MetricReport, SurveyResponse, SurveySummary,
};
use dietwise_core::catalog::{Catalog, FoodId, FoodItem};
use dietwise_core::coco::{parse_coco, parse_id_list, CocoDataset};
use dietwise_core::detection::{
    detect_reference, evaluate_reference, DetectionResult, ImageSource, Prompt, RemoteDetector,
};
use dietwise_core::preprocess::{decode_image, encode_png, resize, Size};
use dietwise_core::profiles::{
    Clock, Principal, ProfileConfig, ProfileFields, ProfileService, Session, SessionToken, UserId, UserProfile,
};
use dietwise_core::recommend::{Recommendation, Recommender, RestrictionMap};
use dietwise_core::security::{HashCost, MasterKey};
use dietwise_core::store::{KvStore, Op, StoreError};
use serde::{Deserialize, Serialize};

use crate::config::{Config, DetectorMode};
use crate::error::ApiError;
use crate::telemetry::Telemetry;

const SURVEY: &str = "survey-responses";

/// Route templates, registered with telemetry at startup.
pub const ENDPOINTS: [&str; 10] = [
    "/api/v1/auth/register",
    "/api/v1/auth/login",
    "/api/v1/auth/logout",
    "/api/v1/profile",
    "/api/v1/scan",
    "/api/v1/foods/{id}",
    "/api/v1/survey/responses",
    "/api/v1/survey/summary",
    "/api/v1/eval/report",
    "/api/v1/health",
];

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("reading {path}: {message}")]
    Read { path: String, message: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("catalog: {0}")]
    Catalog(String),
    #[error("restrictions: {0}")]
    Restrictions(String),
    #[error("survey import: {0}")]
    Survey(String),
    #[error("detector: {0}")]
    Detector(String),
    #[error("profiles: {0}")]
    Profiles(String),
}

fn read(path: &Path) -> Result<String, StartupError> {
    std::fs::read_to_string(path).map_err(|e| StartupError::Read { path: path.display().to_string(), message: e.to_string() })
}

/// The evaluation corpus with its committed split files.
pub struct Dataset {
    pub coco: CocoDataset,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl Dataset {
    pub fn load(annotations: &Path, splits_dir: &Path) -> Result<Self, StartupError> {
        let coco = parse_coco(&read(annotations)?).map_err(|e| StartupError::Dataset(e.to_string()))?;
        let ids = |name: &str| -> Result<Vec<u64>, StartupError> {
            let ids = parse_id_list(&read(&splits_dir.join(name))?).map_err(|e| StartupError::Dataset(e.to_string()))?;
            if let Some(id) = ids.iter().find(|&&id| coco.image(id).is_none()) {
                return Err(StartupError::Dataset(format!("{name}: image {id} not in annotations")));
            }
            Ok(ids)
        };
        let (val, test) = (ids("val.txt")?, ids("test.txt")?);
        Ok(Self { coco, val, test })
    }
}

pub enum Detector {
    Reference,
    Remote(RemoteDetector),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRequest {
    /// Base64-encoded PNG or PPM bytes.
    #[serde(default)]
    pub image: Option<String>,
    /// Image id in the configured dataset.
    #[serde(default)]
    pub image_id: Option<u64>,
    #[serde(default)]
    pub prompts: Prompt,
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResponse {
    pub detections: DetectionResult,
    pub recommendations: Vec<Recommendation>,
    pub unrecognized_labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: EvalSplit,
    pub threshold: f64,
    pub images: usize,
    pub detector_id: String,
    pub counts: ConfusionCounts,
    pub metrics: MetricReport,
    /// Percentages with two decimals, e.g. `"90.79%"`.
    pub rendered: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn from_counts(split: EvalSplit, threshold: f64, detector_id: &str, counts: ConfusionCounts) -> Result<Self, ApiError> {
        let metrics = compute_metrics(counts)?;
        Ok(Self {
            split,
            threshold,
            images: counts.total() as usize,
            detector_id: detector_id.to_string(),
            counts,
            metrics,
            rendered: metrics.rendered().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterRequest {
    pub name: String,
    pub secret: String,
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default)]
    pub conditions: Option<Vec<String>>,
    #[serde(default)]
    pub restrictions: Option<Vec<String>>,
    #[serde(default)]
    pub goals: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoginRequest {
    pub name: String,
    pub secret: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub user_id: UserId,
    pub expires_at: DateTime<Utc>,
}

impl From<Session> for LoginResponse {
    fn from(s: Session) -> Self {
        Self { token: s.token.as_str().to_string(), user_id: s.user_id, expires_at: s.expires_at }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingInput {
    pub item_id: String,
    pub rating: u8,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveySubmission {
    pub responses: Vec<RatingInput>,
}

pub struct Service {
    store: Arc<dyn KvStore>,
    catalog: Catalog,
    profiles: ProfileService,
    recommender: Recommender,
    dataset: Option<Arc<Dataset>>,
    detector: Detector,
    threshold: f64,
    input_size: Size,
    admins: BTreeSet<String>,
    telemetry: Telemetry,
}

fn survey_key(respondent: &str, item: &str) -> String {
    format!("{respondent}/{item}")
}

impl Service {
    /// Loads catalog, restriction map, dataset and survey imports named by
    /// `config`. The seed catalog is loaded only into an empty store.
    pub fn build(
        config: &Config,
        key: Arc<MasterKey>,
        store: Arc<dyn KvStore>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StartupError> {
        let catalog = Catalog::open(store.clone()).map_err(|e| StartupError::Catalog(e.to_string()))?;
        if catalog.is_empty() {
            let seed = match &config.catalog.seed {
                Some(p) => read(p)?,
                None => dietwise_core::fixtures::SEED_CATALOG.to_string(),
            };
            catalog.load_seed_catalog(&seed).map_err(|e| StartupError::Catalog(e.to_string()))?;
        }
        let restrictions = match &config.catalog.restrictions {
            Some(p) => RestrictionMap::from_toml(&read(p)?).map_err(|e| StartupError::Restrictions(e.to_string()))?,
            None => RestrictionMap::bundled(),
        };
        let recommender =
            Recommender::new(config.glycemic, restrictions).map_err(|e| StartupError::Restrictions(e.to_string()))?;
        let hash_cost = if config.auth.fast_hashing { HashCost::minimal() } else { HashCost::default() };
        let profile_config = ProfileConfig {
            session_ttl: chrono::Duration::hours(i64::from(config.auth.session_ttl_hours)),
            hash_cost,
        };
        let profiles = ProfileService::new(store.clone(), key, profile_config, clock)
            .map_err(|e| StartupError::Profiles(e.to_string()))?;
        let dataset = match &config.dataset {
            Some(d) => Some(Arc::new(Dataset::load(&d.annotations, &d.splits_dir)?)),
            None => None,
        };
        let detector = match config.detector.mode {
            DetectorMode::Reference => Detector::Reference,
            DetectorMode::Remote => {
                let remote = config.detector.remote.clone().ok_or_else(|| StartupError::Detector("missing [detector.remote]".into()))?;
                Detector::Remote(RemoteDetector::new(remote).map_err(|e| StartupError::Detector(e.to_string()))?)
            }
        };
        let service = Self {
            store,
            catalog,
            profiles,
            recommender,
            dataset,
            detector,
            threshold: config.detector.threshold,
            input_size: config.detector.input_size,
            admins: config.auth.admins.iter().map(|a| a.trim().to_lowercase()).collect(),
            telemetry: Telemetry::new(ENDPOINTS),
        };
        for path in &config.survey.import {
            let responses = parse_responses(&read(path)?).map_err(|e| StartupError::Survey(format!("{}: {e}", path.display())))?;
            service.import_responses(&responses).map_err(|e| StartupError::Survey(e.to_string()))?;
        }
        Ok(service)
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        self.dataset.as_deref()
    }

    fn authenticate(&self, token: Option<&SessionToken>) -> Result<Principal, ApiError> {
        let token = token.ok_or_else(|| ApiError::unauthenticated("missing bearer token"))?;
        Ok(self.profiles.authenticate(token)?)
    }

    fn require_admin(&self, token: Option<&SessionToken>) -> Result<Principal, ApiError> {
        let principal = self.authenticate(token)?;
        if !self.admins.contains(&principal.name.to_lowercase()) {
            return Err(ApiError::forbidden("admin role required"));
        }
        Ok(principal)
    }

    pub fn register(&self, req: RegisterRequest) -> Result<UserProfile, ApiError> {
        let fields = ProfileFields {
            display_name: req.display_name,
            conditions: req.conditions,
            restrictions: req.restrictions,
            goals: req.goals,
        };
        let user_id = self.profiles.register(&req.name, &req.secret, &fields)?;
        Ok(self.profiles.profile(&user_id)?)
    }

    pub fn login(&self, req: LoginRequest) -> Result<LoginResponse, ApiError> {
        Ok(self.profiles.login(&req.name, &req.secret)?.into())
    }

    pub fn logout(&self, token: Option<&SessionToken>) -> Result<(), ApiError> {
        self.authenticate(token)?;
        Ok(self.profiles.logout(token.expect("authenticated"))?)
    }

    pub fn profile(&self, token: Option<&SessionToken>) -> Result<UserProfile, ApiError> {
        let principal = self.authenticate(token)?;
        Ok(self.profiles.profile(&principal.user_id)?)
    }

    pub fn update_profile(&self, token: Option<&SessionToken>, fields: ProfileFields) -> Result<UserProfile, ApiError> {
        let token = token.ok_or_else(|| ApiError::unauthenticated("missing bearer token"))?;
        Ok(self.profiles.update_profile(token, &fields)?)
    }

    pub fn food(&self, id: &str) -> Result<FoodItem, ApiError> {
        self.catalog.get_food(&FoodId::from(id)).ok_or_else(|| ApiError::not_found(format!("no food with id {id:?}")))
    }

    /// Authenticates, detects, and recommends. Read-only on catalog and
    /// profiles; uploaded bytes live only for the duration of the call.
    pub async fn handle_scan(&self, token: Option<&SessionToken>, req: ScanRequest) -> Result<ScanResponse, ApiError> {
        let principal = self.authenticate(token)?;
        let profile = self.profiles.profile(&principal.user_id)?;
        let threshold = req.threshold.unwrap_or(self.threshold);
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ApiError::validation(format!("threshold {threshold} outside [0, 1]")));
        }
        if req.prompts.is_empty() {
            return Err(ApiError::validation("prompts: give at least one label phrase"));
        }
        let detections = match (&req.image, req.image_id) {
            (Some(_), Some(_)) => return Err(ApiError::validation("give exactly one of image and image_id, not both")),
            (None, None) => return Err(ApiError::validation("give exactly one of image and image_id")),
            (None, Some(id)) => {
                let dataset = self.dataset.as_ref().ok_or_else(|| ApiError::precondition("no dataset configured"))?;
                detect_reference(&dataset.coco, id, &req.prompts, threshold)?
            }
            (Some(encoded), None) => self.detect_upload(encoded, &req.prompts, threshold).await?,
        };
        let advice = self.recommender.recommend_for_scan(&profile, &detections, &self.catalog);
        Ok(ScanResponse {
            detections,
            recommendations: advice.recommendations,
            unrecognized_labels: advice.unrecognized_labels,
        })
    }

    async fn detect_upload(&self, encoded: &str, prompt: &Prompt, threshold: f64) -> Result<DetectionResult, ApiError> {
        let Detector::Remote(remote) = &self.detector else {
            return Err(ApiError::validation("the reference detector scans dataset images only; send image_id"));
        };
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(encoded.trim())
            .map_err(|e| ApiError::validation(format!("image: {e}")))?;
        let original = decode_image(&bytes)?;
        let model_input = resize(&original, self.input_size)?;
        let png = encode_png(&model_input)?;
        let result = remote.detect(ImageSource::Bytes(&png), prompt, threshold).await?;
        let sx = original.width() as f64 / self.input_size.width as f64;
        let sy = original.height() as f64 / self.input_size.height as f64;
        Ok(result.rescaled(sx, sy))
    }

    pub fn handle_eval(
        &self,
        token: Option<&SessionToken>,
        split: EvalSplit,
        threshold: Option<f64>,
    ) -> Result<EvalReport, ApiError> {
        self.authenticate(token)?;
        let dataset = self.dataset.as_ref().ok_or_else(|| ApiError::precondition("no dataset configured"))?;
        let threshold = threshold.unwrap_or(self.threshold);
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ApiError::validation(format!("threshold {threshold} outside [0, 1]")));
        }
        let ids = match split {
            EvalSplit::Val => &dataset.val,
            EvalSplit::Test => &dataset.test,
        };
        let counts = evaluate_reference(&dataset.coco, ids, threshold)?;
        EvalReport::from_counts(split, threshold, dietwise_core::detection::REFERENCE_DETECTOR_ID, counts)
    }

    /// Validates every rating, then stores them in one batch. A repeated item
    /// replaces the caller's earlier answer.
    pub fn handle_survey_submit(&self, token: Option<&SessionToken>, submission: SurveySubmission) -> Result<usize, ApiError> {
        let principal = self.authenticate(token)?;
        let responses: Vec<SurveyResponse> = submission
            .responses
            .into_iter()
            .map(|r| SurveyResponse { respondent_id: principal.user_id.0.clone(), item_id: r.item_id, rating: r.rating })
            .collect();
        if responses.is_empty() {
            return Err(ApiError::validation("responses: empty"));
        }
        self.import_responses(&responses)
    }

    pub fn import_responses(&self, responses: &[SurveyResponse]) -> Result<usize, ApiError> {
        let mut ops = Vec::with_capacity(responses.len());
        for (i, r) in responses.iter().enumerate() {
            r.validate().map_err(|e| ApiError::validation(format!("responses[{i}]: {e}")))?;
            let value = serde_json::to_value(r).map_err(|e| ApiError::internal(e.to_string()))?;
            ops.push(Op::put(SURVEY, survey_key(&r.respondent_id, &r.item_id), value));
        }
        self.store.apply(ops).map_err(store_error)?;
        Ok(responses.len())
    }

    pub fn stored_responses(&self) -> Result<Vec<SurveyResponse>, ApiError> {
        self.store
            .scan(SURVEY)
            .map_err(store_error)?
            .into_iter()
            .map(|(_, v)| serde_json::from_value(v).map_err(|e| ApiError::internal(format!("stored response: {e}"))))
            .collect()
    }

    pub fn handle_survey_summary(&self, token: Option<&SessionToken>) -> Result<SurveySummary, ApiError> {
        self.require_admin(token)?;
        Ok(survey_summary(&self.stored_responses()?)?)
    }

    pub fn render_metrics(&self) -> String {
        self.telemetry.render()
    }
}

fn store_error(e: StoreError) -> ApiError {
    ApiError::internal(e.to_string()).retriable()
}
