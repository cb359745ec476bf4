//! Accounts, health profiles and sessions.
//!
//! Health fields (conditions, restrictions, goals) are sealed one field at a
//! time with [`encrypt_field`]; name, display name and ids stay in clear so
//! they remain indexable. Credentials are Argon2id PHC strings. Session tokens
//! are 256-bit random values; only their SHA-256 digest is persisted.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::ValidationError;
use crate::security::{
    decrypt_field, encrypt_field, CredentialHasher, EncryptedBlob, HashCost, MasterKey,
    SecurityError,
};
use crate::store::{KvStore, Op, StoreError};

const USERS: &str = "users";
const NAMES: &str = "user-names";
const SESSIONS: &str = "sessions";
pub const MIN_SECRET_CHARS: usize = 8;

macro_rules! kebab_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($name).to_lowercase())),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

kebab_enum!(Condition {
    DiabetesType1 => "diabetes-type-1",
    DiabetesType2 => "diabetes-type-2",
    Hypertension => "hypertension",
});

kebab_enum!(Restriction {
    NutAllergy => "nut-allergy",
    GlutenFree => "gluten-free",
    Vegetarian => "vegetarian",
    Vegan => "vegan",
    LactoseFree => "lactose-free",
});

kebab_enum!(Goal {
    WeightLoss => "weight-loss",
    MuscleGain => "muscle-gain",
    Maintenance => "maintenance",
});

impl Condition {
    pub fn is_diabetes(self) -> bool {
        matches!(self, Condition::DiabetesType1 | Condition::DiabetesType2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Public view of an account. Never carries credential material.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub name: String,
    pub display_name: String,
    pub conditions: BTreeSet<Condition>,
    pub restrictions: BTreeSet<Restriction>,
    pub goals: BTreeSet<Goal>,
}

impl UserProfile {
    /// Profile with no account behind it, for rule evaluation outside a session.
    pub fn anonymous(
        conditions: impl IntoIterator<Item = Condition>,
        restrictions: impl IntoIterator<Item = Restriction>,
    ) -> Self {
        Self {
            user_id: UserId("anonymous".into()),
            name: "anonymous".into(),
            display_name: String::new(),
            conditions: conditions.into_iter().collect(),
            restrictions: restrictions.into_iter().collect(),
            goals: BTreeSet::new(),
        }
    }

    pub fn has_diabetes(&self) -> bool {
        self.conditions.iter().any(|c| c.is_diabetes())
    }
}

/// Profile fields as submitted by clients: raw strings, validated on use.
/// `None` leaves a field unchanged on update.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFields {
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default)]
    pub conditions: Option<Vec<String>>,
    #[serde(default)]
    pub restrictions: Option<Vec<String>>,
    #[serde(default)]
    pub goals: Option<Vec<String>>,
}

fn parse_set<T: FromStr<Err = String> + Ord>(
    field: &str,
    raw: &[String],
) -> Result<BTreeSet<T>, ValidationError> {
    // "none" is accepted alone as the explicit empty set.
    if raw.len() == 1 && raw[0] == "none" {
        return Ok(BTreeSet::new());
    }
    raw.iter()
        .map(|s| {
            if s == "none" {
                Err(ValidationError::new(field, "\"none\" cannot be combined with other values"))
            } else {
                s.parse::<T>().map_err(|e| ValidationError::new(field, e))
            }
        })
        .collect()
}

struct ParsedFields {
    display_name: Option<String>,
    conditions: Option<BTreeSet<Condition>>,
    restrictions: Option<BTreeSet<Restriction>>,
    goals: Option<BTreeSet<Goal>>,
}

impl ProfileFields {
    fn parse(&self) -> Result<ParsedFields, ValidationError> {
        if let Some(name) = &self.display_name {
            if name.chars().count() > 100 {
                return Err(ValidationError::new("display_name", "longer than 100 characters"));
            }
        }
        Ok(ParsedFields {
            display_name: self.display_name.clone(),
            conditions: self.conditions.as_deref().map(|r| parse_set("conditions", r)).transpose()?,
            restrictions: self
                .restrictions
                .as_deref()
                .map(|r| parse_set("restrictions", r))
                .transpose()?,
            goals: self.goals.as_deref().map(|r| parse_set("goals", r)).transpose()?,
        })
    }
}

/// Opaque bearer token. Debug output is redacted.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionToken(String);

impl SessionToken {
    pub fn new(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.0.as_bytes()))
    }
}

impl fmt::Debug for SessionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SessionToken(<redacted>)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: SessionToken,
    pub user_id: UserId,
    pub expires_at: DateTime<Utc>,
}

/// What an authenticated request knows about its caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub user_id: UserId,
    pub name: String,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Settable clock for tests.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("invalid profile: {0}")]
    Validation(#[from] ValidationError),
    #[error("account name {0:?} is taken")]
    Conflict(String),
    /// Covers unknown name, wrong secret, and missing, unknown or expired
    /// sessions alike.
    #[error("authentication failed")]
    Authentication,
    #[error(transparent)]
    Security(#[from] SecurityError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("stored record unreadable: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredUser {
    user_id: UserId,
    name: String,
    display_name: String,
    credential_hash: String,
    conditions: EncryptedBlob,
    restrictions: EncryptedBlob,
    goals: EncryptedBlob,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredSession {
    user_id: UserId,
    expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct ProfileConfig {
    pub session_ttl: Duration,
    pub hash_cost: HashCost,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self { session_ttl: Duration::hours(24), hash_cost: HashCost::default() }
    }
}

pub struct ProfileService {
    store: Arc<dyn KvStore>,
    key: Arc<MasterKey>,
    hasher: CredentialHasher,
    dummy_hash: String,
    ttl: Duration,
    clock: Arc<dyn Clock>,
    registration: Mutex<()>,
    user_locks: Mutex<HashMap<UserId, Arc<Mutex<()>>>>,
}

fn random_hex(bytes: usize) -> Result<String, SecurityError> {
    let mut buf = vec![0u8; bytes];
    getrandom::fill(&mut buf).map_err(|_| SecurityError::Randomness)?;
    Ok(hex::encode(buf))
}

fn name_key(name: &str) -> String {
    name.trim().to_lowercase()
}

impl ProfileService {
    pub fn new(
        store: Arc<dyn KvStore>,
        key: Arc<MasterKey>,
        config: ProfileConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ProfileError> {
        let hasher = CredentialHasher::new(config.hash_cost)?;
        // Checked in place of a real hash when the account name is unknown.
        let dummy_hash = hasher.hash(&random_hex(16)?)?;
        Ok(Self {
            store,
            key,
            hasher,
            dummy_hash,
            ttl: config.session_ttl,
            clock,
            registration: Mutex::new(()),
            user_locks: Mutex::new(HashMap::new()),
        })
    }

    fn seal<T: Serialize>(&self, value: &T) -> Result<EncryptedBlob, ProfileError> {
        let plain = serde_json::to_vec(value).map_err(|e| ProfileError::Corrupt(e.to_string()))?;
        Ok(encrypt_field(&plain, &self.key)?)
    }

    fn open<T: DeserializeOwned>(&self, blob: &EncryptedBlob) -> Result<T, ProfileError> {
        let plain = decrypt_field(blob, &self.key)?;
        serde_json::from_slice(&plain).map_err(|e| ProfileError::Corrupt(e.to_string()))
    }

    fn load_user(&self, user_id: &UserId) -> Result<Option<StoredUser>, ProfileError> {
        self.store
            .get(USERS, &user_id.0)?
            .map(|v| serde_json::from_value(v).map_err(|e| ProfileError::Corrupt(e.to_string())))
            .transpose()
    }

    fn to_profile(&self, stored: &StoredUser) -> Result<UserProfile, ProfileError> {
        Ok(UserProfile {
            user_id: stored.user_id.clone(),
            name: stored.name.clone(),
            display_name: stored.display_name.clone(),
            conditions: self.open(&stored.conditions)?,
            restrictions: self.open(&stored.restrictions)?,
            goals: self.open(&stored.goals)?,
        })
    }

    fn user_lock(&self, user_id: &UserId) -> Arc<Mutex<()>> {
        self.user_locks.lock().entry(user_id.clone()).or_default().clone()
    }

    pub fn register(
        &self,
        name: &str,
        secret: &str,
        fields: &ProfileFields,
    ) -> Result<UserId, ProfileError> {
        let trimmed = name.trim();
        if trimmed.is_empty() || trimmed.chars().count() > 64 {
            return Err(ValidationError::new("name", "must be 1-64 characters").into());
        }
        if secret.chars().count() < MIN_SECRET_CHARS {
            return Err(ValidationError::new(
                "secret",
                format!("must be at least {MIN_SECRET_CHARS} characters"),
            )
            .into());
        }
        let parsed = fields.parse()?;
        let credential_hash = self.hasher.hash(secret)?;

        let _guard = self.registration.lock();
        if self.store.get(NAMES, &name_key(trimmed))?.is_some() {
            return Err(ProfileError::Conflict(trimmed.to_string()));
        }
        let user_id = UserId(format!("u_{}", random_hex(16)?));
        let stored = StoredUser {
            user_id: user_id.clone(),
            name: trimmed.to_string(),
            display_name: parsed.display_name.unwrap_or_else(|| trimmed.to_string()),
            credential_hash,
            conditions: self.seal(&parsed.conditions.unwrap_or_default())?,
            restrictions: self.seal(&parsed.restrictions.unwrap_or_default())?,
            goals: self.seal(&parsed.goals.unwrap_or_default())?,
        };
        self.store.apply(vec![
            Op::put(USERS, user_id.0.clone(), serde_json::to_value(&stored).map_err(StoreError::from)?),
            Op::put(NAMES, name_key(trimmed), serde_json::Value::String(user_id.0.clone())),
        ])?;
        Ok(user_id)
    }

    pub fn login(&self, name: &str, secret: &str) -> Result<Session, ProfileError> {
        let stored = match self.store.get(NAMES, &name_key(name))? {
            Some(serde_json::Value::String(id)) => self.load_user(&UserId(id))?,
            _ => None,
        };
        let Some(stored) = stored else {
            let _ = self.hasher.verify(secret, &self.dummy_hash);
            return Err(ProfileError::Authentication);
        };
        if !self.hasher.verify(secret, &stored.credential_hash) {
            return Err(ProfileError::Authentication);
        }
        let token = SessionToken(random_hex(32)?);
        let expires_at = self.clock.now() + self.ttl;
        let record = StoredSession { user_id: stored.user_id.clone(), expires_at };
        self.store.put(
            SESSIONS,
            &token.digest(),
            serde_json::to_value(&record).map_err(StoreError::from)?,
        )?;
        Ok(Session { token, user_id: stored.user_id, expires_at })
    }

    pub fn logout(&self, token: &SessionToken) -> Result<(), ProfileError> {
        self.store.delete(SESSIONS, &token.digest())?;
        Ok(())
    }

    pub fn authenticate(&self, token: &SessionToken) -> Result<Principal, ProfileError> {
        let record: StoredSession = match self.store.get(SESSIONS, &token.digest())? {
            Some(v) => serde_json::from_value(v).map_err(|e| ProfileError::Corrupt(e.to_string()))?,
            None => return Err(ProfileError::Authentication),
        };
        if self.clock.now() >= record.expires_at {
            return Err(ProfileError::Authentication);
        }
        let user = self.load_user(&record.user_id)?.ok_or(ProfileError::Authentication)?;
        Ok(Principal { user_id: user.user_id, name: user.name })
    }

    pub fn profile(&self, user_id: &UserId) -> Result<UserProfile, ProfileError> {
        let stored = self.load_user(user_id)?.ok_or(ProfileError::Authentication)?;
        self.to_profile(&stored)
    }

    pub fn profile_for(&self, token: &SessionToken) -> Result<UserProfile, ProfileError> {
        let principal = self.authenticate(token)?;
        self.profile(&principal.user_id)
    }

    /// Applies the given fields; writes for one user are serialized and the
    /// last write wins field by field.
    pub fn update_profile(
        &self,
        token: &SessionToken,
        fields: &ProfileFields,
    ) -> Result<UserProfile, ProfileError> {
        let principal = self.authenticate(token)?;
        let parsed = fields.parse()?;
        let lock = self.user_lock(&principal.user_id);
        let _guard = lock.lock();
        let mut stored = self.load_user(&principal.user_id)?.ok_or(ProfileError::Authentication)?;
        if let Some(name) = parsed.display_name {
            stored.display_name = name;
        }
        if let Some(c) = parsed.conditions {
            stored.conditions = self.seal(&c)?;
        }
        if let Some(r) = parsed.restrictions {
            stored.restrictions = self.seal(&r)?;
        }
        if let Some(g) = parsed.goals {
            stored.goals = self.seal(&g)?;
        }
        self.store.put(
            USERS,
            &stored.user_id.0,
            serde_json::to_value(&stored).map_err(StoreError::from)?,
        )?;
        self.to_profile(&stored)
    }
}
