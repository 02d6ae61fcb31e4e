//! Pre-shared symmetric keys with manual rotation.
//!
//! Key file (JSON):
//!
//! ```text
//! {
//!   "active": "9f2c...",                       // 16-byte key id, hex
//!   "keys": [
//!     {"id": "9f2c...", "secret": "<base64 32 bytes>",
//!      "created_at": "2025-01-06T00:00:00Z", "retired_at": null}
//!   ],
//!   "journal": [{"at": "...", "event": "created", "key_id": "9f2c..."}]
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use base64::Engine;
use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const KEY_FILE_ENV: &str = "LHS_KEY_FILE";

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub [u8; 16]);

impl KeyId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 16];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(KeyId(out))
    }

    pub fn hamming(&self, other: &KeyId) -> u32 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({})", self.to_hex())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for KeyId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for KeyId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        KeyId::from_hex(&s).ok_or_else(|| serde::de::Error::custom("key id must be 32 hex characters"))
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Secret(pub [u8; 32]);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(..)")
    }
}

impl Serialize for Secret {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Secret {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(s.trim())
            .map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("secret must be 32 bytes"))?;
        Ok(Secret(arr))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub id: KeyId,
    pub secret: Secret,
    pub created_at: DateTime<Utc>,
    pub retired_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationEvent {
    Created,
    Activated,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationEntry {
    pub at: DateTime<Utc>,
    pub event: RotationEvent,
    pub key_id: KeyId,
}

#[derive(Debug, thiserror::Error)]
pub enum KeyStoreError {
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("key file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("key file is not valid: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStore {
    active: Option<KeyId>,
    keys: Vec<KeyEntry>,
    #[serde(default)]
    journal: Vec<RotationEntry>,
}

impl KeyStore {
    pub fn empty() -> Self {
        KeyStore { active: None, keys: Vec::new(), journal: Vec::new() }
    }

    /// A store with one freshly generated active key.
    pub fn generate(rng: &mut impl RngCore, at: DateTime<Utc>) -> Self {
        let mut ks = KeyStore::empty();
        ks.rotate(rng, at);
        ks
    }

    /// Adds a known key; it becomes active when `activate` is set.
    pub fn insert(&mut self, id: KeyId, secret: [u8; 32], at: DateTime<Utc>, activate: bool) {
        self.keys.push(KeyEntry { id, secret: Secret(secret), created_at: at, retired_at: None });
        self.journal.push(RotationEntry { at, event: RotationEvent::Created, key_id: id });
        if activate {
            self.activate(id, at);
        }
    }

    fn activate(&mut self, id: KeyId, at: DateTime<Utc>) {
        if let Some(old) = self.active.replace(id) {
            if let Some(e) = self.keys.iter_mut().find(|e| e.id == old) {
                e.retired_at = Some(at);
            }
            self.journal.push(RotationEntry { at, event: RotationEvent::Retired, key_id: old });
        }
        self.journal.push(RotationEntry { at, event: RotationEvent::Activated, key_id: id });
    }

    /// Generates a new active key; the previous one is retired but kept
    /// for opening older envelopes.
    pub fn rotate(&mut self, rng: &mut impl RngCore, at: DateTime<Utc>) -> KeyId {
        let mut id = [0u8; 16];
        let mut secret = [0u8; 32];
        loop {
            rng.fill_bytes(&mut id);
            if !self.keys.iter().any(|k| k.id.0 == id) {
                break;
            }
        }
        rng.fill_bytes(&mut secret);
        self.insert(KeyId(id), secret, at, true);
        KeyId(id)
    }

    pub fn active(&self) -> Option<(KeyId, &[u8; 32])> {
        let id = self.active?;
        self.secret(&id).map(|s| (id, s))
    }

    pub fn secret(&self, id: &KeyId) -> Option<&[u8; 32]> {
        self.keys.iter().find(|k| &k.id == id).map(|k| &k.secret.0)
    }

    pub fn key_ids(&self) -> impl Iterator<Item = KeyId> + '_ {
        self.keys.iter().map(|k| k.id)
    }

    pub fn journal(&self) -> &[RotationEntry] {
        &self.journal
    }

    fn check(&self) -> Result<(), KeyStoreError> {
        let mut seen = BTreeMap::new();
        for k in &self.keys {
            if seen.insert(k.id, ()).is_some() {
                return Err(KeyStoreError::Format(format!("duplicate key id {}", k.id)));
            }
        }
        match self.active {
            Some(id) if !seen.contains_key(&id) => Err(KeyStoreError::Format(format!("active key {id} not present"))),
            _ => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, KeyStoreError> {
        let ks: KeyStore = serde_json::from_str(text).map_err(|e| KeyStoreError::Format(e.to_string()))?;
        ks.check()?;
        Ok(ks)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("key store serializes")
    }

    pub fn load(path: &Path) -> Result<Self, KeyStoreError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| KeyStoreError::Io { path: path.display().to_string(), source })?;
        KeyStore::from_json(&text)
    }

    /// Loads from the file named by `LHS_KEY_FILE`.
    pub fn from_env() -> Result<Self, KeyStoreError> {
        let path = std::env::var_os(KEY_FILE_ENV).ok_or(KeyStoreError::MissingEnv(KEY_FILE_ENV))?;
        KeyStore::load(Path::new(&path))
    }

    /// Writes the key file readable by the owner only.
    pub fn save(&self, path: &Path) -> Result<(), KeyStoreError> {
        let io = |source| KeyStoreError::Io { path: path.display().to_string(), source };
        std::fs::write(path, self.to_json()).map_err(io)?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600)).map_err(io)?;
        }
        Ok(())
    }
}
