//! Sealed envelope format and AEAD seal/open.
//!
//! Wire layout, all integers big-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `LHSE`                            |
//! | 4      | 1    | version (1)                             |
//! | 5      | 16   | key id                                  |
//! | 21     | 12   | nonce                                   |
//! | 33     | 4    | manifest length `m`                     |
//! | 37     | m    | manifest, canonical JSON                |
//! | 37+m   | 8    | ciphertext length `c`                   |
//! | 45+m   | c    | ciphertext (ChaCha20-Poly1305)          |
//! | 45+m+c | 16   | Poly1305 tag                            |
//!
//! The manifest bytes are the associated data.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chacha20poly1305::aead::{AeadInOut, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce, Tag};
use chrono::{DateTime, SubsecRound, Utc};
use lhs_core::{ContentHash, RecordId};
use parking_lot::Mutex;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::keystore::{KeyId, KeyStore};

pub const MAGIC: [u8; 4] = *b"LHSE";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 16 + 12 + 4;
pub const TAG_LEN: usize = 16;
const MAX_MANIFEST: usize = 64 * 1024;

/// Key ids within this many differing bits of a known key are reported as
/// corruption rather than as an unknown key.
pub const KEY_ID_CORRUPTION_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrityKind {
    /// Authentication tag did not verify: ciphertext, nonce, tag or manifest altered.
    Tag,
    /// Tag verified but the plaintext digest differs from the manifest.
    ManifestHash,
    /// Bytes do not parse as an envelope.
    Malformed,
    /// Header key id is a corrupted form of a known key id.
    HeaderKeyId,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SealError {
    #[error("no active key")]
    NoActiveKey,
    #[error("payload is empty")]
    EmptyPayload,
    #[error("nonce space exhausted for key {0}")]
    NonceExhausted(KeyId),
    #[error("nonce journal: {0}")]
    Journal(String),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OpenError {
    #[error("unknown key {0}")]
    UnknownKey(KeyId),
    #[error("integrity failure ({kind:?}): {detail}")]
    IntegrityFailure { kind: IntegrityKind, detail: String },
}

impl OpenError {
    fn integrity(kind: IntegrityKind, detail: impl Into<String>) -> Self {
        OpenError::IntegrityFailure { kind, detail: detail.into() }
    }

    pub fn integrity_kind(&self) -> Option<IntegrityKind> {
        match self {
            OpenError::IntegrityFailure { kind, .. } => Some(*kind),
            OpenError::UnknownKey(_) => None,
        }
    }
}

/// Associated data. Field order here is the canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub record_id: RecordId,
    pub content_hash: ContentHash,
    pub byte_length: u64,
    pub created_at: DateTime<Utc>,
}

impl Manifest {
    pub fn for_payload(record_id: RecordId, plaintext: &[u8], created_at: DateTime<Utc>) -> Self {
        Manifest {
            record_id,
            content_hash: ContentHash::of(plaintext),
            byte_length: plaintext.len() as u64,
            created_at: created_at.trunc_subsecs(6),
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("manifest serializes")
    }

    /// Parses and insists the bytes are already canonical, so every
    /// encoding of a manifest is unique.
    pub fn from_canonical(bytes: &[u8]) -> Option<Self> {
        let m: Manifest = serde_json::from_slice(bytes).ok()?;
        (m.canonical_bytes() == bytes).then_some(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedEnvelope {
    pub key_id: KeyId,
    pub nonce: [u8; 12],
    pub manifest: Manifest,
    manifest_bytes: Vec<u8>,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; 16],
}

pub fn envelope_id(key_id: &KeyId, nonce: &[u8; 12]) -> String {
    let mut h = Sha256::new();
    h.update(key_id.0);
    h.update(nonce);
    hex::encode(&h.finalize()[..16])
}

impl SealedEnvelope {
    /// Hex of the first 16 bytes of SHA-256(key_id || nonce); unique
    /// because (key_id, nonce) pairs never repeat.
    pub fn envelope_id(&self) -> String {
        envelope_id(&self.key_id, &self.nonce)
    }

    pub fn manifest_bytes(&self) -> &[u8] {
        &self.manifest_bytes
    }

    /// Replaces the manifest, keeping everything else. Used to model
    /// a swap attack; the result will not open.
    pub fn with_manifest(mut self, manifest: Manifest) -> Self {
        self.manifest_bytes = manifest.canonical_bytes();
        self.manifest = manifest;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.manifest_bytes.len() + 8 + self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.key_id.0);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.manifest_bytes.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.manifest_bytes);
        out.extend_from_slice(&(self.ciphertext.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OpenError> {
        let bad = |d: &str| OpenError::integrity(IntegrityKind::Malformed, d);
        if bytes.len() < HEADER_LEN + 8 + TAG_LEN {
            return Err(bad("shorter than the fixed header"));
        }
        if bytes[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad("unsupported version"));
        }
        let key_id = KeyId(bytes[5..21].try_into().unwrap());
        let nonce: [u8; 12] = bytes[21..33].try_into().unwrap();
        let m_len = u32::from_be_bytes(bytes[33..37].try_into().unwrap()) as usize;
        if m_len > MAX_MANIFEST || bytes.len() < HEADER_LEN + m_len + 8 + TAG_LEN {
            return Err(bad("manifest length out of range"));
        }
        let manifest_bytes = bytes[37..37 + m_len].to_vec();
        let manifest = Manifest::from_canonical(&manifest_bytes).ok_or_else(|| bad("manifest is not canonical JSON"))?;
        let c_off = 37 + m_len;
        let c_len = u64::from_be_bytes(bytes[c_off..c_off + 8].try_into().unwrap());
        let expected = (c_off + 8) as u64 + TAG_LEN as u64;
        if c_len.checked_add(expected) != Some(bytes.len() as u64) {
            return Err(bad("ciphertext length disagrees with envelope size"));
        }
        let c_len = c_len as usize;
        let ciphertext = bytes[c_off + 8..c_off + 8 + c_len].to_vec();
        let tag: [u8; 16] = bytes[c_off + 8 + c_len..].try_into().unwrap();
        Ok(SealedEnvelope { key_id, nonce, manifest, manifest_bytes, ciphertext, tag })
    }
}

/// Reads only the fixed header to compute the envelope id without parsing
/// the rest.
pub fn peek_envelope_id(bytes: &[u8]) -> Option<String> {
    if bytes.len() < HEADER_LEN || bytes[0..4] != MAGIC || bytes[4] != VERSION {
        return None;
    }
    let key_id = KeyId(bytes[5..21].try_into().unwrap());
    let nonce: [u8; 12] = bytes[21..33].try_into().unwrap();
    Some(envelope_id(&key_id, &nonce))
}

fn cipher(secret: &[u8; 32]) -> ChaCha20Poly1305 {
    ChaCha20Poly1305::new(&Key::from(*secret))
}

/// Low-level AEAD: encrypts in place and returns the tag.
pub fn aead_encrypt(secret: &[u8; 32], nonce: &[u8; 12], aad: &[u8], buf: &mut [u8]) -> [u8; 16] {
    let tag = cipher(secret)
        .encrypt_inout_detached(&Nonce::from(*nonce), aad, buf.into())
        .expect("payload within ChaCha20-Poly1305 limits");
    tag.into()
}

/// Low-level AEAD: verifies and decrypts in place.
pub fn aead_decrypt(secret: &[u8; 32], nonce: &[u8; 12], aad: &[u8], buf: &mut [u8], tag: &[u8; 16]) -> bool {
    cipher(secret)
        .decrypt_inout_detached(&Nonce::from(*nonce), aad, buf.into(), &Tag::from(*tag))
        .is_ok()
}

/// Record of every (key id, nonce) pair ever used, optionally persisted as
/// an append-only file of `<key hex> <nonce hex>` lines.
#[derive(Debug)]
pub struct NonceJournal {
    inner: Mutex<JournalInner>,
}

#[derive(Debug)]
struct JournalInner {
    used: HashSet<(KeyId, [u8; 12])>,
    file: Option<File>,
    path: Option<PathBuf>,
    prefix: Option<[u8; 4]>,
    counter: u64,
}

impl NonceJournal {
    pub fn in_memory() -> Self {
        NonceJournal {
            inner: Mutex::new(JournalInner { used: HashSet::new(), file: None, path: None, prefix: None, counter: 0 }),
        }
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut used = HashSet::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                if let Some(pair) = parse_journal_line(&line?) {
                    used.insert(pair);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(NonceJournal {
            inner: Mutex::new(JournalInner {
                used,
                file: Some(file),
                path: Some(path.to_path_buf()),
                prefix: None,
                counter: 0,
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.inner.lock().used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &KeyId, nonce: &[u8; 12]) -> bool {
        self.inner.lock().used.contains(&(*key, *nonce))
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.inner.lock().path.clone()
    }

    /// Reserves a fresh nonce for `key`: a random 4-byte session prefix
    /// followed by a 64-bit counter, redrawn on any collision.
    pub fn reserve(&self, key: KeyId, rng: &mut dyn RngCore) -> Result<[u8; 12], SealError> {
        let mut g = self.inner.lock();
        for _ in 0..64 {
            let prefix = match g.prefix {
                Some(p) if g.counter < u64::MAX => p,
                _ => {
                    let mut p = [0u8; 4];
                    rng.fill_bytes(&mut p);
                    g.prefix = Some(p);
                    g.counter = 0;
                    p
                }
            };
            let mut nonce = [0u8; 12];
            nonce[..4].copy_from_slice(&prefix);
            nonce[4..].copy_from_slice(&g.counter.to_be_bytes());
            g.counter += 1;
            if g.used.insert((key, nonce)) {
                if let Some(f) = g.file.as_mut() {
                    writeln!(f, "{} {}", key.to_hex(), hex::encode(nonce))
                        .and_then(|_| f.flush())
                        .map_err(|e| SealError::Journal(e.to_string()))?;
                }
                return Ok(nonce);
            }
            g.prefix = None;
        }
        Err(SealError::NonceExhausted(key))
    }
}

fn parse_journal_line(line: &str) -> Option<(KeyId, [u8; 12])> {
    let (k, n) = line.trim().split_once(' ')?;
    let key = KeyId::from_hex(k)?;
    let mut nonce = [0u8; 12];
    hex::decode_to_slice(n, &mut nonce).ok()?;
    Some((key, nonce))
}

/// Counts (key, nonce) pairs that appear more than once in a journal file.
pub fn journal_duplicates(path: &Path) -> std::io::Result<(usize, usize)> {
    let mut seen = HashSet::new();
    let mut dups = 0;
    let mut total = 0;
    for line in BufReader::new(File::open(path)?).lines() {
        if let Some(pair) = parse_journal_line(&line?) {
            total += 1;
            if !seen.insert(pair) {
                dups += 1;
            }
        }
    }
    Ok((total, dups))
}

/// Seals `plaintext` under the active key.
pub fn seal(
    plaintext: &[u8],
    record_id: RecordId,
    created_at: DateTime<Utc>,
    keys: &KeyStore,
    journal: &NonceJournal,
    rng: &mut dyn RngCore,
) -> Result<SealedEnvelope, SealError> {
    let manifest = Manifest::for_payload(record_id, plaintext, created_at);
    seal_with_manifest(plaintext, manifest, keys, journal, rng)
}

/// Seals with a caller-supplied manifest. A manifest that does not match
/// the plaintext produces an envelope that opens with `ManifestHash`.
pub fn seal_with_manifest(
    plaintext: &[u8],
    manifest: Manifest,
    keys: &KeyStore,
    journal: &NonceJournal,
    rng: &mut dyn RngCore,
) -> Result<SealedEnvelope, SealError> {
    let (key_id, secret) = keys.active().ok_or(SealError::NoActiveKey)?;
    if plaintext.is_empty() {
        return Err(SealError::EmptyPayload);
    }
    let nonce = journal.reserve(key_id, rng)?;
    let manifest_bytes = manifest.canonical_bytes();
    let mut ciphertext = plaintext.to_vec();
    let tag = aead_encrypt(secret, &nonce, &manifest_bytes, &mut ciphertext);
    Ok(SealedEnvelope { key_id, nonce, manifest, manifest_bytes, ciphertext, tag })
}

pub fn open(env: &SealedEnvelope, keys: &KeyStore) -> Result<Vec<u8>, OpenError> {
    let secret = keys.secret(&env.key_id).ok_or(OpenError::UnknownKey(env.key_id))?;
    let mut buf = env.ciphertext.clone();
    if !aead_decrypt(secret, &env.nonce, &env.manifest_bytes, &mut buf, &env.tag) {
        return Err(OpenError::integrity(IntegrityKind::Tag, "authentication tag mismatch"));
    }
    if buf.len() as u64 != env.manifest.byte_length || ContentHash::of(&buf) != env.manifest.content_hash {
        return Err(OpenError::integrity(IntegrityKind::ManifestHash, "plaintext digest differs from manifest"));
    }
    Ok(buf)
}

/// Parses and opens wire bytes. A key id that is a few bits away from a
/// known key is treated as header corruption.
pub fn open_bytes(bytes: &[u8], keys: &KeyStore) -> Result<(SealedEnvelope, Vec<u8>), OpenError> {
    let env = SealedEnvelope::from_bytes(bytes)?;
    if keys.secret(&env.key_id).is_none() && keys.key_ids().any(|k| k.hamming(&env.key_id) <= KEY_ID_CORRUPTION_BITS) {
        return Err(OpenError::integrity(IntegrityKind::HeaderKeyId, "key id close to a known key"));
    }
    let plain = open(&env, keys)?;
    Ok((env, plain))
}
