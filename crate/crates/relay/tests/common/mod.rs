//! Crypto checks shared by this crate's tests and the acceptance suite.

#![allow(dead_code)]

use chrono::{DateTime, TimeZone, Utc};
use lhs_core::RecordId;
use lhs_relay::envelope::{aead_decrypt, aead_encrypt};
use lhs_relay::{open, open_bytes, seal, KeyStore, NonceJournal, OpenError};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VECTORS: &str = include_str!("../data/chacha20poly1305_vectors.txt");

pub struct Vector {
    pub valid: bool,
    pub key: Vec<u8>,
    pub nonce: Vec<u8>,
    pub aad: Vec<u8>,
    pub plaintext: Vec<u8>,
    pub sealed: Vec<u8>,
}

fn unhex(s: &str) -> Vec<u8> {
    if s == "-" {
        Vec::new()
    } else {
        hex::decode(s).expect("fixture is hex")
    }
}

pub fn vectors() -> Vec<Vector> {
    VECTORS
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(' ').collect();
            Vector {
                valid: f[0] == "pass",
                key: unhex(f[1]),
                nonce: unhex(f[2]),
                aad: unhex(f[3]),
                plaintext: unhex(f[4]),
                sealed: unhex(f[5]),
            }
        })
        .collect()
}

/// Runs every known-answer vector with a 96-bit nonce. Returns how many
/// ran, or the first mismatch.
pub fn known_answers() -> Result<usize, String> {
    let mut ran = 0;
    for (i, v) in vectors().iter().enumerate() {
        let (Ok(key), Ok(nonce)) = (<[u8; 32]>::try_from(v.key.as_slice()), <[u8; 12]>::try_from(v.nonce.as_slice()))
        else {
            continue;
        };
        if v.sealed.len() < 16 {
            continue;
        }
        let (ct, tag) = v.sealed.split_at(v.sealed.len() - 16);
        let tag: [u8; 16] = tag.try_into().unwrap();
        let mut buf = ct.to_vec();
        let opened = aead_decrypt(&key, &nonce, &v.aad, &mut buf, &tag);
        if v.valid {
            if !opened || buf != v.plaintext {
                return Err(format!("vector {i}: valid vector did not decrypt"));
            }
            let mut enc = v.plaintext.clone();
            let t = aead_encrypt(&key, &nonce, &v.aad, &mut enc);
            if enc != ct || t != tag {
                return Err(format!("vector {i}: ciphertext or tag differs"));
            }
        } else if opened {
            return Err(format!("vector {i}: invalid vector decrypted"));
        }
        ran += 1;
    }
    Ok(ran)
}

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 6, 9, 0, 0).unwrap()
}

pub fn random_payload(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.random_range(1..=max);
    let mut p = vec![0u8; n];
    rng.fill_bytes(&mut p);
    p
}

/// Seals and opens `n` random payloads, also through the wire format.
pub fn roundtrips(n: usize, seed: u64, journal: &NonceJournal) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks = KeyStore::generate(&mut rng, t0());
    for i in 0..n {
        let p = random_payload(&mut rng, 4096);
        let env = seal(&p, RecordId::new(format!("rec-{i}")), t0(), &ks, journal, &mut rng).map_err(|e| e.to_string())?;
        if open(&env, &ks).map_err(|e| e.to_string())? != p {
            return Err(format!("payload {i} differs after open"));
        }
        let (_, back) = open_bytes(&env.to_bytes(), &ks).map_err(|e| e.to_string())?;
        if back != p {
            return Err(format!("payload {i} differs after wire round trip"));
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct FlipReport {
    pub envelopes: usize,
    pub flips: usize,
    pub integrity_failures: usize,
    pub other: Vec<String>,
}

/// Flips every bit of every envelope in a corpus and checks that each
/// corrupted envelope is refused with an integrity failure.
pub fn bit_flip_sweep(envelopes: usize, seed: u64, journal: &NonceJournal) -> FlipReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks = KeyStore::generate(&mut rng, t0());
    let mut report = FlipReport { envelopes, ..Default::default() };
    for i in 0..envelopes {
        let p = random_payload(&mut rng, 64);
        let env = seal(&p, RecordId::new(format!("flip-{i}")), t0(), &ks, journal, &mut rng).expect("seal");
        let mut bytes = env.to_bytes();
        for bit in 0..bytes.len() * 8 {
            bytes[bit / 8] ^= 1 << (bit % 8);
            report.flips += 1;
            match open_bytes(&bytes, &ks) {
                Err(OpenError::IntegrityFailure { .. }) => report.integrity_failures += 1,
                Err(e) => report.other.push(format!("envelope {i} bit {bit}: {e}")),
                Ok(_) => report.other.push(format!("envelope {i} bit {bit}: opened")),
            }
            bytes[bit / 8] ^= 1 << (bit % 8);
        }
    }
    report
}
