//! Data-protection primitives: per-field, per-epoch symmetric keys; authenticated
//! field encryption; key grants sealed to a service's public key; signatures;
//! and the hash chain used by the access log.
//!
//! Algorithms: XChaCha20-Poly1305 for fields, libsodium-style sealed boxes
//! (X25519) for grants, Ed25519 for signatures, SHA-256 for hashing.

mod at_rest;
mod keys;
pub mod wire;

pub use at_rest::{open_at_rest, seal_at_rest};
pub use keys::*;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::canonical::{b64, b64_vec};
use crate::ids::{FieldId, OwnerId, RecordId, RuleId, ServiceId, Timestamp};
use crate::rng::CryptoRngCore;

pub const WIRE_VERSION: u8 = 0x01;
pub const GENESIS_HASH: [u8; 32] = [0u8; 32];
pub const TAG_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("epoch {epoch} already exists for {owner}/{field}")]
    DuplicateEpoch { owner: OwnerId, field: FieldId, epoch: u64 },
    #[error("authentication failed")]
    AuthFailure,
    #[error("grant could not be unwrapped")]
    UnwrapFailure,
    #[error("grant epochs are not contiguous")]
    NonContiguousEpochs,
    #[error("grant keys belong to different owners or fields")]
    MixedFields,
    #[error("grant needs at least one key")]
    EmptyGrant,
    #[error("malformed encoding: {0}")]
    Malformed(String),
}

/// Symmetric data-protection key for one field of one owner during one epoch.
#[derive(Clone)]
pub struct EpochKey {
    pub owner: OwnerId,
    pub field: FieldId,
    pub epoch: u64,
    material: Zeroizing<[u8; 32]>,
}

impl fmt::Debug for EpochKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EpochKey")
            .field("owner", &self.owner)
            .field("field", &self.field)
            .field("epoch", &self.epoch)
            .finish_non_exhaustive()
    }
}

impl EpochKey {
    pub fn generate<R: CryptoRngCore>(rng: &mut R, owner: OwnerId, field: FieldId, epoch: u64) -> Self {
        let mut material = Zeroizing::new([0u8; 32]);
        rng.fill_bytes(material.as_mut());
        Self { owner, field, epoch, material }
    }

    pub(crate) fn from_material(owner: OwnerId, field: FieldId, epoch: u64, material: [u8; 32]) -> Self {
        Self { owner, field, epoch, material: Zeroizing::new(material) }
    }

    /// Raw key bytes. Only for tests and scanning; keys never leave the gateway unwrapped.
    pub fn expose_material(&self) -> &[u8; 32] {
        &self.material
    }
}

/// Gateway-side registry of epoch keys, per (owner, field).
#[derive(Debug, Default, Clone)]
pub struct Keystore {
    keys: BTreeMap<(OwnerId, FieldId), BTreeMap<u64, EpochKey>>,
}

impl Keystore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn new_epoch_key<R: CryptoRngCore>(
        &mut self,
        rng: &mut R,
        owner: &OwnerId,
        field: &FieldId,
        epoch: u64,
    ) -> Result<&EpochKey, CryptoError> {
        let slot = self.keys.entry((owner.clone(), field.clone())).or_default();
        if slot.contains_key(&epoch) {
            return Err(CryptoError::DuplicateEpoch { owner: owner.clone(), field: field.clone(), epoch });
        }
        let key = EpochKey::generate(rng, owner.clone(), field.clone(), epoch);
        Ok(slot.entry(epoch).or_insert(key))
    }

    pub fn get(&self, owner: &OwnerId, field: &FieldId, epoch: u64) -> Option<&EpochKey> {
        self.keys.get(&(owner.clone(), field.clone()))?.get(&epoch)
    }

    /// The key for `epoch`, created on first use.
    pub fn get_or_create<R: CryptoRngCore>(
        &mut self,
        rng: &mut R,
        owner: &OwnerId,
        field: &FieldId,
        epoch: u64,
    ) -> &EpochKey {
        self.keys
            .entry((owner.clone(), field.clone()))
            .or_default()
            .entry(epoch)
            .or_insert_with(|| EpochKey::generate(rng, owner.clone(), field.clone(), epoch))
    }

    pub fn epochs(&self, owner: &OwnerId, field: &FieldId) -> Vec<u64> {
        self.keys
            .get(&(owner.clone(), field.clone()))
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.keys.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &EpochKey> {
        self.keys.values().flat_map(|m| m.values())
    }

    pub fn insert(&mut self, key: EpochKey) {
        self.keys.entry((key.owner.clone(), key.field.clone())).or_default().insert(key.epoch, key);
    }
}

/// Associated data bound into every field ciphertext.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aad {
    pub owner: OwnerId,
    pub record_id: RecordId,
    pub field: FieldId,
    pub epoch: u64,
    pub timestamp: Timestamp,
}

impl Aad {
    /// Canonical encoding: version byte, three length-prefixed strings, two LE u64.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = wire::Writer::new();
        w.u8(WIRE_VERSION);
        w.str(self.owner.as_str());
        w.str(self.record_id.as_str());
        w.str(self.field.as_str());
        w.u64(self.epoch);
        w.u64(self.timestamp);
        w.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldCiphertext {
    pub field: FieldId,
    pub epoch: u64,
    #[serde(with = "b64")]
    pub nonce: [u8; 24],
    /// Ciphertext followed by the 16-byte Poly1305 tag.
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
    pub aad: Aad,
}

pub fn encrypt_field<R: CryptoRngCore>(rng: &mut R, key: &EpochKey, plaintext: &[u8], aad: &Aad) -> FieldCiphertext {
    let cipher = XChaCha20Poly1305::new(key.material.as_ref().into());
    let mut nonce = [0u8; 24];
    rng.fill_bytes(&mut nonce);
    let aad_bytes = aad.encode();
    let ciphertext = cipher
        .encrypt(XNonce::from_slice(&nonce), Payload { msg: plaintext, aad: &aad_bytes })
        .expect("XChaCha20-Poly1305 encryption is infallible for in-memory buffers");
    FieldCiphertext { field: aad.field.clone(), epoch: aad.epoch, nonce, ciphertext, aad: aad.clone() }
}

/// Decrypts with the caller-supplied associated data, not the copy carried by `ct`.
pub fn decrypt_field(key: &EpochKey, ct: &FieldCiphertext, aad: &Aad) -> Result<Vec<u8>, CryptoError> {
    let cipher = XChaCha20Poly1305::new(key.material.as_ref().into());
    let aad_bytes = aad.encode();
    cipher
        .decrypt(XNonce::from_slice(&ct.nonce), Payload { msg: &ct.ciphertext, aad: &aad_bytes })
        .map_err(|_| CryptoError::AuthFailure)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GrantReason {
    Consent,
    Emergency { rule_id: RuleId },
}

/// Epoch keys for one field, sealed to a service's public key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyGrant {
    pub grantee: ServiceId,
    pub owner: OwnerId,
    pub field: FieldId,
    pub epoch_lo: u64,
    pub epoch_hi: u64,
    /// One sealed box per epoch in `epoch_lo..=epoch_hi`.
    #[serde(with = "b64_vec")]
    pub wrapped: Vec<Vec<u8>>,
    pub issued_at: Timestamp,
    #[serde(default)]
    pub expires_at: Option<Timestamp>,
    pub reason: GrantReason,
}

impl KeyGrant {
    pub fn covers(&self, epoch: u64) -> bool {
        (self.epoch_lo..=self.epoch_hi).contains(&epoch)
    }

    pub fn is_live(&self, now: Timestamp) -> bool {
        self.expires_at.is_none_or(|e| now < e)
    }
}

fn grant_payload(owner: &OwnerId, field: &FieldId, epoch: u64, material: &[u8; 32]) -> Zeroizing<Vec<u8>> {
    let mut w = wire::Writer::new();
    w.raw(b"grant-key-v1");
    w.str(owner.as_str());
    w.str(field.as_str());
    w.u64(epoch);
    w.raw(material);
    Zeroizing::new(w.finish())
}

#[allow(clippy::too_many_arguments)]
pub fn wrap_grant<R: CryptoRngCore>(
    rng: &mut R,
    keys: &[&EpochKey],
    grantee: &ServiceId,
    service_pk: &SealingPublicKey,
    reason: GrantReason,
    issued_at: Timestamp,
    expires_at: Option<Timestamp>,
) -> Result<KeyGrant, CryptoError> {
    let first = keys.first().ok_or(CryptoError::EmptyGrant)?;
    if keys.iter().any(|k| k.owner != first.owner || k.field != first.field) {
        return Err(CryptoError::MixedFields);
    }
    let mut sorted: Vec<&EpochKey> = keys.to_vec();
    sorted.sort_by_key(|k| k.epoch);
    if sorted.windows(2).any(|w| w[1].epoch != w[0].epoch + 1) {
        return Err(CryptoError::NonContiguousEpochs);
    }
    let wrapped = sorted
        .iter()
        .map(|k| service_pk.seal(rng, &grant_payload(&k.owner, &k.field, k.epoch, &k.material)))
        .collect();
    Ok(KeyGrant {
        grantee: grantee.clone(),
        owner: first.owner.clone(),
        field: first.field.clone(),
        epoch_lo: sorted[0].epoch,
        epoch_hi: sorted[sorted.len() - 1].epoch,
        wrapped,
        issued_at,
        expires_at,
        reason,
    })
}

pub fn unwrap_grant(grant: &KeyGrant, service_sk: &SealingSecretKey) -> Result<Vec<EpochKey>, CryptoError> {
    let expected = grant.epoch_hi.checked_sub(grant.epoch_lo).map(|d| d + 1);
    if expected != Some(grant.wrapped.len() as u64) {
        return Err(CryptoError::UnwrapFailure);
    }
    grant
        .wrapped
        .iter()
        .zip(grant.epoch_lo..)
        .map(|(sealed, epoch)| {
            let plain = Zeroizing::new(service_sk.unseal(sealed).ok_or(CryptoError::UnwrapFailure)?);
            let prefix = grant_payload(&grant.owner, &grant.field, epoch, &[0u8; 32]);
            let head = prefix.len() - 32;
            if plain.len() != prefix.len() || plain[..head] != prefix[..head] {
                return Err(CryptoError::UnwrapFailure);
            }
            let mut material = [0u8; 32];
            material.copy_from_slice(&plain[head..]);
            Ok(EpochKey::from_material(grant.owner.clone(), grant.field.clone(), epoch, material))
        })
        .collect()
}

/// SHA-256(prev || entry).
pub fn chain_hash(prev: &[u8; 32], entry: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(entry);
    h.finalize().into()
}

/// Folds [`chain_hash`] over `entries` starting from the genesis value.
pub fn chain_over<'a>(entries: impl IntoIterator<Item = &'a [u8]>) -> [u8; 32] {
    entries.into_iter().fold(GENESIS_HASH, |h, e| chain_hash(&h, e))
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}
