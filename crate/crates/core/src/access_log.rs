//! Tamper-evident, owner-confidential access log.
//!
//! Each entry seals its payload to the owner, chains to its predecessor by
//! hash, and carries a platform signature over its entry hash. Every
//! [`CHECKPOINT_INTERVAL`] entries and at close the TTP countersigns the head.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{b64, hex32, to_canonical_line};
use crate::crypto::{
    self, chain_hash, wire, SealingPublicKey, SealingSecretKey, Signature, SigningKeyPair, SigningPublicKey,
    GENESIS_HASH,
};
use crate::ids::{FieldId, OwnerId, RecordId, RuleId, ServiceId, Timestamp};
use crate::pdl::MethodRef;
use crate::rng::CryptoRngCore;

pub const CHECKPOINT_INTERVAL: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("entry {seq}: payload does not open with this key")]
    UnsealFailure { seq: u64 },
    #[error("line {line}: {message}")]
    Unparseable { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LogOutcome {
    Value,
    DeniedNoConsent,
    DeniedNoKey,
    DeniedDisabledMethod,
    EmergencyGrantIssued { rule_id: RuleId },
}

/// The sealed body of an entry; only the owner can read it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogPayload {
    pub timestamp: Timestamp,
    pub service_id: ServiceId,
    /// Absent for grant-issuance entries, which no method caused.
    #[serde(default)]
    pub method: Option<MethodRef>,
    pub attribute: FieldId,
    pub purpose: String,
    pub outcome: LogOutcome,
    #[serde(default)]
    pub record_ids: Vec<RecordId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessLogEntry {
    pub seq: u64,
    pub owner: OwnerId,
    #[serde(with = "b64")]
    pub payload_ciphertext: Vec<u8>,
    #[serde(with = "hex32")]
    pub prev_hash: [u8; 32],
    #[serde(with = "hex32")]
    pub entry_hash: [u8; 32],
    pub platform_signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub owner: OwnerId,
    pub up_to_seq: u64,
    #[serde(with = "hex32")]
    pub head_hash: [u8; 32],
    pub ttp_signature: Signature,
}

/// Capability to countersign a log head; held by the TTP.
pub trait CheckpointSigner {
    fn sign_checkpoint(&self, owner: &OwnerId, up_to_seq: u64, head: [u8; 32]) -> Checkpoint;
}

/// Bytes hashed into the chain: domain tag, seq, owner, sealed payload.
pub fn entry_bytes(seq: u64, owner: &OwnerId, payload_ciphertext: &[u8]) -> Vec<u8> {
    let mut w = wire::Writer::new();
    w.raw(b"log-entry-v1");
    w.u64(seq);
    w.str(owner.as_str());
    w.bytes(payload_ciphertext);
    w.finish()
}

pub fn checkpoint_bytes(owner: &OwnerId, up_to_seq: u64, head: &[u8; 32]) -> Vec<u8> {
    let mut w = wire::Writer::new();
    w.raw(b"log-checkpoint-v1");
    w.str(owner.as_str());
    w.u64(up_to_seq);
    w.raw(head);
    w.finish()
}

pub fn make_checkpoint(ttp: &SigningKeyPair, owner: &OwnerId, up_to_seq: u64, head: [u8; 32]) -> Checkpoint {
    Checkpoint {
        owner: owner.clone(),
        up_to_seq,
        head_hash: head,
        ttp_signature: ttp.sign(&checkpoint_bytes(owner, up_to_seq, &head)),
    }
}

/// One owner's log as held by the platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerLog {
    pub owner: OwnerId,
    pub owner_pk: SealingPublicKey,
    pub entries: Vec<AccessLogEntry>,
    pub checkpoints: Vec<Checkpoint>,
}

impl OwnerLog {
    pub fn new(owner: OwnerId, owner_pk: SealingPublicKey) -> Self {
        Self { owner, owner_pk, entries: Vec::new(), checkpoints: Vec::new() }
    }

    pub fn head(&self) -> [u8; 32] {
        self.entries.last().map_or(GENESIS_HASH, |e| e.entry_hash)
    }

    pub fn append<R: CryptoRngCore>(
        &mut self,
        rng: &mut R,
        platform: &SigningKeyPair,
        payload: &LogPayload,
        checkpoints: Option<&dyn CheckpointSigner>,
    ) -> &AccessLogEntry {
        let seq = self.entries.len() as u64;
        let body = to_canonical_line(payload).expect("payload serializes");
        let payload_ciphertext = self.owner_pk.seal(rng, body.as_bytes());
        let prev_hash = self.head();
        let entry_hash = chain_hash(&prev_hash, &entry_bytes(seq, &self.owner, &payload_ciphertext));
        let platform_signature = platform.sign(&entry_hash);
        self.entries.push(AccessLogEntry {
            seq,
            owner: self.owner.clone(),
            payload_ciphertext,
            prev_hash,
            entry_hash,
            platform_signature,
        });
        if let Some(signer) = checkpoints {
            if (seq + 1).is_multiple_of(CHECKPOINT_INTERVAL) {
                self.checkpoints.push(signer.sign_checkpoint(&self.owner, seq, entry_hash));
            }
        }
        self.entries.last().expect("just pushed")
    }

    /// Checkpoints the current head unless it is already checkpointed.
    pub fn close(&mut self, signer: &dyn CheckpointSigner) -> Option<&Checkpoint> {
        let last = self.entries.last()?;
        if self.checkpoints.last().map(|c| c.up_to_seq) != Some(last.seq) {
            self.checkpoints.push(signer.sign_checkpoint(&self.owner, last.seq, last.entry_hash));
        }
        self.checkpoints.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FailureReason {
    SeqGap { expected: u64, found: u64 },
    OwnerMismatch,
    PrevHashMismatch,
    EntryHashMismatch,
    BadPlatformSignature,
    CheckpointSignature { up_to_seq: u64 },
    CheckpointHeadMismatch { up_to_seq: u64 },
    CheckpointOwnerMismatch { up_to_seq: u64 },
    CheckpointBeyondLog { up_to_seq: u64 },
    Unparseable { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "UPPERCASE")]
pub enum VerificationReport {
    Ok { entries: u64, checkpoints: u64 },
    Failed { index: u64, reason: FailureReason },
}

impl VerificationReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, VerificationReport::Ok { .. })
    }

    pub fn failure_index(&self) -> Option<u64> {
        match self {
            VerificationReport::Ok { .. } => None,
            VerificationReport::Failed { index, .. } => Some(*index),
        }
    }
}

/// Walks the chain in order; the first failing check determines the reported index.
pub fn verify_chain(
    entries: &[AccessLogEntry],
    checkpoints: &[Checkpoint],
    platform_pk: &SigningPublicKey,
    ttp_pk: &SigningPublicKey,
) -> VerificationReport {
    let fail = |index: u64, reason| VerificationReport::Failed { index, reason };
    let n = entries.len() as u64;
    let mut pending: Vec<&Checkpoint> = checkpoints.iter().collect();
    pending.sort_by_key(|c| c.up_to_seq);
    let mut pending = pending.into_iter().peekable();

    let (platform, ttp) = (crypto::PreparedVerifier::new(platform_pk), crypto::PreparedVerifier::new(ttp_pk));
    let mut head = GENESIS_HASH;
    for (i, e) in entries.iter().enumerate() {
        let i = i as u64;
        if e.seq != i {
            return fail(i, FailureReason::SeqGap { expected: i, found: e.seq });
        }
        if e.owner != entries[0].owner {
            return fail(i, FailureReason::OwnerMismatch);
        }
        if e.prev_hash != head {
            return fail(i, FailureReason::PrevHashMismatch);
        }
        let recomputed = chain_hash(&e.prev_hash, &entry_bytes(e.seq, &e.owner, &e.payload_ciphertext));
        if recomputed != e.entry_hash {
            return fail(i, FailureReason::EntryHashMismatch);
        }
        if !platform.verify(&e.entry_hash, &e.platform_signature) {
            return fail(i, FailureReason::BadPlatformSignature);
        }
        head = e.entry_hash;
        while let Some(c) = pending.next_if(|c| c.up_to_seq == i) {
            let up_to_seq = c.up_to_seq;
            if c.owner != e.owner {
                return fail(i, FailureReason::CheckpointOwnerMismatch { up_to_seq });
            }
            if !ttp.verify(&checkpoint_bytes(&c.owner, c.up_to_seq, &c.head_hash), &c.ttp_signature) {
                return fail(i, FailureReason::CheckpointSignature { up_to_seq });
            }
            if c.head_hash != head {
                return fail(i, FailureReason::CheckpointHeadMismatch { up_to_seq });
            }
        }
    }
    if let Some(c) = pending.next() {
        return fail(n, FailureReason::CheckpointBeyondLog { up_to_seq: c.up_to_seq });
    }
    VerificationReport::Ok { entries: n, checkpoints: checkpoints.len() as u64 }
}

pub fn read_as_owner(entries: &[AccessLogEntry], owner_sk: &SealingSecretKey) -> Vec<Result<LogPayload, LogError>> {
    entries
        .iter()
        .map(|e| {
            owner_sk
                .unseal(&e.payload_ciphertext)
                .and_then(|pt| serde_json::from_slice(&pt).ok())
                .ok_or(LogError::UnsealFailure { seq: e.seq })
        })
        .collect()
}

/// One compact canonical JSON object per line, LF-terminated.
pub fn to_json_lines<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| to_canonical_line(i).expect("log item serializes") + "\n")
        .collect()
}

/// Parses a JSON-lines file; blank lines are skipped, the error names the 0-based item index.
pub fn parse_json_lines<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<T>, LogError> {
    let mut out = Vec::new();
    for line in bytes.split(|b| *b == b'\n').filter(|l| !l.iter().all(u8::is_ascii_whitespace)) {
        let item = serde_json::from_slice(line)
            .map_err(|e| LogError::Unparseable { line: out.len(), message: e.to_string() })?;
        out.push(item);
    }
    Ok(out)
}

/// Verifies a log file and its checkpoint sidecar; an unparseable entry line fails at its index.
pub fn verify_files(
    log: &[u8],
    checkpoints: &[u8],
    platform_pk: &SigningPublicKey,
    ttp_pk: &SigningPublicKey,
) -> VerificationReport {
    let entries: Vec<AccessLogEntry> = match parse_json_lines(log) {
        Ok(e) => e,
        Err(LogError::Unparseable { line, message }) => {
            return VerificationReport::Failed { index: line as u64, reason: FailureReason::Unparseable { message } }
        }
        Err(e) => unreachable!("parse yields only Unparseable: {e}"),
    };
    let cps: Vec<Checkpoint> = match parse_json_lines(checkpoints) {
        Ok(c) => c,
        Err(LogError::Unparseable { message, .. }) => {
            return VerificationReport::Failed {
                index: entries.len() as u64,
                reason: FailureReason::Unparseable { message: format!("checkpoint file: {message}") },
            }
        }
        Err(e) => unreachable!("parse yields only Unparseable: {e}"),
    };
    verify_chain(&entries, &cps, platform_pk, ttp_pk)
}
