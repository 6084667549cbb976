//! Emergency triggers: predicates over recent readings and signed external assertions.

use serde::{Deserialize, Serialize};

use crate::crypto::{self, wire, Signature, SigningKeyPair, SigningPublicKey};
use crate::ids::{FieldId, OwnerId, Timestamp};

/// Maximum And/Or nesting depth.
pub const MAX_TRIGGER_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Latest,
    Min,
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Comparator {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Eq => lhs == rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Trigger {
    Internal { field: FieldId, aggregate: Aggregate, window: u64, comparator: Comparator, threshold: f64 },
    External { claim_id: String, trusted: Vec<SigningPublicKey>, freshness: u64 },
    And { left: Box<Trigger>, right: Box<Trigger> },
    Or { left: Box<Trigger>, right: Box<Trigger> },
}

impl Trigger {
    pub fn and(left: Trigger, right: Trigger) -> Self {
        Trigger::And { left: Box::new(left), right: Box::new(right) }
    }

    pub fn or(left: Trigger, right: Trigger) -> Self {
        Trigger::Or { left: Box::new(left), right: Box::new(right) }
    }

    /// And/Or nesting depth; leaves have depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Trigger::Internal { .. } | Trigger::External { .. } => 0,
            Trigger::And { left, right } | Trigger::Or { left, right } => 1 + left.depth().max(right.depth()),
        }
    }

    /// True iff every satisfying evaluation needs a trusted assertion of `claim`.
    pub fn requires_trusted_claim(&self, claim: &str) -> bool {
        match self {
            Trigger::Internal { .. } => false,
            Trigger::External { claim_id, trusted, .. } => claim_id == claim && !trusted.is_empty(),
            Trigger::And { left, right } => left.requires_trusted_claim(claim) || right.requires_trusted_claim(claim),
            Trigger::Or { left, right } => left.requires_trusted_claim(claim) && right.requires_trusted_claim(claim),
        }
    }

    pub fn trusts(&self, asserter: &SigningPublicKey) -> bool {
        match self {
            Trigger::Internal { .. } => false,
            Trigger::External { trusted, .. } => trusted.contains(asserter),
            Trigger::And { left, right } | Trigger::Or { left, right } => left.trusts(asserter) || right.trusts(asserter),
        }
    }
}

/// A signed statement by a third party about an owner (e.g. "unconscious").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalAssertion {
    pub claim_id: String,
    pub subject: OwnerId,
    pub asserter: SigningPublicKey,
    pub timestamp: Timestamp,
    pub signature: Signature,
}

impl ExternalAssertion {
    fn signed_bytes(claim_id: &str, subject: &OwnerId, asserter: &SigningPublicKey, timestamp: Timestamp) -> Vec<u8> {
        let mut w = wire::Writer::new();
        w.raw(b"assertion-v1");
        w.str(claim_id);
        w.str(subject.as_str());
        w.raw(&asserter.0);
        w.u64(timestamp);
        w.finish()
    }

    pub fn sign(key: &SigningKeyPair, claim_id: &str, subject: &OwnerId, timestamp: Timestamp) -> Self {
        let asserter = key.public();
        let signature = key.sign(&Self::signed_bytes(claim_id, subject, &asserter, timestamp));
        Self { claim_id: claim_id.to_string(), subject: subject.clone(), asserter, timestamp, signature }
    }

    pub fn verify(&self) -> bool {
        let msg = Self::signed_bytes(&self.claim_id, &self.subject, &self.asserter, self.timestamp);
        crypto::verify(&self.asserter, &msg, &self.signature)
    }
}

/// A scalar reading visible to internal triggers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub field: FieldId,
    pub timestamp: Timestamp,
    pub value: f64,
}

fn aggregate(kind: Aggregate, samples: &[&WindowSample]) -> Option<f64> {
    let values = samples.iter().map(|s| s.value);
    match kind {
        Aggregate::Latest => samples.iter().max_by_key(|s| s.timestamp).map(|s| s.value),
        Aggregate::Min => values.reduce(f64::min),
        Aggregate::Max => values.reduce(f64::max),
        Aggregate::Avg => (!samples.is_empty()).then(|| values.sum::<f64>() / samples.len() as f64),
    }
}

pub fn evaluate_trigger(
    trigger: &Trigger,
    owner: &OwnerId,
    samples: &[WindowSample],
    assertions: &[ExternalAssertion],
    now: Timestamp,
) -> bool {
    match trigger {
        Trigger::Internal { field, aggregate: kind, window, comparator, threshold } => {
            let from = now.saturating_sub(*window);
            let in_window: Vec<&WindowSample> = samples
                .iter()
                .filter(|s| &s.field == field && (from..=now).contains(&s.timestamp))
                .collect();
            aggregate(*kind, &in_window).is_some_and(|v| comparator.holds(v, *threshold))
        }
        Trigger::External { claim_id, trusted, freshness } => assertions.iter().any(|a| {
            &a.claim_id == claim_id
                && &a.subject == owner
                && trusted.contains(&a.asserter)
                && a.timestamp <= now
                && now - a.timestamp <= *freshness
                && a.verify()
        }),
        Trigger::And { left, right } => {
            evaluate_trigger(left, owner, samples, assertions, now) && evaluate_trigger(right, owner, samples, assertions, now)
        }
        Trigger::Or { left, right } => {
            evaluate_trigger(left, owner, samples, assertions, now) || evaluate_trigger(right, owner, samples, assertions, now)
        }
    }
}
