//! The Privacy Enforcement Point: the owner's gateway.
//!
//! Encrypts readings before upload, enforces flow annotations, holds the
//! privacy configuration and epoch keys, turns consent into key grants, and
//! runs the event engine that issues time-limited emergency grants.

mod store;
mod trigger;

pub use store::{LocalEntry, LocalStore};
pub use trigger::{
    evaluate_trigger, Aggregate, Comparator, ExternalAssertion, Trigger, WindowSample, MAX_TRIGGER_DEPTH,
};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::audit::{DefaultConfiguration, RoleDirectory};
use crate::canonical::b64;
use crate::cloud::{ServiceRegistration, StoredRecord};
use crate::crypto::{
    self, encrypt_field, wrap_grant, Aad, CryptoError, EpochKey, GrantReason, KeyGrant, Keystore, SealingKeyPair,
    SealingPublicKey, Signature, SigningPublicKey,
};
use crate::ids::{DeviceId, EndpointId, FieldId, OwnerId, RecordId, RoleId, RuleId, ServiceId, Timestamp};
use crate::pdl::{self, MethodRef, MethodStatus, PdlError, PdlModel};
use crate::policy::{self, model_digest, PolicyDocument, PolicyError, ResolvedConsent, Selection};
use crate::rng::CryptoRngCore;

/// Upper bound on an emergency grant's lifetime: seven simulated days.
pub const MAX_GRANT_DURATION: u64 = 7 * 24 * 3600;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("reading belongs to owner `{0}`, not this gateway's owner")]
    ForeignReading(OwnerId),
    #[error("device `{device}` timestamp {got} precedes {last}")]
    NonMonotonicTimestamp { device: DeviceId, last: Timestamp, got: Timestamp },
    #[error("RestrictedTo requires at least one endpoint")]
    EmptyRestrictionSet,
    #[error("service `{0}` has no valid PASS audit verdict")]
    ServiceNotAudited(ServiceId),
    #[error("no selection for optional method `{0}`")]
    MissingSelection(MethodRef),
    #[error("selection for `{0}`, which is not a choice of this policy")]
    UnknownSelection(MethodRef),
    #[error("service model is invalid: {0}")]
    InvalidModel(String),
    #[error("assertion signature does not verify")]
    BadSignature,
    #[error("assertion signer is not trusted by any event rule")]
    UnknownAsserter,
    #[error("assertion concerns owner `{0}`")]
    WrongSubject(OwnerId),
    #[error("no consent recorded for service `{0}`")]
    NoSuchConsent(ServiceId),
    #[error("invalid event rule: {0}")]
    InvalidRule(String),
    #[error("signature on {0} does not verify under the TTP key")]
    Untrusted(&'static str),
    #[error("local store: {0}")]
    Store(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl From<PolicyError> for GatewayError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::MissingSelection(m) => GatewayError::MissingSelection(m),
            PolicyError::UnknownSelection(m) => GatewayError::UnknownSelection(m),
            other => GatewayError::InvalidModel(other.to_string()),
        }
    }
}

impl From<PdlError> for GatewayError {
    fn from(e: PdlError) -> Self {
        GatewayError::InvalidModel(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "level")]
pub enum AnnotationLevel {
    LocalOnly,
    RestrictedTo { endpoints: BTreeSet<EndpointId> },
    Unrestricted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReadingValue {
    Scalar(f64),
    Text(String),
    Bytes {
        #[serde(with = "b64")]
        bytes: Vec<u8>,
    },
}

impl ReadingValue {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            ReadingValue::Scalar(v) => Some(*v),
            _ => None,
        }
    }

    /// Plaintext bytes that get encrypted: the value's JSON encoding.
    pub fn to_plaintext(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("reading value serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub owner: OwnerId,
    pub device: DeviceId,
    pub field: FieldId,
    pub value: ReadingValue,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision")]
pub enum ForwardDecision {
    Forward { endpoint: EndpointId },
    StoreLocal,
    StoreLocalWithWarning { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Grantee {
    Service { service_id: ServiceId },
    Role { role_id: RoleId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRule {
    pub rule_id: RuleId,
    pub grantee: Grantee,
    pub scope: BTreeSet<FieldId>,
    pub trigger: Trigger,
    pub grant_duration: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub consent: ResolvedConsent,
    pub granted_fields: BTreeSet<FieldId>,
}

/// Which TTP preset this configuration started from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaultRef {
    pub preset_id: String,
    pub ttp_signature: Signature,
    pub default_choice: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfiguration {
    pub owner: OwnerId,
    /// Bumped on every change; each reading records the version it was decided under.
    pub version: u64,
    pub default_annotation: AnnotationLevel,
    #[serde(default)]
    pub annotations: BTreeMap<FieldId, AnnotationLevel>,
    #[serde(default)]
    pub consents: BTreeMap<ServiceId, ConsentRecord>,
    #[serde(default)]
    pub event_rules: Vec<EventRule>,
    pub rotation_period: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from_default: Option<DefaultRef>,
}

impl PrivacyConfiguration {
    pub fn new(owner: OwnerId, rotation_period: u64) -> Self {
        Self {
            owner,
            version: 0,
            default_annotation: AnnotationLevel::Unrestricted,
            annotations: BTreeMap::new(),
            consents: BTreeMap::new(),
            event_rules: Vec::new(),
            rotation_period,
            derived_from_default: None,
        }
    }

    pub fn annotation(&self, field: &FieldId) -> &AnnotationLevel {
        self.annotations.get(field).unwrap_or(&self.default_annotation)
    }
}

pub fn decide(level: &AnnotationLevel, endpoint: &EndpointId) -> ForwardDecision {
    match level {
        AnnotationLevel::LocalOnly => ForwardDecision::StoreLocal,
        AnnotationLevel::Unrestricted => ForwardDecision::Forward { endpoint: endpoint.clone() },
        AnnotationLevel::RestrictedTo { endpoints } if endpoints.contains(endpoint) => {
            ForwardDecision::Forward { endpoint: endpoint.clone() }
        }
        AnnotationLevel::RestrictedTo { .. } => ForwardDecision::StoreLocalWithWarning {
            reason: format!("endpoint `{endpoint}` is not in the field's restriction set"),
        },
    }
}

/// Attributes a service may receive keys for under the given choices: those
/// with attribute-level use, plus those with an edge to an enabled method.
pub fn grantable_fields(
    model: &PdlModel,
    selections: &BTreeMap<MethodRef, Selection>,
) -> Result<BTreeSet<FieldId>, GatewayError> {
    let edges = pdl::access_edges(model)?;
    let mut enabled = BTreeMap::new();
    for (m, _) in model.methods() {
        let on = match pdl::method_status(model, &m)? {
            MethodStatus::Mandatory => true,
            MethodStatus::Optional => match selections.get(&m) {
                Some(s) => *s == Selection::Use,
                None => return Err(GatewayError::MissingSelection(m)),
            },
        };
        enabled.insert(m, on);
    }
    let mut out: BTreeSet<FieldId> =
        model.attributes().filter(|(_, a)| a.use_text.is_some()).map(|(id, _)| id).collect();
    out.extend(edges.into_iter().filter(|e| enabled.get(&e.method) == Some(&true)).map(|e| e.attribute));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldEpoch {
    pub current: u64,
    pub started_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub decision: ForwardDecision,
    pub record: Option<StoredRecord>,
    pub config_version: u64,
    pub emergencies: Vec<EmergencyIssuance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmergencyIssuance {
    pub rule_id: RuleId,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub grants: Vec<KeyGrant>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentOutcome {
    pub consent: ResolvedConsent,
    pub granted_fields: BTreeSet<FieldId>,
    /// Grants issued by this call; empty when the same consent was already in force.
    pub grants: Vec<KeyGrant>,
    /// Fields rotated because a changed consent no longer covers them.
    pub rotated: Vec<FieldId>,
    /// Fresh current-epoch grants for other services whose fields were rotated.
    pub regrants: Vec<KeyGrant>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevokeOutcome {
    pub rotated: Vec<FieldId>,
    pub regrants: Vec<KeyGrant>,
}

#[derive(Debug, Clone, PartialEq)]
struct KnownService {
    public_key: SealingPublicKey,
    model: PdlModel,
    policy: PolicyDocument,
}

/// One owner's enforcement point.
#[derive(Debug)]
pub struct Pep {
    owner_keys: SealingKeyPair,
    ttp_pk: SigningPublicKey,
    config: PrivacyConfiguration,
    keystore: Keystore,
    epochs: BTreeMap<FieldId, FieldEpoch>,
    services: BTreeMap<ServiceId, KnownService>,
    emergency_grantees: BTreeMap<ServiceId, SealingPublicKey>,
    role_directory: Option<RoleDirectory>,
    store: LocalStore,
    samples: Vec<WindowSample>,
    assertions: Vec<ExternalAssertion>,
    outstanding: BTreeMap<RuleId, Timestamp>,
    issued: Vec<KeyGrant>,
    last_ts: BTreeMap<DeviceId, Timestamp>,
    next_record: u64,
}

impl Pep {
    pub fn new(config: PrivacyConfiguration, owner_keys: SealingKeyPair, ttp_pk: SigningPublicKey) -> Self {
        Self::with_store(config, owner_keys, ttp_pk, LocalStore::in_memory())
    }

    pub fn with_store(
        config: PrivacyConfiguration,
        owner_keys: SealingKeyPair,
        ttp_pk: SigningPublicKey,
        store: LocalStore,
    ) -> Self {
        let mut pep = Self {
            owner_keys,
            ttp_pk,
            config,
            keystore: Keystore::new(),
            epochs: BTreeMap::new(),
            services: BTreeMap::new(),
            emergency_grantees: BTreeMap::new(),
            role_directory: None,
            store,
            samples: Vec::new(),
            assertions: Vec::new(),
            outstanding: BTreeMap::new(),
            issued: Vec::new(),
            last_ts: BTreeMap::new(),
            next_record: 0,
        };
        pep.resume_from_store();
        pep
    }

    /// Rebuilds the counters a restarted gateway must not reset: record
    /// numbering, per-device timestamps and the trigger window samples.
    fn resume_from_store(&mut self) {
        for e in self.store.entries() {
            let r = &e.reading;
            if e.record_id.is_some() {
                self.next_record += 1;
            }
            let last = self.last_ts.entry(r.device.clone()).or_insert(r.timestamp);
            *last = (*last).max(r.timestamp);
            if let Some(v) = r.value.as_scalar() {
                self.samples.push(WindowSample { field: r.field.clone(), timestamp: r.timestamp, value: v });
            }
        }
    }

    pub fn owner(&self) -> &OwnerId {
        &self.config.owner
    }

    pub fn owner_public_key(&self) -> SealingPublicKey {
        self.owner_keys.public
    }

    pub fn owner_keys(&self) -> &SealingKeyPair {
        &self.owner_keys
    }

    pub fn config(&self) -> &PrivacyConfiguration {
        &self.config
    }

    pub fn keystore(&self) -> &Keystore {
        &self.keystore
    }

    pub fn local_store(&self) -> &LocalStore {
        &self.store
    }

    pub fn epoch(&self, field: &FieldId) -> Option<FieldEpoch> {
        self.epochs.get(field).copied()
    }

    /// Every grant this gateway has issued, in issuance order.
    pub fn issued_grants(&self) -> &[KeyGrant] {
        &self.issued
    }

    fn bump(&mut self) {
        self.config.version += 1;
    }

    fn current_key<R: CryptoRngCore>(&mut self, rng: &mut R, field: &FieldId, now: Timestamp) -> &EpochKey {
        let epoch = self.epochs.entry(field.clone()).or_insert(FieldEpoch { current: 0, started_at: now }).current;
        self.keystore.get_or_create(rng, &self.config.owner, field, epoch)
    }

    pub fn ingest<R: CryptoRngCore>(
        &mut self,
        rng: &mut R,
        reading: Reading,
        endpoint: &EndpointId,
    ) -> Result<IngestOutcome, GatewayError> {
        if reading.owner != self.config.owner {
            return Err(GatewayError::ForeignReading(reading.owner));
        }
        if let Some(&last) = self.last_ts.get(&reading.device) {
            if reading.timestamp < last {
                return Err(GatewayError::NonMonotonicTimestamp {
                    device: reading.device,
                    last,
                    got: reading.timestamp,
                });
            }
        }
        self.last_ts.insert(reading.device.clone(), reading.timestamp);
        let config_version = self.config.version;
        let decision = decide(self.config.annotation(&reading.field), endpoint);
        let now = reading.timestamp;

        let record = if matches!(decision, ForwardDecision::Forward { .. }) {
            let record_id = RecordId::new(format!("{}-{:08}", self.config.owner, self.next_record));
            self.next_record += 1;
            let owner = self.config.owner.clone();
            let plaintext = reading.value.to_plaintext();
            let key = self.current_key(rng, &reading.field, now).clone();
            let aad = Aad {
                owner: owner.clone(),
                record_id: record_id.clone(),
                field: reading.field.clone(),
                epoch: key.epoch,
                timestamp: now,
            };
            let ct = encrypt_field(rng, &key, &plaintext, &aad);
            Some(StoredRecord { owner, record_id, fields: vec![ct], received_at: now })
        } else {
            None
        };

        if let Some(v) = reading.value.as_scalar() {
            self.samples.push(WindowSample { field: reading.field.clone(), timestamp: now, value: v });
        }
        self.store
            .append(LocalEntry {
                reading,
                decision: decision.clone(),
                config_version,
                record_id: record.as_ref().map(|r| r.record_id.clone()),
            })
            .map_err(|e| GatewayError::Store(e.to_string()))?;
        let emergencies = self.evaluate_rules(rng, now)?;
        Ok(IngestOutcome { decision, record, config_version, emergencies })
    }

    pub fn set_annotation(&mut self, field: FieldId, level: AnnotationLevel) -> Result<&PrivacyConfiguration, GatewayError> {
        if matches!(&level, AnnotationLevel::RestrictedTo { endpoints } if endpoints.is_empty()) {
            return Err(GatewayError::EmptyRestrictionSet);
        }
        self.config.annotations.insert(field, level);
        self.bump();
        Ok(&self.config)
    }

    pub fn set_default_annotation(&mut self, level: AnnotationLevel) -> Result<&PrivacyConfiguration, GatewayError> {
        if matches!(&level, AnnotationLevel::RestrictedTo { endpoints } if endpoints.is_empty()) {
            return Err(GatewayError::EmptyRestrictionSet);
        }
        self.config.default_annotation = level;
        self.bump();
        Ok(&self.config)
    }

    /// Applies a TTP preset's annotations; its default choice is used by [`Pep::preset_selections`].
    pub fn apply_default(&mut self, preset: &DefaultConfiguration) -> Result<&PrivacyConfiguration, GatewayError> {
        let signature = preset.ttp_signature.filter(|_| preset.verify(&self.ttp_pk)).ok_or(GatewayError::Untrusted("preset"))?;
        self.config.default_annotation = preset.template.default_annotation.clone();
        for (field, level) in &preset.template.whitelist {
            self.config.annotations.insert(field.clone(), level.clone());
        }
        self.config.derived_from_default = Some(DefaultRef {
            preset_id: preset.preset_id.clone(),
            ttp_signature: signature,
            default_choice: preset.template.default_choice,
        });
        self.bump();
        Ok(&self.config)
    }

    /// The preset's default choice for every policy choice, with `overrides` winning.
    pub fn preset_selections(
        &self,
        policy: &PolicyDocument,
        overrides: &BTreeMap<MethodRef, Selection>,
    ) -> Result<BTreeMap<MethodRef, Selection>, GatewayError> {
        let default = self.config.derived_from_default.as_ref().map(|d| d.default_choice);
        policy
            .choices
            .iter()
            .map(|c| {
                overrides
                    .get(&c.method)
                    .copied()
                    .or(default)
                    .map(|s| (c.method.clone(), s))
                    .ok_or_else(|| GatewayError::MissingSelection(c.method.clone()))
            })
            .collect()
    }

    pub fn install_role_directory(&mut self, directory: RoleDirectory) -> Result<(), GatewayError> {
        if !directory.verify(&self.ttp_pk) {
            return Err(GatewayError::Untrusted("role directory"));
        }
        self.role_directory = Some(directory);
        Ok(())
    }

    /// Makes a service known as a possible emergency grantee without consent.
    pub fn register_grantee(&mut self, service: ServiceId, public_key: SealingPublicKey) {
        self.emergency_grantees.insert(service, public_key);
    }

    pub fn add_event_rule(&mut self, rule: EventRule) -> Result<&PrivacyConfiguration, GatewayError> {
        if rule.scope.is_empty() {
            return Err(GatewayError::InvalidRule("scope is empty".into()));
        }
        if rule.grant_duration == 0 || rule.grant_duration > MAX_GRANT_DURATION {
            return Err(GatewayError::InvalidRule(format!(
                "grant_duration must be in 1..={MAX_GRANT_DURATION} seconds"
            )));
        }
        if rule.trigger.depth() > MAX_TRIGGER_DEPTH {
            return Err(GatewayError::InvalidRule(format!("trigger nesting exceeds {MAX_TRIGGER_DEPTH}")));
        }
        if self.config.event_rules.iter().any(|r| r.rule_id == rule.rule_id) {
            return Err(GatewayError::InvalidRule(format!("duplicate rule id `{}`", rule.rule_id)));
        }
        self.config.event_rules.push(rule);
        self.bump();
        Ok(&self.config)
    }

    fn verify_listing(&self, reg: &ServiceRegistration) -> Result<PdlModel, GatewayError> {
        let not_audited = || GatewayError::ServiceNotAudited(reg.service_id.clone());
        let verdict = reg.verdict.as_ref().ok_or_else(not_audited)?;
        let model = pdl::parse(&reg.model_text).map_err(|e| GatewayError::InvalidModel(e.to_string()))?;
        let digest = model_digest(&model);
        let ok = verdict.result.is_pass()
            && verdict.verify(&self.ttp_pk)
            && verdict.service_id == reg.service_id
            && verdict.model_digest == digest
            && reg.policy.model_digest == digest
            && verdict.script_digest == reg.script.digest();
        if ok {
            Ok(model)
        } else {
            Err(not_audited())
        }
    }

    fn consent_grant<R: CryptoRngCore>(
        &mut self,
        rng: &mut R,
        service: &ServiceId,
        public_key: &SealingPublicKey,
        field: &FieldId,
        now: Timestamp,
    ) -> Result<KeyGrant, GatewayError> {
        let key = self.current_key(rng, field, now).clone();
        let grant = wrap_grant(rng, &[&key], service, public_key, GrantReason::Consent, now, None)?;
        self.issued.push(grant.clone());
        Ok(grant)
    }

    fn has_consent_grant(&self, service: &ServiceId, field: &FieldId, epoch: u64) -> bool {
        self.issued.iter().any(|g| {
            &g.grantee == service && &g.field == field && g.reason == GrantReason::Consent && g.covers(epoch)
        })
    }

    /// Re-learns a listed service without touching consent, e.g. after a restart.
    pub fn remember_service(&mut self, reg: &ServiceRegistration) -> Result<(), GatewayError> {
        let model = self.verify_listing(reg)?;
        self.services.insert(
            reg.service_id.clone(),
            KnownService { public_key: reg.public_key, model, policy: reg.policy.clone() },
        );
        Ok(())
    }

    pub fn apply_consent<R: CryptoRngCore>(
        &mut self,
        rng: &mut R,
        reg: &ServiceRegistration,
        selections: &BTreeMap<MethodRef, Selection>,
        now: Timestamp,
    ) -> Result<ConsentOutcome, GatewayError> {
        let model = self.verify_listing(reg)?;
        let consent = policy::resolve_choices(&reg.policy, selections)?;
        let fields = grantable_fields(&model, selections)?;
        let service = reg.service_id.clone();
        self.services.insert(
            service.clone(),
            KnownService { public_key: reg.public_key, model, policy: reg.policy.clone() },
        );

        let previous = self.config.consents.get(&service).map(|c| c.granted_fields.clone()).unwrap_or_default();
        let mut grants = Vec::new();
        for field in &fields {
            let epoch = self.current_key(rng, field, now).epoch;
            if !self.has_consent_grant(&service, field, epoch) {
                grants.push(self.consent_grant(rng, &service, &reg.public_key, field, now)?);
            }
        }
        let dropped: Vec<FieldId> = previous.difference(&fields).cloned().collect();
        self.config
            .consents
            .insert(service.clone(), ConsentRecord { consent: consent.clone(), granted_fields: fields.clone() });
        self.bump();
        let regrants = self.rotate_now(rng, &dropped, now)?;
        Ok(ConsentOutcome { consent, granted_fields: fields, grants, rotated: dropped, regrants })
    }

    /// Immediately starts a new epoch for `fields` and re-grants it to every
    /// service whose consent still covers the field.
    fn rotate_now<R: CryptoRngCore>(
        &mut self,
        rng: &mut R,
        fields: &[FieldId],
        now: Timestamp,
    ) -> Result<Vec<KeyGrant>, GatewayError> {
        for field in fields {
            if let Some(ep) = self.epochs.get_mut(field) {
                ep.current += 1;
                ep.started_at = now;
            }
        }
        let mut regrants = Vec::new();
        let holders: Vec<(ServiceId, FieldId)> = self
            .config
            .consents
            .iter()
            .flat_map(|(s, c)| fields.iter().filter(|f| c.granted_fields.contains(*f)).map(|f| (s.clone(), f.clone())))
            .collect();
        for (service, field) in holders {
            // Unknown after a restart until the gateway re-learns the service.
            let Some(pk) = self.services.get(&service).map(|k| k.public_key) else { continue };
            regrants.push(self.consent_grant(rng, &service, &pk, &field, now)?);
        }
        Ok(regrants)
    }

    pub fn revoke_consent<R: CryptoRngCore>(
        &mut self,
        rng: &mut R,
        service: &ServiceId,
        now: Timestamp,
    ) -> Result<RevokeOutcome, GatewayError> {
        let record = self.config.consents.remove(service).ok_or_else(|| GatewayError::NoSuchConsent(service.clone()))?;
        self.bump();
        let rotated: Vec<FieldId> = record.granted_fields.into_iter().collect();
        let regrants = self.rotate_now(rng, &rotated, now)?;
        Ok(RevokeOutcome { rotated, regrants })
    }

    /// Advances by one every field epoch whose rotation period has elapsed.
    pub fn rotate_epochs(&mut self, now: Timestamp) -> Vec<FieldId> {
        let period = self.config.rotation_period;
        if period == 0 {
            return Vec::new();
        }
        let mut rotated = Vec::new();
        for (field, ep) in self.epochs.iter_mut() {
            if now.saturating_sub(ep.started_at) >= period {
                ep.current += 1;
                ep.started_at = now;
                rotated.push(field.clone());
            }
        }
        rotated
    }

    /// Grants the current epoch of every consented field to services that lack it.
    pub fn refresh_consent_grants<R: CryptoRngCore>(&mut self, rng: &mut R, now: Timestamp) -> Result<Vec<KeyGrant>, GatewayError> {
        let wanted: Vec<(ServiceId, FieldId)> = self
            .config
            .consents
            .iter()
            .flat_map(|(s, c)| c.granted_fields.iter().map(|f| (s.clone(), f.clone())))
            .collect();
        let mut out = Vec::new();
        for (service, field) in wanted {
            let epoch = self.current_key(rng, &field, now).epoch;
            if !self.has_consent_grant(&service, &field, epoch) {
                let Some(pk) = self.services.get(&service).map(|k| k.public_key) else { continue };
                out.push(self.consent_grant(rng, &service, &pk, &field, now)?);
            }
        }
        Ok(out)
    }

    pub fn submit_external_assertion<R: CryptoRngCore>(
        &mut self,
        rng: &mut R,
        assertion: ExternalAssertion,
        now: Timestamp,
    ) -> Result<Vec<EmergencyIssuance>, GatewayError> {
        if !assertion.verify() {
            return Err(GatewayError::BadSignature);
        }
        if !self.config.event_rules.iter().any(|r| r.trigger.trusts(&assertion.asserter)) {
            return Err(GatewayError::UnknownAsserter);
        }
        if assertion.subject != self.config.owner {
            return Err(GatewayError::WrongSubject(assertion.subject));
        }
        self.assertions.push(assertion);
        self.evaluate_rules(rng, now)
    }

    fn resolve_grantee(&self, grantee: &Grantee) -> Vec<(ServiceId, SealingPublicKey)> {
        match grantee {
            Grantee::Service { service_id } => self
                .services
                .get(service_id)
                .map(|s| s.public_key)
                .or_else(|| self.emergency_grantees.get(service_id).copied())
                .map(|pk| vec![(service_id.clone(), pk)])
                .unwrap_or_default(),
            Grantee::Role { role_id } => self
                .role_directory
                .as_ref()
                .and_then(|d| d.roles.get(role_id))
                .map(|members| members.iter().map(|m| (m.service_id.clone(), m.public_key)).collect())
                .unwrap_or_default(),
        }
    }

    /// Fires every rule whose trigger holds and that has no unexpired grant outstanding.
    fn evaluate_rules<R: CryptoRngCore>(&mut self, rng: &mut R, now: Timestamp) -> Result<Vec<EmergencyIssuance>, GatewayError> {
        let mut out = Vec::new();
        let rules = self.config.event_rules.clone();
        for rule in rules {
            if self.outstanding.get(&rule.rule_id).is_some_and(|&exp| now < exp) {
                continue;
            }
            if !evaluate_trigger(&rule.trigger, &self.config.owner, &self.samples, &self.assertions, now) {
                continue;
            }
            let expires_at = now + rule.grant_duration;
            let mut grants = Vec::new();
            for (service, pk) in self.resolve_grantee(&rule.grantee) {
                for field in &rule.scope {
                    let current = self.current_key(rng, field, now).epoch;
                    let owner = self.config.owner.clone();
                    let mut keys: Vec<EpochKey> = Vec::new();
                    if let Some(prev) = current.checked_sub(1) {
                        keys.push(self.keystore.get_or_create(rng, &owner, field, prev).clone());
                    }
                    keys.push(self.keystore.get(&owner, field, current).expect("just created").clone());
                    let refs: Vec<&EpochKey> = keys.iter().collect();
                    let reason = GrantReason::Emergency { rule_id: rule.rule_id.clone() };
                    let grant = wrap_grant(rng, &refs, &service, &pk, reason, now, Some(expires_at))?;
                    self.issued.push(grant.clone());
                    grants.push(grant);
                }
            }
            self.outstanding.insert(rule.rule_id.clone(), expires_at);
            out.push(EmergencyIssuance { rule_id: rule.rule_id, issued_at: now, expires_at, grants });
        }
        Ok(out)
    }

    pub fn known_policy(&self, service: &ServiceId) -> Option<&PolicyDocument> {
        self.services.get(service).map(|s| &s.policy)
    }

    pub fn known_model(&self, service: &ServiceId) -> Option<&PdlModel> {
        self.services.get(service).map(|s| &s.model)
    }

    /// Exports the keystore sealed under the gateway master secret.
    pub fn export_keystore<R: CryptoRngCore>(&self, rng: &mut R, master: &[u8]) -> Vec<u8> {
        let plain = crypto::wire::encode_keystore(&self.keystore);
        crypto::seal_at_rest(rng, master, "pep-keystore", &plain)
    }

    pub fn import_keystore(&mut self, master: &[u8], sealed: &[u8]) -> Result<(), GatewayError> {
        let plain = crypto::open_at_rest(master, "pep-keystore", sealed)?;
        self.keystore = crypto::wire::decode_keystore(&plain)?;
        // Resume each field at its newest epoch. The epoch is taken to have
        // started at the field's last stored reading, so a rotation may come
        // late after a restart but never early.
        let owner = self.config.owner.clone();
        let fields: BTreeSet<FieldId> = self.keystore.iter().filter(|k| k.owner == owner).map(|k| k.field.clone()).collect();
        for field in fields {
            let Some(&current) = self.keystore.epochs(&owner, &field).last() else { continue };
            let started_at = self
                .store
                .entries()
                .iter()
                .filter(|e| e.reading.field == field && e.record_id.is_some())
                .map(|e| e.reading.timestamp)
                .max()
                .unwrap_or(0);
            self.epochs.insert(field, FieldEpoch { current, started_at });
        }
        Ok(())
    }
}
