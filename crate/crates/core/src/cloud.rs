//! Multi-tenant mock cloud platform.
//!
//! Stores ciphertext records and key grants per owner, hosts audited services
//! as declarative access scripts, and routes every attribute access through a
//! monitor that appends to the owner's access log.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

use crate::access_log::{AccessLogEntry, Checkpoint, CheckpointSigner, LogOutcome, LogPayload, OwnerLog};
use crate::audit::{AccessScript, AuditVerdict, EmergencyDeclaration};
use crate::canonical::b64;
use crate::crypto::{
    self, decrypt_field, unwrap_grant, CryptoError, EpochKey, FieldCiphertext, GrantReason, KeyGrant,
    SealingKeyPair, SealingPublicKey, SealingSecretKey, SigningKeyPair, SigningPublicKey,
};
use crate::ids::{FieldId, OwnerId, RecordId, RuleId, ServiceId, Timestamp};
use crate::pdl::{self, MethodRef, PdlModel};
use crate::policy::{self, model_digest, MonitoringSpec, PolicyDocument, ResolvedConsent};
use crate::rng::{CryptoRngCore, Drbg};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CloudError {
    #[error("unknown or unlisted service `{0}`")]
    UnknownService(ServiceId),
    #[error("service `{0}` is already registered")]
    DuplicateService(ServiceId),
    #[error("method `{0}` is not declared by the service")]
    UnknownMethod(MethodRef),
    #[error("policy or verdict digest does not match the model")]
    DigestMismatch,
    #[error("monitoring spec does not match the model")]
    MonitoringMismatch,
    #[error("script references undeclared method `{0}`")]
    UnknownScriptMethod(MethodRef),
    #[error("service model is invalid: {0}")]
    InvalidModel(String),
    #[error("record `{0}`: ciphertext metadata disagrees with the envelope")]
    AadMismatch(RecordId),
    #[error("owner `{0}` has not registered a log key")]
    UnknownOwner(OwnerId),
    #[error("owner `{0}` is registered with a different log key")]
    OwnerKeyConflict(OwnerId),
    #[error("grant concerns owner `{0}`, not the uploading owner")]
    GrantOwnerMismatch(OwnerId),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// What a developer submits; the platform assigns the runtime key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSubmission {
    pub service_id: ServiceId,
    pub model_text: String,
    pub policy: PolicyDocument,
    pub monitoring: MonitoringSpec,
    pub script: AccessScript,
    #[serde(default)]
    pub emergency_declarations: Vec<EmergencyDeclaration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRegistration {
    pub service_id: ServiceId,
    pub public_key: SealingPublicKey,
    /// Canonical PDL text of the model.
    pub model_text: String,
    pub policy: PolicyDocument,
    pub monitoring: MonitoringSpec,
    pub script: AccessScript,
    #[serde(default)]
    pub emergency_declarations: Vec<EmergencyDeclaration>,
    #[serde(default)]
    pub verdict: Option<AuditVerdict>,
}

impl ServiceRegistration {
    pub fn model(&self) -> Result<PdlModel, CloudError> {
        pdl::parse(&self.model_text).map_err(|e| CloudError::InvalidModel(e.to_string()))
    }

    /// Listed iff the verdict is PASS, verifies under the TTP key, and binds the current model and script.
    pub fn is_listable(&self, ttp_pk: &SigningPublicKey) -> bool {
        let Some(v) = &self.verdict else { return false };
        let Ok(model) = self.model() else { return false };
        v.result.is_pass()
            && v.verify(ttp_pk)
            && v.service_id == self.service_id
            && v.model_digest == model_digest(&model)
            && v.script_digest == self.script.digest()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub owner: OwnerId,
    pub record_id: RecordId,
    pub fields: Vec<FieldCiphertext>,
    pub received_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreAck {
    pub record_id: RecordId,
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "select", rename_all = "lowercase")]
pub enum RecordSelector {
    #[default]
    All,
    Latest,
    Ids { ids: Vec<RecordId> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordValue {
    pub record_id: RecordId,
    #[serde(with = "b64")]
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum AccessOutcome {
    Value { values: Vec<RecordValue>, withheld: Vec<RecordId> },
    DeniedNoConsent,
    DeniedNoKey,
    DeniedDisabledMethod,
}

impl AccessOutcome {
    pub fn log_outcome(&self) -> LogOutcome {
        match self {
            AccessOutcome::Value { .. } => LogOutcome::Value,
            AccessOutcome::DeniedNoConsent => LogOutcome::DeniedNoConsent,
            AccessOutcome::DeniedNoKey => LogOutcome::DeniedNoKey,
            AccessOutcome::DeniedDisabledMethod => LogOutcome::DeniedDisabledMethod,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeAccess {
    pub method: MethodRef,
    pub attribute: FieldId,
    pub outcome: AccessOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationResult {
    pub method: MethodRef,
    /// In execution order; callee accesses follow their caller's own reads.
    pub accesses: Vec<AttributeAccess>,
}

/// Consent plus grants pushed by a gateway; `consent: None` withdraws consent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentSync {
    pub owner: OwnerId,
    pub owner_pk: SealingPublicKey,
    pub service_id: ServiceId,
    #[serde(default)]
    pub consent: Option<ResolvedConsent>,
    #[serde(default)]
    pub grants: Vec<KeyGrant>,
}

/// Emergency grants issued by a gateway's event engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantUpload {
    pub owner: OwnerId,
    pub owner_pk: SealingPublicKey,
    pub rule_id: RuleId,
    pub grants: Vec<KeyGrant>,
    pub issued_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogBundle {
    pub entries: Vec<AccessLogEntry>,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug)]
struct HostedService {
    registration: ServiceRegistration,
    model: PdlModel,
    runtime: SealingKeyPair,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Tenant {
    records: BTreeMap<RecordId, StoredRecord>,
    grants: Vec<KeyGrant>,
    consents: BTreeMap<ServiceId, ResolvedConsent>,
    log: Option<OwnerLog>,
}

pub struct Cloud {
    ttp_pk: SigningPublicKey,
    platform: SigningKeyPair,
    checkpoints: Option<Arc<dyn CheckpointSigner + Send + Sync>>,
    rng: Drbg,
    services: BTreeMap<ServiceId, HostedService>,
    tenants: BTreeMap<OwnerId, Tenant>,
}

impl std::fmt::Debug for Cloud {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cloud")
            .field("services", &self.services.keys().collect::<Vec<_>>())
            .field("tenants", &self.tenants.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl Cloud {
    pub fn new(
        platform: SigningKeyPair,
        ttp_pk: SigningPublicKey,
        checkpoints: Option<Arc<dyn CheckpointSigner + Send + Sync>>,
        rng: Drbg,
    ) -> Self {
        Self { ttp_pk, platform, checkpoints, rng, services: BTreeMap::new(), tenants: BTreeMap::new() }
    }

    pub fn platform_public_key(&self) -> SigningPublicKey {
        self.platform.public()
    }

    pub fn ttp_public_key(&self) -> SigningPublicKey {
        self.ttp_pk
    }

    pub fn register_service(&mut self, sub: ServiceSubmission) -> Result<ServiceRegistration, CloudError> {
        if self.services.contains_key(&sub.service_id) {
            return Err(CloudError::DuplicateService(sub.service_id));
        }
        let model = pdl::parse(&sub.model_text).map_err(|e| CloudError::InvalidModel(e.to_string()))?;
        pdl::ensure_valid(&model).map_err(|e| CloudError::InvalidModel(e.to_string()))?;
        if sub.policy.model_digest != model_digest(&model) || sub.policy.service_id != sub.service_id {
            return Err(CloudError::DigestMismatch);
        }
        let expected = policy::generate_monitoring_spec(&model).map_err(|e| CloudError::InvalidModel(e.to_string()))?;
        if sub.monitoring != expected {
            return Err(CloudError::MonitoringMismatch);
        }
        if let Some(m) = sub.script.referenced_methods().into_iter().find(|m| model.method(m).is_none()) {
            return Err(CloudError::UnknownScriptMethod(m.clone()));
        }
        let runtime = SealingKeyPair::generate(&mut self.rng);
        let registration = ServiceRegistration {
            service_id: sub.service_id,
            public_key: runtime.public,
            model_text: sub.model_text,
            policy: sub.policy,
            monitoring: sub.monitoring,
            script: sub.script,
            emergency_declarations: sub.emergency_declarations,
            verdict: None,
        };
        self.services.insert(
            registration.service_id.clone(),
            HostedService { registration: registration.clone(), model, runtime },
        );
        Ok(registration)
    }

    pub fn attach_verdict(&mut self, verdict: AuditVerdict) -> Result<(), CloudError> {
        let hosted = self
            .services
            .get_mut(&verdict.service_id)
            .ok_or_else(|| CloudError::UnknownService(verdict.service_id.clone()))?;
        if verdict.model_digest != model_digest(&hosted.model) || verdict.script_digest != hosted.registration.script.digest() {
            return Err(CloudError::DigestMismatch);
        }
        hosted.registration.verdict = Some(verdict);
        Ok(())
    }

    /// Registration as stored, whether or not it is listed.
    pub fn registration(&self, service: &ServiceId) -> Option<&ServiceRegistration> {
        self.services.get(service).map(|h| &h.registration)
    }

    /// Mutable access for fault-injection in tests and tools.
    pub fn registration_mut(&mut self, service: &ServiceId) -> Option<&mut ServiceRegistration> {
        self.services.get_mut(service).map(|h| &mut h.registration)
    }

    /// PASS-verdict services whose verdict re-verifies now.
    pub fn list_services(&self) -> Vec<ServiceRegistration> {
        self.services
            .values()
            .filter(|h| h.registration.is_listable(&self.ttp_pk))
            .map(|h| h.registration.clone())
            .collect()
    }

    fn listed(&self, service: &ServiceId) -> Result<&HostedService, CloudError> {
        self.services
            .get(service)
            .filter(|h| h.registration.is_listable(&self.ttp_pk))
            .ok_or_else(|| CloudError::UnknownService(service.clone()))
    }

    pub fn register_owner(&mut self, owner: &OwnerId, owner_pk: SealingPublicKey) -> Result<(), CloudError> {
        let tenant = self.tenants.entry(owner.clone()).or_default();
        match &tenant.log {
            Some(log) if log.owner_pk != owner_pk => Err(CloudError::OwnerKeyConflict(owner.clone())),
            Some(_) => Ok(()),
            None => {
                tenant.log = Some(OwnerLog::new(owner.clone(), owner_pk));
                Ok(())
            }
        }
    }

    pub fn store_record(&mut self, record: StoredRecord) -> Result<StoreAck, CloudError> {
        let consistent = record.fields.iter().all(|ct| {
            ct.aad.owner == record.owner
                && ct.aad.record_id == record.record_id
                && ct.aad.field == ct.field
                && ct.aad.epoch == ct.epoch
        });
        if !consistent {
            return Err(CloudError::AadMismatch(record.record_id));
        }
        let tenant = self.tenants.entry(record.owner.clone()).or_default();
        let record_id = record.record_id.clone();
        let duplicate = tenant.records.contains_key(&record_id);
        if !duplicate {
            tenant.records.insert(record_id.clone(), record);
        }
        Ok(StoreAck { record_id, duplicate })
    }

    pub fn record(&self, owner: &OwnerId, record_id: &RecordId) -> Option<&StoredRecord> {
        self.tenants.get(owner)?.records.get(record_id)
    }

    pub fn records(&self, owner: &OwnerId) -> impl Iterator<Item = &StoredRecord> {
        self.tenants.get(owner).into_iter().flat_map(|t| t.records.values())
    }

    /// Ciphertexts held for `field` across every owner.
    pub fn ciphertext_count(&self, field: &FieldId) -> usize {
        self.tenants
            .values()
            .flat_map(|t| t.records.values())
            .flat_map(|r| &r.fields)
            .filter(|ct| &ct.field == field)
            .count()
    }

    pub fn grants(&self, owner: &OwnerId) -> &[KeyGrant] {
        self.tenants.get(owner).map_or(&[], |t| t.grants.as_slice())
    }

    pub fn consent(&self, owner: &OwnerId, service: &ServiceId) -> Option<&ResolvedConsent> {
        self.tenants.get(owner)?.consents.get(service)
    }

    fn accept_grants(&mut self, owner: &OwnerId, grants: Vec<KeyGrant>) -> Result<(), CloudError> {
        if let Some(g) = grants.iter().find(|g| &g.owner != owner) {
            return Err(CloudError::GrantOwnerMismatch(g.owner.clone()));
        }
        let tenant = self.tenants.entry(owner.clone()).or_default();
        for g in grants {
            if !tenant.grants.contains(&g) {
                tenant.grants.push(g);
            }
        }
        Ok(())
    }

    pub fn consent_sync(&mut self, sync: ConsentSync) -> Result<(), CloudError> {
        self.register_owner(&sync.owner, sync.owner_pk)?;
        let hosted = self
            .services
            .get(&sync.service_id)
            .ok_or_else(|| CloudError::UnknownService(sync.service_id.clone()))?;
        if let Some(c) = &sync.consent {
            if c.model_digest != model_digest(&hosted.model) || c.service_id != sync.service_id {
                return Err(CloudError::DigestMismatch);
            }
        }
        self.accept_grants(&sync.owner, sync.grants)?;
        let tenant = self.tenants.get_mut(&sync.owner).expect("registered above");
        match sync.consent {
            Some(c) => {
                tenant.consents.insert(sync.service_id, c);
            }
            None => {
                tenant.consents.remove(&sync.service_id);
            }
        }
        Ok(())
    }

    /// Stores emergency grants and logs one issuance entry per grant.
    pub fn store_emergency_grants(&mut self, upload: GrantUpload) -> Result<(), CloudError> {
        self.register_owner(&upload.owner, upload.owner_pk)?;
        let payloads: Vec<LogPayload> = upload
            .grants
            .iter()
            .map(|g| LogPayload {
                timestamp: upload.issued_at,
                service_id: g.grantee.clone(),
                method: None,
                attribute: g.field.clone(),
                purpose: format!("emergency access under rule {}", upload.rule_id),
                outcome: LogOutcome::EmergencyGrantIssued { rule_id: upload.rule_id.clone() },
                record_ids: Vec::new(),
            })
            .collect();
        self.accept_grants(&upload.owner, upload.grants)?;
        for p in &payloads {
            self.append_log(&upload.owner, p)?;
        }
        Ok(())
    }

    fn append_log(&mut self, owner: &OwnerId, payload: &LogPayload) -> Result<(), CloudError> {
        let log = self
            .tenants
            .get_mut(owner)
            .and_then(|t| t.log.as_mut())
            .ok_or_else(|| CloudError::UnknownOwner(owner.clone()))?;
        let signer = self.checkpoints.as_deref().map(|s| s as &dyn CheckpointSigner);
        log.append(&mut self.rng, &self.platform, payload, signer);
        Ok(())
    }

    pub fn invoke_method(
        &mut self,
        service: &ServiceId,
        method: &MethodRef,
        owner: &OwnerId,
        selector: &RecordSelector,
        now: Timestamp,
    ) -> Result<InvocationResult, CloudError> {
        let hosted = self.listed(service)?;
        if hosted.model.method(method).is_none() {
            return Err(CloudError::UnknownMethod(method.clone()));
        }
        let tenant = self
            .tenants
            .get(owner)
            .filter(|t| t.log.is_some())
            .ok_or_else(|| CloudError::UnknownOwner(owner.clone()))?;
        let accesses = execute(hosted, tenant, service, method, selector, now);
        let payloads: Vec<LogPayload> = accesses
            .iter()
            .map(|a| LogPayload {
                timestamp: now,
                service_id: service.clone(),
                method: Some(a.method.clone()),
                attribute: a.attribute.clone(),
                purpose: hosted
                    .registration
                    .monitoring
                    .purpose_for(&a.attribute, &a.method)
                    .unwrap_or(UNDECLARED_PURPOSE)
                    .to_string(),
                outcome: a.outcome.log_outcome(),
                record_ids: match &a.outcome {
                    AccessOutcome::Value { values, .. } => values.iter().map(|v| v.record_id.clone()).collect(),
                    _ => Vec::new(),
                },
            })
            .collect();
        for p in &payloads {
            self.append_log(owner, p)?;
        }
        Ok(InvocationResult { method: method.clone(), accesses })
    }

    pub fn fetch_log(&self, owner: &OwnerId) -> LogBundle {
        match self.tenants.get(owner).and_then(|t| t.log.as_ref()) {
            Some(log) => LogBundle { entries: log.entries.clone(), checkpoints: log.checkpoints.clone() },
            None => LogBundle { entries: Vec::new(), checkpoints: Vec::new() },
        }
    }

    /// Countersigns the current head of `owner`'s log, if a TTP signer is attached.
    pub fn close_log(&mut self, owner: &OwnerId) -> Option<Checkpoint> {
        let signer = self.checkpoints.clone()?;
        let log = self.tenants.get_mut(owner)?.log.as_mut()?;
        log.close(signer.as_ref()).cloned()
    }

    pub fn owners(&self) -> impl Iterator<Item = &OwnerId> {
        self.tenants.keys()
    }

    pub fn snapshot<R: CryptoRngCore>(&self, rng: &mut R, master: &[u8]) -> CloudSnapshot {
        CloudSnapshot {
            services: self
                .services
                .values()
                .map(|h| PersistedService {
                    registration: h.registration.clone(),
                    sealed_runtime_key: crypto::seal_at_rest(
                        rng,
                        master,
                        &format!("service-runtime-key:{}", h.registration.service_id),
                        h.runtime.secret.expose_bytes(),
                    ),
                })
                .collect(),
            tenants: self.tenants.clone().into_iter().map(|(k, v)| (k, PersistedTenant(v))).collect(),
        }
    }

    pub fn restore(
        snapshot: CloudSnapshot,
        master: &[u8],
        platform: SigningKeyPair,
        ttp_pk: SigningPublicKey,
        checkpoints: Option<Arc<dyn CheckpointSigner + Send + Sync>>,
        rng: Drbg,
    ) -> Result<Self, CloudError> {
        let mut cloud = Cloud::new(platform, ttp_pk, checkpoints, rng);
        for s in snapshot.services {
            let label = format!("service-runtime-key:{}", s.registration.service_id);
            let bytes = crypto::open_at_rest(master, &label, &s.sealed_runtime_key)?;
            let secret: [u8; 32] = bytes.as_slice().try_into().map_err(|_| CryptoError::Malformed("runtime key".into()))?;
            let runtime = SealingKeyPair::from_secret(SealingSecretKey::from_bytes(secret));
            let model = s.registration.model()?;
            cloud.services.insert(s.registration.service_id.clone(), HostedService { registration: s.registration, model, runtime });
        }
        cloud.tenants = snapshot.tenants.into_iter().map(|(k, v)| (k, v.0)).collect();
        Ok(cloud)
    }
}

/// Logged purpose for a read the monitoring spec does not cover.
pub const UNDECLARED_PURPOSE: &str = "undeclared access";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistedService {
    pub registration: ServiceRegistration,
    #[serde(with = "b64")]
    pub sealed_runtime_key: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersistedTenant(Tenant);

/// Whole-platform state for the single-file store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudSnapshot {
    pub services: Vec<PersistedService>,
    pub tenants: BTreeMap<OwnerId, PersistedTenant>,
}

enum Access<'a> {
    NoConsent,
    Disabled,
    Allowed { grants: Vec<&'a KeyGrant> },
}

/// Runs `entry` and every enabled callee once, depth-first, producing one access per read.
fn execute(
    hosted: &HostedService,
    tenant: &Tenant,
    service: &ServiceId,
    entry: &MethodRef,
    selector: &RecordSelector,
    now: Timestamp,
) -> Vec<AttributeAccess> {
    let script = &hosted.registration.script;
    let consent = tenant.consents.get(service);
    let live: Vec<&KeyGrant> = tenant.grants.iter().filter(|g| &g.grantee == service && g.is_live(now)).collect();
    let emergency = live.iter().any(|g| matches!(g.reason, GrantReason::Emergency { .. }));

    let access_for = |m: &MethodRef| -> Access {
        match consent {
            Some(c) if !c.is_enabled(m) => Access::Disabled,
            Some(_) => Access::Allowed { grants: live.clone() },
            None if emergency => Access::Allowed { grants: live.clone() },
            None => Access::NoConsent,
        }
    };

    let mut out = Vec::new();
    let mut visited = BTreeSet::new();
    let mut stack = vec![entry.clone()];
    visited.insert(entry.clone());
    while let Some(m) = stack.pop() {
        let access = access_for(&m);
        for attribute in script.reads_of(&m) {
            let outcome = match &access {
                Access::NoConsent => AccessOutcome::DeniedNoConsent,
                Access::Disabled => AccessOutcome::DeniedDisabledMethod,
                Access::Allowed { grants } => read_attribute(&hosted.runtime.secret, tenant, grants, attribute, selector),
            };
            out.push(AttributeAccess { method: m.clone(), attribute: attribute.clone(), outcome });
        }
        if matches!(access, Access::Allowed { .. }) {
            for callee in script.calls_of(&m).iter().rev() {
                if visited.insert(callee.clone()) {
                    stack.push(callee.clone());
                }
            }
        }
    }
    out
}

fn select<'a>(tenant: &'a Tenant, attribute: &FieldId, selector: &RecordSelector) -> Vec<(&'a StoredRecord, &'a FieldCiphertext)> {
    let with_field = |r: &'a StoredRecord| r.fields.iter().find(|ct| &ct.field == attribute).map(|ct| (r, ct));
    match selector {
        RecordSelector::All => tenant.records.values().filter_map(with_field).collect(),
        RecordSelector::Latest => tenant
            .records
            .values()
            .filter_map(with_field)
            .max_by(|a, b| (a.0.received_at, &a.0.record_id).cmp(&(b.0.received_at, &b.0.record_id)))
            .into_iter()
            .collect(),
        RecordSelector::Ids { ids } => ids.iter().filter_map(|id| tenant.records.get(id)).filter_map(with_field).collect(),
    }
}

fn read_attribute(
    runtime: &SealingSecretKey,
    tenant: &Tenant,
    grants: &[&KeyGrant],
    attribute: &FieldId,
    selector: &RecordSelector,
) -> AccessOutcome {
    let keys: Vec<EpochKey> = grants
        .iter()
        .filter(|g| &g.field == attribute)
        .filter_map(|g| unwrap_grant(g, runtime).ok())
        .flatten()
        .collect();
    if keys.is_empty() {
        return AccessOutcome::DeniedNoKey;
    }
    let records = select(tenant, attribute, selector);
    let mut values = Vec::new();
    let mut withheld = Vec::new();
    for (record, ct) in &records {
        let plain = keys
            .iter()
            .filter(|k| k.epoch == ct.epoch && k.owner == record.owner)
            .find_map(|k| decrypt_field(k, ct, &ct.aad).ok());
        match plain {
            Some(value) => values.push(RecordValue { record_id: record.record_id.clone(), value }),
            None => withheld.push(record.record_id.clone()),
        }
    }
    if values.is_empty() && !records.is_empty() {
        return AccessOutcome::DeniedNoKey;
    }
    AccessOutcome::Value { values, withheld }
}

#[cfg(test)]
mod tests;
