//! Gateway (PEP) API.
//!
//! One process serves one owner. Every mutating request runs under a single
//! lock that also covers the resulting cloud calls, so an owner's operations
//! are applied in arrival order.

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use tokio::sync::Mutex;

use privsphere::access_log::{read_as_owner, verify_chain, LogPayload, VerificationReport};
use privsphere::audit::{AuditResult, DefaultConfiguration};
use privsphere::cloud::{ConsentSync, GrantUpload};
use privsphere::crypto::{GrantReason, KeyGrant, SigningPublicKey};
use privsphere::gateway::{
    AnnotationLevel, EmergencyIssuance, EventRule, ExternalAssertion, ForwardDecision, Pep, PrivacyConfiguration, Reading,
};
use privsphere::ids::{EndpointId, FieldId, RecordId, RuleId, ServiceId, Timestamp};
use privsphere::pdl::MethodRef;
use privsphere::policy::{render_policy_text, PolicyDocument, Selection};
use privsphere::rng::{self, Drbg};

use crate::client::CloudClient;
use crate::{ApiError, ApiResult, Clock, JsonBody};

/// Files the gateway keeps; the keystore is sealed under `master_secret`.
#[derive(Clone)]
pub struct GatewayFiles {
    pub config: PathBuf,
    pub keystore: PathBuf,
    pub master_secret: Vec<u8>,
}

pub struct GatewayConfig {
    pub pep: Pep,
    pub ttp_public: SigningPublicKey,
    pub cloud: CloudClient,
    /// Endpoint id readings are forwarded to; annotations restrict against it.
    pub endpoint: EndpointId,
    pub files: Option<GatewayFiles>,
    pub clock: Clock,
}

struct Inner {
    pep: Pep,
    rng: Drbg,
}

pub struct GatewayState {
    inner: Mutex<Inner>,
    ttp_public: SigningPublicKey,
    cloud: CloudClient,
    endpoint: EndpointId,
    files: Option<GatewayFiles>,
    clock: Clock,
    owner_registered: AtomicBool,
}

impl GatewayState {
    pub fn new(config: GatewayConfig) -> Arc<Self> {
        Arc::new(Self {
            inner: Mutex::new(Inner { pep: config.pep, rng: rng::system() }),
            ttp_public: config.ttp_public,
            cloud: config.cloud,
            endpoint: config.endpoint,
            files: config.files,
            clock: config.clock,
            owner_registered: AtomicBool::new(false),
        })
    }

    /// Fetches the registration of every consented service so grants can be
    /// refreshed after a restart. Returns the services that could not be re-learned.
    pub async fn relearn_services(&self) -> Vec<(ServiceId, String)> {
        let mut guard = self.inner.lock().await;
        let services: Vec<ServiceId> = guard.pep.config().consents.keys().cloned().collect();
        let mut failed = Vec::new();
        for service in services {
            let outcome = match self.cloud.service(&service).await {
                Ok(reg) => guard.pep.remember_service(&reg).map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            if let Err(message) = outcome {
                failed.push((service, message));
            }
        }
        failed
    }

    async fn ensure_owner(&self, pep: &Pep) -> Result<(), ApiError> {
        if !self.owner_registered.load(Ordering::Acquire) {
            self.cloud.register_owner(pep.owner(), pep.owner_public_key()).await?;
            self.owner_registered.store(true, Ordering::Release);
        }
        Ok(())
    }

    fn persist(&self, inner: &mut Inner) -> Result<(), ApiError> {
        let Some(files) = &self.files else { return Ok(()) };
        let fail = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Store", e.to_string());
        let sealed = inner.pep.export_keystore(&mut inner.rng, &files.master_secret);
        write_atomic(&files.keystore, &sealed).map_err(fail)?;
        let config = privsphere::canonical::to_canonical_json(inner.pep.config()).expect("config serializes");
        write_atomic(&files.config, config.as_bytes()).map_err(fail)
    }

    /// Uploads consent grants, keeping each grantee's current consent.
    async fn push_grants(&self, pep: &Pep, grants: &[KeyGrant]) -> Result<(), ApiError> {
        let mut by_service: BTreeMap<&ServiceId, Vec<KeyGrant>> = BTreeMap::new();
        for g in grants {
            by_service.entry(&g.grantee).or_default().push(g.clone());
        }
        for (service, grants) in by_service {
            let consent = pep.config().consents.get(service).map(|c| c.consent.clone());
            self.cloud
                .consent_sync(&ConsentSync {
                    owner: pep.owner().clone(),
                    owner_pk: pep.owner_public_key(),
                    service_id: service.clone(),
                    consent,
                    grants,
                })
                .await?;
        }
        Ok(())
    }

    async fn upload_emergencies(&self, pep: &Pep, issued: &[EmergencyIssuance]) -> Result<(), ApiError> {
        for e in issued {
            self.cloud
                .upload_grants(&GrantUpload {
                    owner: pep.owner().clone(),
                    owner_pk: pep.owner_public_key(),
                    rule_id: e.rule_id.clone(),
                    grants: e.grants.clone(),
                    issued_at: e.issued_at,
                })
                .await?;
        }
        Ok(())
    }
}

fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

pub fn router(state: Arc<GatewayState>) -> Router {
    Router::new()
        .route("/ingest", post(ingest))
        .route("/config", get(get_config).put(put_config))
        .route("/consent/{service}", post(consent).delete(revoke))
        .route("/assertions", post(assertion))
        .route("/policy/{service}", get(policy))
        .route("/log", get(log))
        .with_state(state)
}

/// A grant as shown to the owner: which keys went where, never the keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantSummary {
    pub grantee: ServiceId,
    pub field: FieldId,
    pub epoch_lo: u64,
    pub epoch_hi: u64,
    pub reason: GrantReason,
    #[serde(default)]
    pub expires_at: Option<Timestamp>,
}

impl From<&KeyGrant> for GrantSummary {
    fn from(g: &KeyGrant) -> Self {
        Self {
            grantee: g.grantee.clone(),
            field: g.field.clone(),
            epoch_lo: g.epoch_lo,
            epoch_hi: g.epoch_hi,
            reason: g.reason.clone(),
            expires_at: g.expires_at,
        }
    }
}

fn summaries(grants: &[KeyGrant]) -> Vec<GrantSummary> {
    grants.iter().map(GrantSummary::from).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuanceSummary {
    pub rule_id: RuleId,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub grants: Vec<GrantSummary>,
}

fn issuance_summaries(issued: &[EmergencyIssuance]) -> Vec<IssuanceSummary> {
    issued
        .iter()
        .map(|e| IssuanceSummary {
            rule_id: e.rule_id.clone(),
            issued_at: e.issued_at,
            expires_at: e.expires_at,
            grants: summaries(&e.grants),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub decision: ForwardDecision,
    #[serde(default)]
    pub record_id: Option<RecordId>,
    pub config_version: u64,
    pub emergencies: Vec<IssuanceSummary>,
}

async fn ingest(State(s): State<Arc<GatewayState>>, JsonBody(reading): JsonBody<Reading>) -> ApiResult<IngestResponse> {
    let mut guard = s.inner.lock().await;
    let Inner { pep, rng } = &mut *guard;
    let now = reading.timestamp;
    pep.rotate_epochs(now);
    let outcome = pep.ingest(rng, reading, &s.endpoint)?;
    let refreshed = pep.refresh_consent_grants(rng, now)?;
    s.ensure_owner(pep).await?;
    if let Some(record) = &outcome.record {
        s.cloud.store_record(record).await?;
    }
    s.push_grants(pep, &refreshed).await?;
    s.upload_emergencies(pep, &outcome.emergencies).await?;
    s.persist(&mut guard)?;
    Ok(Json(IngestResponse {
        decision: outcome.decision,
        record_id: outcome.record.map(|r| r.record_id),
        config_version: outcome.config_version,
        emergencies: issuance_summaries(&outcome.emergencies),
    }))
}

async fn get_config(State(s): State<Arc<GatewayState>>) -> Json<PrivacyConfiguration> {
    Json(s.inner.lock().await.pep.config().clone())
}

/// Changes applied by `PUT /config`, in field order. Consents are managed
/// through `/consent/{service}` instead.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigUpdate {
    #[serde(default)]
    pub preset: Option<DefaultConfiguration>,
    #[serde(default)]
    pub default_annotation: Option<AnnotationLevel>,
    #[serde(default)]
    pub annotations: BTreeMap<FieldId, AnnotationLevel>,
    /// Rules to add; ids must be new.
    #[serde(default)]
    pub event_rules: Vec<EventRule>,
}

async fn put_config(State(s): State<Arc<GatewayState>>, JsonBody(update): JsonBody<ConfigUpdate>) -> ApiResult<PrivacyConfiguration> {
    let mut guard = s.inner.lock().await;
    let pep = &mut guard.pep;
    if let Some(preset) = &update.preset {
        pep.apply_default(preset)?;
    }
    if let Some(level) = update.default_annotation {
        pep.set_default_annotation(level)?;
    }
    for (field, level) in update.annotations {
        pep.set_annotation(field, level)?;
    }
    for rule in update.event_rules {
        pep.add_event_rule(rule)?;
    }
    let config = pep.config().clone();
    s.persist(&mut guard)?;
    Ok(Json(config))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRequest {
    #[serde(default)]
    pub selections: BTreeMap<MethodRef, Selection>,
    /// Fill unanswered choices from the applied TTP preset.
    #[serde(default)]
    pub use_preset: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentResponse {
    pub service_id: ServiceId,
    pub granted_fields: BTreeSet<FieldId>,
    pub enabled_methods: BTreeSet<MethodRef>,
    pub grants: Vec<GrantSummary>,
    pub rotated: Vec<FieldId>,
}

async fn consent(
    State(s): State<Arc<GatewayState>>,
    Path(service): Path<ServiceId>,
    JsonBody(req): JsonBody<ConsentRequest>,
) -> ApiResult<ConsentResponse> {
    let registration = s.cloud.service(&service).await?;
    let mut guard = s.inner.lock().await;
    let Inner { pep, rng } = &mut *guard;
    let selections =
        if req.use_preset { pep.preset_selections(&registration.policy, &req.selections)? } else { req.selections };
    let outcome = pep.apply_consent(rng, &registration, &selections, (s.clock)())?;
    s.ensure_owner(pep).await?;
    s.push_grants(pep, &outcome.grants).await?;
    if outcome.grants.is_empty() {
        // Still record a changed choice set at the platform.
        s.cloud
            .consent_sync(&ConsentSync {
                owner: pep.owner().clone(),
                owner_pk: pep.owner_public_key(),
                service_id: service.clone(),
                consent: Some(outcome.consent.clone()),
                grants: Vec::new(),
            })
            .await?;
    }
    s.push_grants(pep, &outcome.regrants).await?;
    s.persist(&mut guard)?;
    Ok(Json(ConsentResponse {
        service_id: service,
        granted_fields: outcome.granted_fields,
        enabled_methods: outcome.consent.enabled,
        grants: summaries(&outcome.grants),
        rotated: outcome.rotated,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevokeResponse {
    pub service_id: ServiceId,
    pub rotated: Vec<FieldId>,
    pub regrants: Vec<GrantSummary>,
}

async fn revoke(State(s): State<Arc<GatewayState>>, Path(service): Path<ServiceId>) -> ApiResult<RevokeResponse> {
    let mut guard = s.inner.lock().await;
    let Inner { pep, rng } = &mut *guard;
    let outcome = pep.revoke_consent(rng, &service, (s.clock)())?;
    s.ensure_owner(pep).await?;
    s.cloud
        .consent_sync(&ConsentSync {
            owner: pep.owner().clone(),
            owner_pk: pep.owner_public_key(),
            service_id: service.clone(),
            consent: None,
            grants: Vec::new(),
        })
        .await?;
    s.push_grants(pep, &outcome.regrants).await?;
    s.persist(&mut guard)?;
    Ok(Json(RevokeResponse { service_id: service, rotated: outcome.rotated, regrants: summaries(&outcome.regrants) }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionResponse {
    pub issued: Vec<IssuanceSummary>,
}

async fn assertion(State(s): State<Arc<GatewayState>>, JsonBody(a): JsonBody<ExternalAssertion>) -> ApiResult<AssertionResponse> {
    let mut guard = s.inner.lock().await;
    let Inner { pep, rng } = &mut *guard;
    let issued = pep.submit_external_assertion(rng, a, (s.clock)())?;
    s.ensure_owner(pep).await?;
    s.upload_emergencies(pep, &issued).await?;
    s.persist(&mut guard)?;
    Ok(Json(AssertionResponse { issued: issuance_summaries(&issued) }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyView {
    pub service_id: ServiceId,
    pub policy: PolicyDocument,
    /// Human-readable rendering of `policy`.
    pub text: String,
    pub audit: AuditResult,
}

async fn policy(State(s): State<Arc<GatewayState>>, Path(service): Path<ServiceId>) -> ApiResult<PolicyView> {
    let reg = s.cloud.service(&service).await?;
    let audit = reg.verdict.map(|v| v.result).ok_or_else(|| {
        ApiError::new(StatusCode::FORBIDDEN, "ServiceNotAudited", format!("service `{service}` has no verdict"))
    })?;
    Ok(Json(PolicyView { service_id: service, text: render_policy_text(&reg.policy), policy: reg.policy, audit }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntryView {
    pub seq: u64,
    /// `None` when the payload does not open under the owner key.
    #[serde(default)]
    pub payload: Option<LogPayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerLogView {
    pub verification: VerificationReport,
    pub entries: Vec<LogEntryView>,
}

async fn log(State(s): State<Arc<GatewayState>>) -> ApiResult<OwnerLogView> {
    let owner = s.inner.lock().await.pep.owner().clone();
    let bundle = s.cloud.fetch_log(&owner).await?;
    let keys = s.cloud.keys().await?;
    let verification = verify_chain(&bundle.entries, &bundle.checkpoints, &keys.platform_public_key, &s.ttp_public);
    let guard = s.inner.lock().await;
    let payloads = read_as_owner(&bundle.entries, &guard.pep.owner_keys().secret);
    let entries =
        bundle.entries.iter().zip(payloads).map(|(e, p)| LogEntryView { seq: e.seq, payload: p.ok() }).collect();
    Ok(Json(OwnerLogView { verification, entries }))
}
