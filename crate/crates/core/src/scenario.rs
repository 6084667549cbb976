//! Deterministic end-to-end scenarios.
//!
//! A scenario declares owners, services, asserters and roles, then drives
//! in-process gateways, the cloud platform and the TTP through a timeline of
//! steps on a simulated clock. Every key and nonce comes from a DRBG seeded
//! with the scenario's `seed`, so two runs produce byte-identical reports.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

use crate::access_log::{read_as_owner, verify_chain, LogOutcome};
use crate::audit::{AccessScript, AuditResult, AuditVerdict, EmergencyDeclaration, RoleDirectory, RoleMember, Ttp};
use crate::cloud::{AccessOutcome, Cloud, ConsentSync, GrantUpload, InvocationResult, RecordSelector, ServiceSubmission};
use crate::crypto::{KeyGrant, SealingKeyPair, SigningKeyPair};
use crate::gateway::{
    Aggregate, AnnotationLevel, Comparator, ConsentOutcome, EmergencyIssuance, EventRule, ExternalAssertion,
    ForwardDecision, Grantee, IngestOutcome, Pep, PrivacyConfiguration, Reading, ReadingValue, RevokeOutcome, Trigger,
};
use crate::ids::{DeviceId, EndpointId, FieldId, OwnerId, RoleId, RuleId, ServiceId, Timestamp};
use crate::pdl::{self, MethodRef};
use crate::policy::{self, Selection};
use crate::rng::{seeded, Drbg};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario: {0}")]
    MalformedScenario(String),
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
}

fn malformed(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::MalformedScenario(msg.into())
}

pub const DEFAULT_ROTATION_PERIOD: u64 = 24 * 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub owners: Vec<OwnerSpec>,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    /// Names of external asserters (e.g. a doctor); each gets a signing key.
    #[serde(default)]
    pub asserters: Vec<String>,
    #[serde(default)]
    pub roles: BTreeMap<RoleId, Vec<ServiceId>>,
    #[serde(default)]
    pub timeline: Vec<Step>,
    /// Checked after the whole timeline has run.
    #[serde(default)]
    pub expectations: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OwnerSpec {
    pub id: OwnerId,
    #[serde(default)]
    pub rotation_period: Option<u64>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub default_annotation: Option<AnnotationLevel>,
    #[serde(default)]
    pub annotations: BTreeMap<FieldId, AnnotationLevel>,
    #[serde(default)]
    pub event_rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub rule_id: RuleId,
    pub grantee: Grantee,
    pub scope: BTreeSet<FieldId>,
    pub trigger: TriggerSpec,
    pub grant_duration: u64,
}

/// A trigger whose trusted asserters are named rather than given as keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TriggerSpec {
    Internal { field: FieldId, aggregate: Aggregate, window: u64, comparator: Comparator, threshold: f64 },
    External { claim_id: String, trusted: Vec<String>, freshness: u64 },
    And { left: Box<TriggerSpec>, right: Box<TriggerSpec> },
    Or { left: Box<TriggerSpec>, right: Box<TriggerSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub id: ServiceId,
    /// Inline PDL text; takes precedence over `model_file`.
    #[serde(default)]
    pub model: Option<String>,
    /// Path relative to the scenario file, resolved by [`load_scenario`].
    #[serde(default)]
    pub model_file: Option<String>,
    pub script: AccessScript,
    #[serde(default)]
    pub emergency_declarations: Vec<DeclarationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclarationSpec {
    pub rule_id: RuleId,
    pub promised_claim: String,
    pub trigger: TriggerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// The step is expected to be rejected; an error then does not fail the run.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub expect_error: bool,
    #[serde(flatten)]
    pub action: Action,
}

fn cloud_endpoint() -> EndpointId {
    EndpointId::from("cloud")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Action {
    Ingest {
        owner: OwnerId,
        device: DeviceId,
        field: FieldId,
        value: ReadingValue,
        #[serde(default = "cloud_endpoint")]
        endpoint: EndpointId,
    },
    Consent {
        owner: OwnerId,
        service: ServiceId,
        #[serde(default)]
        selections: BTreeMap<MethodRef, Selection>,
        /// Fill unanswered choices from the owner's TTP preset.
        #[serde(default)]
        use_preset: bool,
    },
    /// Changes one selection of an existing consent and re-applies it.
    Choice { owner: OwnerId, service: ServiceId, method: MethodRef, selection: Selection },
    /// Without `field`, sets the owner's default annotation.
    Annotation {
        owner: OwnerId,
        #[serde(default)]
        field: Option<FieldId>,
        level: AnnotationLevel,
    },
    Assertion {
        asserter: String,
        owner: OwnerId,
        claim: String,
        /// Timestamp placed in the assertion; defaults to the step time.
        #[serde(default)]
        asserted_at: Option<Timestamp>,
    },
    Invoke {
        service: ServiceId,
        method: MethodRef,
        owner: OwnerId,
        #[serde(default)]
        select: RecordSelector,
    },
    Rotate { owner: OwnerId },
    Revoke { owner: OwnerId, service: ServiceId },
    Checkpoint { owner: OwnerId },
    Expect { check: Expectation },
}

impl Action {
    fn kind(&self) -> &'static str {
        match self {
            Action::Ingest { .. } => "ingest",
            Action::Consent { .. } => "consent",
            Action::Choice { .. } => "choice",
            Action::Annotation { .. } => "annotation",
            Action::Assertion { .. } => "assertion",
            Action::Invoke { .. } => "invoke",
            Action::Rotate { .. } => "rotate",
            Action::Revoke { .. } => "revoke",
            Action::Checkpoint { .. } => "checkpoint",
            Action::Expect { .. } => "expect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "expect", rename_all = "snake_case", deny_unknown_fields)]
pub enum Expectation {
    StepOk { step: String },
    StepError {
        step: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        contains: Option<String>,
    },
    /// `decision` is `Forward`, `StoreLocal` or `StoreLocalWithWarning`.
    Decision { step: String, decision: String },
    /// Every ingest of `field` by `owner` so far was decided `decision`.
    Decisions { owner: OwnerId, field: FieldId, decision: String },
    CiphertextCount { field: FieldId, equals: usize },
    /// Without `equals`, the count must match the owner's ingest steps so far.
    LocalStoreCount {
        owner: OwnerId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        equals: Option<usize>,
    },
    GrantedFields { step: String, fields: BTreeSet<FieldId> },
    /// Grants issued by the step (consent, emergency, rotation or revoke re-grants).
    GrantsIssued { step: String, equals: usize },
    /// Every matching access of an invoke step had `outcome`; at least one matched.
    Access {
        step: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        method: Option<MethodRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attribute: Option<FieldId>,
        outcome: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<usize>,
    },
    /// Decrypted values of `attribute` across the step's accesses, in order.
    Plaintexts { step: String, attribute: FieldId, values: Vec<serde_json::Value> },
    /// Records of `attribute` the step's accesses could not decrypt.
    Withheld { step: String, attribute: FieldId, equals: usize },
    LogCount { owner: OwnerId, equals: usize },
    LogOutcomeCount { owner: OwnerId, outcome: String, equals: usize },
    LogVerifies { owner: OwnerId },
    /// Every logged access to `attribute` (by `method`, if given) carries `purpose`.
    LogPurpose {
        owner: OwnerId,
        attribute: FieldId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        method: Option<MethodRef>,
        purpose: String,
    },
    /// One log entry per attribute access and per emergency grant, nothing else.
    LogMatchesAccesses { owner: OwnerId },
    /// The owner's key opens every payload; a fresh key opens none.
    OwnerReadsLog { owner: OwnerId },
    /// `result` is `PASS` or `FAIL`; `violations` lists violation kinds in order.
    Verdict {
        service: ServiceId,
        result: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        violations: Option<Vec<String>>,
    },
    Listed { service: ServiceId, listed: bool },
    Epoch { owner: OwnerId, field: FieldId, equals: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub at: Timestamp,
    pub step: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    pub index: usize,
    /// Timeline position the check ran after; `None` for the final expectations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_step: Option<usize>,
    pub check: Expectation,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub steps: usize,
    pub unexpected_step_errors: usize,
    pub expectations_passed: usize,
    pub expectations_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub steps: Vec<StepReport>,
    pub expectations: Vec<ExpectationReport>,
    /// Hex hash of each owner's last log entry.
    pub log_heads: BTreeMap<OwnerId, String>,
    pub summary: ScenarioSummary,
    pub passed: bool,
}

impl ScenarioReport {
    /// Canonical JSON; the byte form compared across runs.
    pub fn to_json(&self) -> String {
        crate::canonical::to_canonical_json(self).expect("report serializes")
    }
}

/// Reads a scenario file and inlines `model_file` references.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let io = |p: &Path, e: std::io::Error| ScenarioError::Io { path: p.display().to_string(), message: e.to_string() };
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let mut scenario = parse_scenario(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for s in &mut scenario.services {
        if s.model.is_none() {
            if let Some(file) = &s.model_file {
                let p = base.join(file);
                s.model = Some(std::fs::read_to_string(&p).map_err(|e| io(&p, e))?);
            }
        }
    }
    Ok(scenario)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    serde_json::from_str(text).map_err(|e| malformed(e.to_string()))
}

#[derive(Debug)]
enum Outcome {
    Ingest(IngestOutcome),
    Consent(ConsentOutcome),
    Emergencies(Vec<EmergencyIssuance>),
    Invoke(InvocationResult),
    Grants { rotated: Vec<FieldId>, grants: Vec<KeyGrant> },
    Revoke(RevokeOutcome),
    Checkpoint(Option<u64>),
    Nothing,
}

impl Outcome {
    fn grants_issued(&self) -> Option<usize> {
        let emergency = |v: &[EmergencyIssuance]| v.iter().map(|e| e.grants.len()).sum();
        Some(match self {
            Outcome::Ingest(o) => emergency(&o.emergencies),
            Outcome::Consent(o) => o.grants.len() + o.regrants.len(),
            Outcome::Emergencies(v) => emergency(v),
            Outcome::Grants { grants, .. } => grants.len(),
            Outcome::Revoke(o) => o.regrants.len(),
            _ => return None,
        })
    }

    fn detail(&self) -> serde_json::Value {
        use serde_json::json;
        let emergency = |v: &[EmergencyIssuance]| -> serde_json::Value {
            v.iter()
                .map(|e| json!({ "rule_id": e.rule_id, "expires_at": e.expires_at, "grants": e.grants.len() }))
                .collect()
        };
        match self {
            Outcome::Ingest(o) => json!({
                "decision": decision_name(&o.decision),
                "record_id": o.record.as_ref().map(|r| &r.record_id),
                "config_version": o.config_version,
                "emergencies": emergency(&o.emergencies),
            }),
            Outcome::Consent(o) => json!({
                "granted_fields": o.granted_fields,
                "grants": o.grants.len(),
                "rotated": o.rotated,
                "regrants": o.regrants.len(),
            }),
            Outcome::Emergencies(v) => json!({ "emergencies": emergency(v) }),
            Outcome::Invoke(r) => json!({
                "accesses": r.accesses.iter().map(|a| json!({
                    "method": a.method,
                    "attribute": a.attribute,
                    "outcome": access_name(&a.outcome),
                    "records": match &a.outcome {
                        AccessOutcome::Value { values, .. } => values.len(),
                        _ => 0,
                    },
                })).collect::<Vec<_>>(),
            }),
            Outcome::Grants { rotated, grants } => json!({ "rotated": rotated, "grants": grants.len() }),
            Outcome::Revoke(o) => json!({ "rotated": o.rotated, "regrants": o.regrants.len() }),
            Outcome::Checkpoint(seq) => json!({ "up_to_seq": seq }),
            Outcome::Nothing => serde_json::Value::Null,
        }
    }
}

fn decision_name(d: &ForwardDecision) -> &'static str {
    match d {
        ForwardDecision::Forward { .. } => "Forward",
        ForwardDecision::StoreLocal => "StoreLocal",
        ForwardDecision::StoreLocalWithWarning { .. } => "StoreLocalWithWarning",
    }
}

fn access_name(o: &AccessOutcome) -> &'static str {
    match o {
        AccessOutcome::Value { .. } => "Value",
        AccessOutcome::DeniedNoConsent => "DeniedNoConsent",
        AccessOutcome::DeniedNoKey => "DeniedNoKey",
        AccessOutcome::DeniedDisabledMethod => "DeniedDisabledMethod",
    }
}

fn log_outcome_name(o: &LogOutcome) -> &'static str {
    match o {
        LogOutcome::Value => "Value",
        LogOutcome::DeniedNoConsent => "DeniedNoConsent",
        LogOutcome::DeniedNoKey => "DeniedNoKey",
        LogOutcome::DeniedDisabledMethod => "DeniedDisabledMethod",
        LogOutcome::EmergencyGrantIssued { .. } => "EmergencyGrantIssued",
    }
}

struct World {
    rng: Drbg,
    cloud: Cloud,
    ttp: Ttp,
    peps: BTreeMap<OwnerId, Pep>,
    asserters: BTreeMap<String, SigningKeyPair>,
    verdicts: BTreeMap<ServiceId, AuditVerdict>,
    selections: BTreeMap<(OwnerId, ServiceId), BTreeMap<MethodRef, Selection>>,
    results: BTreeMap<String, Result<Outcome, String>>,
    decisions: Vec<(OwnerId, FieldId, &'static str)>,
    ingests: BTreeMap<OwnerId, usize>,
    /// Log entries each owner should have: one per access plus one per emergency grant.
    expected_log: BTreeMap<OwnerId, usize>,
}

fn resolve_trigger(t: &TriggerSpec, asserters: &BTreeMap<String, SigningKeyPair>) -> Result<Trigger, ScenarioError> {
    Ok(match t {
        TriggerSpec::Internal { field, aggregate, window, comparator, threshold } => Trigger::Internal {
            field: field.clone(),
            aggregate: *aggregate,
            window: *window,
            comparator: *comparator,
            threshold: *threshold,
        },
        TriggerSpec::External { claim_id, trusted, freshness } => Trigger::External {
            claim_id: claim_id.clone(),
            trusted: trusted
                .iter()
                .map(|n| asserters.get(n).map(SigningKeyPair::public).ok_or_else(|| malformed(format!("unknown asserter `{n}`"))))
                .collect::<Result<_, _>>()?,
            freshness: *freshness,
        },
        TriggerSpec::And { left, right } => Trigger::and(resolve_trigger(left, asserters)?, resolve_trigger(right, asserters)?),
        TriggerSpec::Or { left, right } => Trigger::or(resolve_trigger(left, asserters)?, resolve_trigger(right, asserters)?),
    })
}

fn check_well_formed(s: &Scenario) -> Result<(), ScenarioError> {
    let owners: BTreeSet<&OwnerId> = s.owners.iter().map(|o| &o.id).collect();
    let services: BTreeSet<&ServiceId> = s.services.iter().map(|x| &x.id).collect();
    let asserters: BTreeSet<&String> = s.asserters.iter().collect();
    if owners.len() != s.owners.len() || services.len() != s.services.len() || asserters.len() != s.asserters.len() {
        return Err(malformed("duplicate actor id"));
    }
    let owner = |o: &OwnerId| owners.contains(o).then_some(()).ok_or_else(|| malformed(format!("undeclared owner `{o}`")));
    let service =
        |x: &ServiceId| services.contains(x).then_some(()).ok_or_else(|| malformed(format!("undeclared service `{x}`")));
    for members in s.roles.values() {
        members.iter().try_for_each(service)?;
    }
    let mut ids = BTreeSet::new();
    let mut last = 0;
    for (i, step) in s.timeline.iter().enumerate() {
        if step.at < last {
            return Err(malformed(format!("step {i}: time {} precedes {last}", step.at)));
        }
        last = step.at;
        if let Some(id) = &step.id {
            if !ids.insert(id.clone()) {
                return Err(malformed(format!("duplicate step id `{id}`")));
            }
        }
        match &step.action {
            Action::Ingest { owner: o, .. }
            | Action::Annotation { owner: o, .. }
            | Action::Rotate { owner: o }
            | Action::Checkpoint { owner: o } => owner(o)?,
            Action::Consent { owner: o, service: x, .. }
            | Action::Choice { owner: o, service: x, .. }
            | Action::Revoke { owner: o, service: x }
            | Action::Invoke { owner: o, service: x, .. } => {
                owner(o)?;
                service(x)?;
            }
            Action::Assertion { asserter, owner: o, .. } => {
                owner(o)?;
                if !asserters.contains(asserter) {
                    return Err(malformed(format!("undeclared asserter `{asserter}`")));
                }
            }
            Action::Expect { check } => check_expectation(check, &ids, &owner, &service)?,
        }
    }
    for e in &s.expectations {
        check_expectation(e, &ids, &owner, &service)?;
    }
    Ok(())
}

fn check_expectation(
    e: &Expectation,
    ids: &BTreeSet<String>,
    owner: &dyn Fn(&OwnerId) -> Result<(), ScenarioError>,
    service: &dyn Fn(&ServiceId) -> Result<(), ScenarioError>,
) -> Result<(), ScenarioError> {
    let step = |id: &String| ids.contains(id).then_some(()).ok_or_else(|| malformed(format!("unknown step id `{id}`")));
    match e {
        Expectation::StepOk { step: s }
        | Expectation::StepError { step: s, .. }
        | Expectation::Decision { step: s, .. }
        | Expectation::GrantedFields { step: s, .. }
        | Expectation::GrantsIssued { step: s, .. }
        | Expectation::Access { step: s, .. }
        | Expectation::Plaintexts { step: s, .. }
        | Expectation::Withheld { step: s, .. } => step(s),
        Expectation::Decisions { owner: o, .. }
        | Expectation::LocalStoreCount { owner: o, .. }
        | Expectation::LogCount { owner: o, .. }
        | Expectation::LogOutcomeCount { owner: o, .. }
        | Expectation::LogVerifies { owner: o }
        | Expectation::LogPurpose { owner: o, .. }
        | Expectation::LogMatchesAccesses { owner: o }
        | Expectation::OwnerReadsLog { owner: o }
        | Expectation::Epoch { owner: o, .. } => owner(o),
        Expectation::Verdict { service: s, .. } | Expectation::Listed { service: s, .. } => service(s),
        Expectation::CiphertextCount { .. } => Ok(()),
    }
}

impl World {
    fn setup(s: &Scenario) -> Result<Self, ScenarioError> {
        let mut rng = seeded(s.seed);
        let ttp = Ttp::new(SigningKeyPair::generate(&mut rng));
        let platform = SigningKeyPair::generate(&mut rng);
        let cloud_rng = seeded(rand::RngCore::next_u64(&mut rng));
        let mut cloud = Cloud::new(platform, ttp.public_key(), Some(Arc::new(ttp.clone())), cloud_rng);
        let asserters: BTreeMap<String, SigningKeyPair> =
            s.asserters.iter().map(|n| (n.clone(), SigningKeyPair::generate(&mut rng))).collect();
        let audited_at = s.timeline.first().map_or(0, |st| st.at);

        let mut verdicts = BTreeMap::new();
        for spec in &s.services {
            let text = spec.model.as_deref().ok_or_else(|| malformed(format!("service `{}` has no model", spec.id)))?;
            let model = pdl::parse_named(spec.id.as_str(), text).map_err(|e| malformed(e.to_string()))?;
            let declarations = spec
                .emergency_declarations
                .iter()
                .map(|d| {
                    Ok(EmergencyDeclaration {
                        rule_id: d.rule_id.clone(),
                        promised_claim: d.promised_claim.clone(),
                        trigger: resolve_trigger(&d.trigger, &asserters)?,
                    })
                })
                .collect::<Result<Vec<_>, ScenarioError>>()?;
            let bad = |e: &dyn std::fmt::Display| malformed(format!("service `{}`: {e}", spec.id));
            let submission = ServiceSubmission {
                service_id: spec.id.clone(),
                model_text: pdl::render(&model),
                policy: policy::generate_policy(&model, &spec.id).map_err(|e| bad(&e))?,
                monitoring: policy::generate_monitoring_spec(&model).map_err(|e| bad(&e))?,
                script: spec.script.clone(),
                emergency_declarations: declarations.clone(),
            };
            cloud.register_service(submission).map_err(|e| bad(&e))?;
            let verdict = ttp.audit(&spec.id, &model, &spec.script, &declarations, audited_at).map_err(|e| bad(&e))?;
            cloud.attach_verdict(verdict.clone()).map_err(|e| bad(&e))?;
            verdicts.insert(spec.id.clone(), verdict);
        }

        let directory = (!s.roles.is_empty()).then(|| {
            let roles = s
                .roles
                .iter()
                .map(|(role, members)| {
                    let members = members
                        .iter()
                        .map(|m| RoleMember {
                            service_id: m.clone(),
                            public_key: cloud.registration(m).expect("declared service").public_key,
                        })
                        .collect();
                    (role.clone(), members)
                })
                .collect();
            ttp.sign_role_directory(RoleDirectory { roles, ttp_signature: None })
        });

        let mut peps = BTreeMap::new();
        for o in &s.owners {
            let bad = |e: &dyn std::fmt::Display| malformed(format!("owner `{}`: {e}", o.id));
            let keys = SealingKeyPair::generate(&mut rng);
            let config = PrivacyConfiguration::new(o.id.clone(), o.rotation_period.unwrap_or(DEFAULT_ROTATION_PERIOD));
            let mut pep = Pep::new(config, keys, ttp.public_key());
            if let Some(level) = &o.preset {
                let preset = ttp.publish_named(level).map_err(|e| bad(&e))?;
                pep.apply_default(&preset).map_err(|e| bad(&e))?;
            }
            if let Some(level) = &o.default_annotation {
                pep.set_default_annotation(level.clone()).map_err(|e| bad(&e))?;
            }
            for (field, level) in &o.annotations {
                pep.set_annotation(field.clone(), level.clone()).map_err(|e| bad(&e))?;
            }
            if let Some(d) = &directory {
                pep.install_role_directory(d.clone()).map_err(|e| bad(&e))?;
            }
            for r in &o.event_rules {
                if let Grantee::Service { service_id } = &r.grantee {
                    let reg = cloud.registration(service_id).ok_or_else(|| bad(&format!("unknown grantee `{service_id}`")))?;
                    pep.register_grantee(service_id.clone(), reg.public_key);
                }
                let rule = EventRule {
                    rule_id: r.rule_id.clone(),
                    grantee: r.grantee.clone(),
                    scope: r.scope.clone(),
                    trigger: resolve_trigger(&r.trigger, &asserters)?,
                    grant_duration: r.grant_duration,
                };
                pep.add_event_rule(rule).map_err(|e| bad(&e))?;
            }
            cloud.register_owner(&o.id, pep.owner_public_key()).map_err(|e| bad(&e))?;
            peps.insert(o.id.clone(), pep);
        }

        Ok(World {
            rng,
            cloud,
            ttp,
            peps,
            asserters,
            verdicts,
            selections: BTreeMap::new(),
            results: BTreeMap::new(),
            decisions: Vec::new(),
            ingests: BTreeMap::new(),
            expected_log: BTreeMap::new(),
        })
    }

    fn pep(&mut self, owner: &OwnerId) -> &mut Pep {
        self.peps.get_mut(owner).expect("owners checked before the run")
    }

    /// Uploads grants to the cloud, keeping each grantee's current consent.
    fn push_grants(&mut self, owner: &OwnerId, grants: &[KeyGrant]) -> Result<(), String> {
        let owner_pk = self.peps[owner].owner_public_key();
        let mut by_service: BTreeMap<ServiceId, Vec<KeyGrant>> = BTreeMap::new();
        for g in grants {
            by_service.entry(g.grantee.clone()).or_default().push(g.clone());
        }
        for (service_id, grants) in by_service {
            let consent = self.cloud.consent(owner, &service_id).cloned();
            self.cloud
                .consent_sync(ConsentSync { owner: owner.clone(), owner_pk, service_id, consent, grants })
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn upload_emergencies(&mut self, owner: &OwnerId, issued: &[EmergencyIssuance]) -> Result<(), String> {
        let owner_pk = self.peps[owner].owner_public_key();
        for e in issued {
            self.cloud
                .store_emergency_grants(GrantUpload {
                    owner: owner.clone(),
                    owner_pk,
                    rule_id: e.rule_id.clone(),
                    grants: e.grants.clone(),
                    issued_at: e.issued_at,
                })
                .map_err(|e| e.to_string())?;
            *self.expected_log.entry(owner.clone()).or_default() += e.grants.len();
        }
        Ok(())
    }

    fn apply_consent(
        &mut self,
        rng: &mut Drbg,
        owner: &OwnerId,
        service: &ServiceId,
        selections: BTreeMap<MethodRef, Selection>,
        at: Timestamp,
    ) -> Result<Outcome, String> {
        let reg = self.cloud.registration(service).cloned().ok_or_else(|| format!("unknown service `{service}`"))?;
        let outcome = self.pep(owner).apply_consent(rng, &reg, &selections, at).map_err(|e| e.to_string())?;
        self.selections.insert((owner.clone(), service.clone()), selections);
        let owner_pk = self.peps[owner].owner_public_key();
        self.cloud
            .consent_sync(ConsentSync {
                owner: owner.clone(),
                owner_pk,
                service_id: service.clone(),
                consent: Some(outcome.consent.clone()),
                grants: outcome.grants.clone(),
            })
            .map_err(|e| e.to_string())?;
        self.push_grants(owner, &outcome.regrants)?;
        Ok(Outcome::Consent(outcome))
    }

    fn run_step(&mut self, step: &Step) -> Result<Outcome, String> {
        let at = step.at;
        // The DRBG is moved out while a gateway borrows `self`.
        let mut rng = std::mem::replace(&mut self.rng, seeded(0));
        let result = self.dispatch(&mut rng, &step.action, at);
        self.rng = rng;
        result
    }

    fn dispatch(&mut self, rng: &mut Drbg, action: &Action, at: Timestamp) -> Result<Outcome, String> {
        match action {
            Action::Ingest { owner, device, field, value, endpoint } => {
                *self.ingests.entry(owner.clone()).or_default() += 1;
                let reading = Reading {
                    owner: owner.clone(),
                    device: device.clone(),
                    field: field.clone(),
                    value: value.clone(),
                    timestamp: at,
                };
                let outcome = self.pep(owner).ingest(rng, reading, endpoint).map_err(|e| e.to_string())?;
                self.decisions.push((owner.clone(), field.clone(), decision_name(&outcome.decision)));
                if let Some(record) = &outcome.record {
                    self.cloud.store_record(record.clone()).map_err(|e| e.to_string())?;
                }
                self.upload_emergencies(owner, &outcome.emergencies)?;
                Ok(Outcome::Ingest(outcome))
            }
            Action::Consent { owner, service, selections, use_preset } => {
                let selections = if *use_preset {
                    let policy = self
                        .cloud
                        .registration(service)
                        .map(|r| r.policy.clone())
                        .ok_or_else(|| format!("unknown service `{service}`"))?;
                    self.peps[owner].preset_selections(&policy, selections).map_err(|e| e.to_string())?
                } else {
                    selections.clone()
                };
                self.apply_consent(rng, owner, service, selections, at)
            }
            Action::Choice { owner, service, method, selection } => {
                let mut selections = self
                    .selections
                    .get(&(owner.clone(), service.clone()))
                    .cloned()
                    .ok_or_else(|| format!("no earlier consent by `{owner}` for `{service}`"))?;
                selections.insert(method.clone(), *selection);
                self.apply_consent(rng, owner, service, selections, at)
            }
            Action::Annotation { owner, field, level } => {
                let pep = self.pep(owner);
                match field {
                    Some(f) => pep.set_annotation(f.clone(), level.clone()),
                    None => pep.set_default_annotation(level.clone()),
                }
                .map_err(|e| e.to_string())?;
                Ok(Outcome::Nothing)
            }
            Action::Assertion { asserter, owner, claim, asserted_at } => {
                let assertion = ExternalAssertion::sign(&self.asserters[asserter], claim, owner, asserted_at.unwrap_or(at));
                let issued = self.pep(owner).submit_external_assertion(rng, assertion, at).map_err(|e| e.to_string())?;
                self.upload_emergencies(owner, &issued)?;
                Ok(Outcome::Emergencies(issued))
            }
            Action::Invoke { service, method, owner, select } => {
                let result = self.cloud.invoke_method(service, method, owner, select, at).map_err(|e| e.to_string())?;
                *self.expected_log.entry(owner.clone()).or_default() += result.accesses.len();
                Ok(Outcome::Invoke(result))
            }
            Action::Rotate { owner } => {
                let pep = self.pep(owner);
                let rotated = pep.rotate_epochs(at);
                let grants = pep.refresh_consent_grants(rng, at).map_err(|e| e.to_string())?;
                self.push_grants(owner, &grants)?;
                Ok(Outcome::Grants { rotated, grants })
            }
            Action::Revoke { owner, service } => {
                let outcome = self.pep(owner).revoke_consent(rng, service, at).map_err(|e| e.to_string())?;
                self.selections.remove(&(owner.clone(), service.clone()));
                let owner_pk = self.peps[owner].owner_public_key();
                self.cloud
                    .consent_sync(ConsentSync {
                        owner: owner.clone(),
                        owner_pk,
                        service_id: service.clone(),
                        consent: None,
                        grants: Vec::new(),
                    })
                    .map_err(|e| e.to_string())?;
                self.push_grants(owner, &outcome.regrants)?;
                Ok(Outcome::Revoke(outcome))
            }
            Action::Checkpoint { owner } => Ok(Outcome::Checkpoint(self.cloud.close_log(owner).map(|c| c.up_to_seq))),
            Action::Expect { .. } => Ok(Outcome::Nothing),
        }
    }

    fn step_result(&self, id: &str) -> Result<&Outcome, String> {
        match self.results.get(id) {
            Some(Ok(o)) => Ok(o),
            Some(Err(e)) => Err(format!("step `{id}` failed: {e}")),
            None => Err(format!("step `{id}` has not run yet")),
        }
    }

    fn invocation(&self, id: &str) -> Result<&InvocationResult, String> {
        match self.step_result(id)? {
            Outcome::Invoke(r) => Ok(r),
            _ => Err(format!("step `{id}` is not an invoke")),
        }
    }

    /// `Ok(())` when the expectation holds, otherwise what was observed instead.
    fn check(&mut self, e: &Expectation) -> Result<(), String> {
        let equal = |what: &str, expected: &dyn std::fmt::Debug, got: &dyn std::fmt::Debug| {
            let (a, b) = (format!("{expected:?}"), format!("{got:?}"));
            if a == b {
                Ok(())
            } else {
                Err(format!("{what}: expected {a}, got {b}"))
            }
        };
        match e {
            Expectation::StepOk { step } => self.step_result(step).map(|_| ()),
            Expectation::StepError { step, contains } => match self.results.get(step) {
                Some(Err(msg)) if contains.as_ref().is_none_or(|c| msg.contains(c.as_str())) => Ok(()),
                Some(Err(msg)) => Err(format!("error `{msg}` lacks `{}`", contains.as_deref().unwrap_or(""))),
                Some(Ok(_)) => Err(format!("step `{step}` succeeded")),
                None => Err(format!("step `{step}` has not run yet")),
            },
            Expectation::Decision { step, decision } => match self.step_result(step)? {
                Outcome::Ingest(o) => equal("decision", decision, &decision_name(&o.decision)),
                _ => Err(format!("step `{step}` is not an ingest")),
            },
            Expectation::Decisions { owner, field, decision } => {
                let seen: Vec<&str> =
                    self.decisions.iter().filter(|(o, f, _)| o == owner && f == field).map(|(_, _, d)| *d).collect();
                if seen.is_empty() {
                    return Err(format!("no ingest of `{field}`"));
                }
                match seen.iter().find(|d| **d != decision.as_str()) {
                    None => Ok(()),
                    Some(d) => Err(format!("an ingest was decided {d}")),
                }
            }
            Expectation::CiphertextCount { field, equals } => {
                equal("ciphertexts", equals, &self.cloud.ciphertext_count(field))
            }
            Expectation::LocalStoreCount { owner, equals } => {
                let expected = equals.unwrap_or_else(|| self.ingests.get(owner).copied().unwrap_or(0));
                equal("local entries", &expected, &self.peps[owner].local_store().len())
            }
            Expectation::GrantedFields { step, fields } => match self.step_result(step)? {
                Outcome::Consent(o) => equal("granted fields", fields, &o.granted_fields),
                _ => Err(format!("step `{step}` is not a consent or choice")),
            },
            Expectation::GrantsIssued { step, equals } => match self.step_result(step)?.grants_issued() {
                Some(n) => equal("grants", equals, &n),
                None => Err(format!("step `{step}` issues no grants")),
            },
            Expectation::Access { step, method, attribute, outcome, count } => {
                let matching: Vec<&'static str> = self
                    .invocation(step)?
                    .accesses
                    .iter()
                    .filter(|a| method.as_ref().is_none_or(|m| m == &a.method))
                    .filter(|a| attribute.as_ref().is_none_or(|f| f == &a.attribute))
                    .map(|a| access_name(&a.outcome))
                    .collect();
                if matching.is_empty() {
                    return Err("no matching access".into());
                }
                if let Some(n) = count {
                    equal("matching accesses", n, &matching.len())?;
                }
                match matching.iter().find(|o| **o != outcome.as_str()) {
                    None => Ok(()),
                    Some(o) => Err(format!("outcomes {matching:?} include {o}")),
                }
            }
            Expectation::Plaintexts { step, attribute, values } => {
                let mut got = Vec::new();
                for a in self.invocation(step)?.accesses.iter().filter(|a| &a.attribute == attribute) {
                    if let AccessOutcome::Value { values, .. } = &a.outcome {
                        for v in values {
                            got.push(serde_json::from_slice::<serde_json::Value>(&v.value).map_err(|e| e.to_string())?);
                        }
                    }
                }
                let expected: Vec<_> = values.iter().map(numbers_as_f64).collect();
                equal("plaintexts", &expected, &got.iter().map(numbers_as_f64).collect::<Vec<_>>())
            }
            Expectation::Withheld { step, attribute, equals } => {
                let n: usize = self
                    .invocation(step)?
                    .accesses
                    .iter()
                    .filter(|a| &a.attribute == attribute)
                    .map(|a| match &a.outcome {
                        AccessOutcome::Value { withheld, .. } => withheld.len(),
                        _ => 0,
                    })
                    .sum();
                equal("withheld records", equals, &n)
            }
            Expectation::LogCount { owner, equals } => equal("log entries", equals, &self.cloud.fetch_log(owner).entries.len()),
            Expectation::LogOutcomeCount { owner, outcome, equals } => {
                let n = self
                    .owner_payloads(owner)?
                    .iter()
                    .filter(|p| log_outcome_name(&p.outcome) == outcome.as_str())
                    .count();
                equal("matching log entries", equals, &n)
            }
            Expectation::LogVerifies { owner } => {
                let bundle = self.cloud.fetch_log(owner);
                let report = verify_chain(
                    &bundle.entries,
                    &bundle.checkpoints,
                    &self.cloud.platform_public_key(),
                    &self.ttp.public_key(),
                );
                if report.is_ok() {
                    Ok(())
                } else {
                    Err(format!("{report:?}"))
                }
            }
            Expectation::LogPurpose { owner, attribute, method, purpose } => {
                let payloads = self.owner_payloads(owner)?;
                let accesses: Vec<_> = payloads
                    .iter()
                    .filter(|p| &p.attribute == attribute && p.method.is_some())
                    .filter(|p| method.is_none() || p.method == *method)
                    .collect();
                if accesses.is_empty() {
                    return Err(format!("no logged access to `{attribute}`"));
                }
                match accesses.iter().find(|p| &p.purpose != purpose) {
                    None => Ok(()),
                    Some(p) => Err(format!("logged purpose {:?}", p.purpose)),
                }
            }
            Expectation::LogMatchesAccesses { owner } => {
                let expected = self.expected_log.get(owner).copied().unwrap_or(0);
                equal("log entries", &expected, &self.cloud.fetch_log(owner).entries.len())
            }
            Expectation::OwnerReadsLog { owner } => {
                let entries = self.cloud.fetch_log(owner).entries;
                let own = read_as_owner(&entries, &self.peps[owner].owner_keys().secret);
                if let Some(i) = own.iter().position(Result::is_err) {
                    return Err(format!("owner cannot open entry {i}"));
                }
                let stranger = SealingKeyPair::generate(&mut self.rng);
                let opened = read_as_owner(&entries, &stranger.secret).iter().filter(|r| r.is_ok()).count();
                equal("payloads opened by a foreign key", &0usize, &opened)
            }
            Expectation::Verdict { service, result, violations } => {
                let v = &self.verdicts[service];
                let (name, kinds) = match &v.result {
                    AuditResult::Pass => ("PASS", Vec::new()),
                    AuditResult::Fail { violations } => ("FAIL", violations.iter().map(violation_kind).collect()),
                };
                equal("result", result, &name)?;
                match violations {
                    Some(expected) => equal("violations", expected, &kinds),
                    None => Ok(()),
                }
            }
            Expectation::Listed { service, listed } => {
                let is = self.cloud.list_services().iter().any(|r| &r.service_id == service);
                equal("listed", listed, &is)
            }
            Expectation::Epoch { owner, field, equals } => {
                equal("epoch", &Some(*equals), &self.peps[owner].epoch(field).map(|e| e.current))
            }
        }
    }

    fn owner_payloads(&self, owner: &OwnerId) -> Result<Vec<crate::access_log::LogPayload>, String> {
        let entries = self.cloud.fetch_log(owner).entries;
        read_as_owner(&entries, &self.peps[owner].owner_keys().secret)
            .into_iter()
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())
    }
}

/// `72` and `72.0` compare equal.
fn numbers_as_f64(v: &serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Number(n) => n.as_f64().map_or_else(|| v.clone(), serde_json::Value::from),
        serde_json::Value::Array(items) => items.iter().map(numbers_as_f64).collect(),
        other => other.clone(),
    }
}

fn violation_kind(v: &crate::audit::Violation) -> String {
    let value = serde_json::to_value(v).expect("violation serializes");
    value["kind"].as_str().unwrap_or_default().to_string()
}

/// A finished run together with the component state it left behind.
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub cloud: Cloud,
    pub peps: BTreeMap<OwnerId, Pep>,
}

/// Runs every step in order on the simulated clock, then the final expectations.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    execute_scenario(s).map(|run| run.report)
}

/// [`run_scenario`], keeping the cloud and gateways for inspection.
pub fn execute_scenario(s: &Scenario) -> Result<ScenarioRun, ScenarioError> {
    check_well_formed(s)?;
    let mut world = World::setup(s)?;
    let mut steps = Vec::new();
    let mut expectations = Vec::new();
    let mut unexpected = 0;

    for (index, step) in s.timeline.iter().enumerate() {
        let result = world.run_step(step);
        let ok = result.is_ok();
        if !ok && !step.expect_error {
            unexpected += 1;
        }
        let (detail, error) = match &result {
            Ok(o) => (o.detail(), None),
            Err(e) => (serde_json::Value::Null, Some(e.clone())),
        };
        steps.push(StepReport { index, at: step.at, step: step.action.kind().into(), id: step.id.clone(), ok, error, detail });
        if let Some(id) = &step.id {
            world.results.insert(id.clone(), result);
        }
        if let Action::Expect { check } = &step.action {
            let verdict = world.check(check);
            expectations.push(ExpectationReport {
                index: expectations.len(),
                after_step: Some(index),
                check: check.clone(),
                passed: verdict.is_ok(),
                detail: verdict.err(),
            });
        }
    }
    for check in &s.expectations {
        let verdict = world.check(check);
        expectations.push(ExpectationReport {
            index: expectations.len(),
            after_step: None,
            check: check.clone(),
            passed: verdict.is_ok(),
            detail: verdict.err(),
        });
    }

    let log_heads = s
        .owners
        .iter()
        .map(|o| {
            let head = world.cloud.fetch_log(&o.id).entries.last().map(|e| e.entry_hash).unwrap_or([0; 32]);
            (o.id.clone(), hex::encode(head))
        })
        .collect();
    let passed_count = expectations.iter().filter(|e| e.passed).count();
    let summary = ScenarioSummary {
        steps: steps.len(),
        unexpected_step_errors: unexpected,
        expectations_passed: passed_count,
        expectations_failed: expectations.len() - passed_count,
    };
    let passed = unexpected == 0 && summary.expectations_failed == 0;
    let report = ScenarioReport { scenario: s.name.clone(), seed: s.seed, steps, expectations, log_heads, summary, passed };
    Ok(ScenarioRun { report, cloud: world.cloud, peps: world.peps })
}

#[cfg(test)]
mod tests;
