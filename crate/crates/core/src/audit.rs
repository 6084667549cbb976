//! The trusted third party: audits services against their PDL declarations,
//! signs verdicts, publishes default privacy configurations, signs role
//! directories, and countersigns access-log checkpoints.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use thiserror::Error;

use crate::access_log::{make_checkpoint, Checkpoint, CheckpointSigner};
use crate::canonical::to_canonical_line;
use crate::crypto::{self, SealingPublicKey, Signature, SigningKeyPair, SigningPublicKey};
use crate::gateway::{AnnotationLevel, Trigger};
use crate::ids::{FieldId, OwnerId, RoleId, RuleId, ServiceId, Timestamp};
use crate::pdl::{self, MethodRef, MethodStatus, PdlModel, ValidationReport};
use crate::policy::{model_digest, Selection};

/// Upper bound on optional methods for exhaustive choice simulation.
pub const MAX_AUDITED_CHOICES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("model has {} validation error(s)", .0.errors.len())]
    InvalidModel(ValidationReport),
    #[error("{0} optional methods exceed the exhaustive audit bound")]
    TooManyChoices(usize),
    #[error("unknown preset level `{0}`")]
    UnknownLevel(String),
}

/// What one service method does when invoked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodScript {
    pub reads: Vec<FieldId>,
    /// Other service methods this method invokes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<MethodRef>,
}

impl MethodScript {
    pub fn reads<I, S>(attrs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<FieldId>,
    {
        Self { reads: attrs.into_iter().map(Into::into).collect(), calls: Vec::new() }
    }
}

/// Declarative stand-in for a service implementation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccessScript {
    pub methods: BTreeMap<MethodRef, MethodScript>,
}

impl AccessScript {
    pub fn digest(&self) -> String {
        let line = to_canonical_line(self).expect("script serializes");
        hex::encode(crypto::sha256(line.as_bytes()))
    }

    pub fn reads_of(&self, m: &MethodRef) -> &[FieldId] {
        self.methods.get(m).map(|s| s.reads.as_slice()).unwrap_or(&[])
    }

    pub fn calls_of(&self, m: &MethodRef) -> &[MethodRef] {
        self.methods.get(m).map(|s| s.calls.as_slice()).unwrap_or(&[])
    }

    /// Every method named in the script, as key or as call target.
    pub fn referenced_methods(&self) -> BTreeSet<&MethodRef> {
        self.methods.iter().flat_map(|(m, s)| std::iter::once(m).chain(&s.calls)).collect()
    }
}

/// What a service promises about one emergency rule it implements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergencyDeclaration {
    pub rule_id: RuleId,
    /// The externally asserted claim access is conditional on (e.g. "unconscious").
    pub promised_claim: String,
    pub trigger: Trigger,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    /// A read neither declared by an access edge nor covered by attribute-level use.
    UndeclaredRead { method: MethodRef, attribute: FieldId },
    /// A declared read whose method has no use text to state the purpose.
    UncoveredPurpose { method: MethodRef, attribute: FieldId },
    /// Under `assignment`, enabled `entry` runs disabled optional `method`, which reads data.
    DisabledMethodReads { entry: MethodRef, method: MethodRef, assignment: BTreeMap<MethodRef, Selection> },
    /// The emergency rule can fire without a trusted assertion of the promised claim.
    UnconfirmedEmergency { rule_id: RuleId, claim: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "UPPERCASE")]
pub enum AuditResult {
    Pass,
    Fail { violations: Vec<Violation> },
}

impl AuditResult {
    pub fn is_pass(&self) -> bool {
        matches!(self, AuditResult::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub service_id: ServiceId,
    pub model_digest: String,
    pub script_digest: String,
    pub result: AuditResult,
    pub audited_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttp_signature: Option<Signature>,
}

impl AuditVerdict {
    fn signed_bytes(&self) -> Vec<u8> {
        let unsigned = AuditVerdict { ttp_signature: None, ..self.clone() };
        let mut out = b"audit-verdict-v1\n".to_vec();
        out.extend(to_canonical_line(&unsigned).expect("verdict serializes").into_bytes());
        out
    }

    pub fn verify(&self, ttp_pk: &SigningPublicKey) -> bool {
        self.ttp_signature.is_some_and(|s| crypto::verify(ttp_pk, &self.signed_bytes(), &s))
    }
}

/// Methods whose use is a matter of user choice, in declaration order.
fn optional_methods(model: &PdlModel) -> Vec<MethodRef> {
    model
        .methods()
        .map(|(m, _)| m)
        .filter(|m| pdl::method_status(model, m) == Ok(MethodStatus::Optional))
        .collect()
}

fn read_is_declared(model: &PdlModel, method: &MethodRef, attribute: &FieldId) -> bool {
    model.attribute(attribute).is_some_and(|a| {
        a.use_text.is_some() || a.mandatory_refs.contains(method) || a.optional_refs.contains(method)
    })
}

/// Static and simulated review of a service script against its model.
pub fn audit_service(
    service_id: &ServiceId,
    model: &PdlModel,
    script: &AccessScript,
    declarations: &[EmergencyDeclaration],
    audited_at: Timestamp,
) -> Result<AuditVerdict, AuditError> {
    pdl::ensure_valid(model).map_err(|e| match e {
        pdl::PdlError::InvalidModel(r) => AuditError::InvalidModel(r),
        other => AuditError::InvalidModel(ValidationReport {
            errors: vec![pdl::Finding { code: pdl::FindingCode::V1, location: String::new(), message: other.to_string() }],
            warnings: Vec::new(),
        }),
    })?;
    let optional = optional_methods(model);
    if optional.len() > MAX_AUDITED_CHOICES {
        return Err(AuditError::TooManyChoices(optional.len()));
    }
    let mut violations = Vec::new();

    for (method, body) in &script.methods {
        for attribute in &body.reads {
            if !read_is_declared(model, method, attribute) {
                violations.push(Violation::UndeclaredRead { method: method.clone(), attribute: attribute.clone() });
                continue;
            }
            let attr_use = model.attribute(attribute).and_then(|a| a.use_text.as_ref());
            let method_use = model.method(method).and_then(|m| m.use_text.as_ref());
            if attr_use.is_none() && method_use.is_none() {
                violations.push(Violation::UncoveredPurpose { method: method.clone(), attribute: attribute.clone() });
            }
        }
    }

    let mut seen = BTreeSet::new();
    for bits in 0u32..(1u32 << optional.len()) {
        let assignment: BTreeMap<MethodRef, Selection> = optional
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), if bits >> i & 1 == 1 { Selection::Use } else { Selection::NotUsed }))
            .collect();
        let enabled = |m: &MethodRef| assignment.get(m) != Some(&Selection::NotUsed);
        for entry in script.methods.keys().filter(|m| enabled(m)) {
            let mut visited = BTreeSet::from([entry.clone()]);
            let mut stack = vec![entry.clone()];
            while let Some(current) = stack.pop() {
                for callee in script.calls_of(&current) {
                    if !visited.insert(callee.clone()) {
                        continue;
                    }
                    if enabled(callee) {
                        stack.push(callee.clone());
                    } else if !script.reads_of(callee).is_empty() && seen.insert((entry.clone(), callee.clone())) {
                        violations.push(Violation::DisabledMethodReads {
                            entry: entry.clone(),
                            method: callee.clone(),
                            assignment: assignment.clone(),
                        });
                    }
                }
            }
        }
    }

    for d in declarations {
        if !d.trigger.requires_trusted_claim(&d.promised_claim) {
            violations.push(Violation::UnconfirmedEmergency { rule_id: d.rule_id.clone(), claim: d.promised_claim.clone() });
        }
    }

    let result = if violations.is_empty() { AuditResult::Pass } else { AuditResult::Fail { violations } };
    Ok(AuditVerdict {
        service_id: service_id.clone(),
        model_digest: model_digest(model),
        script_digest: script.digest(),
        result,
        audited_at,
        ttp_signature: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PresetLevel {
    Strict,
    Balanced,
    Permissive,
}

impl FromStr for PresetLevel {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(PresetLevel::Strict),
            "balanced" => Ok(PresetLevel::Balanced),
            "permissive" => Ok(PresetLevel::Permissive),
            _ => Err(AuditError::UnknownLevel(s.to_string())),
        }
    }
}

/// Owner-independent configuration fragment carried by a preset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigTemplate {
    pub default_annotation: AnnotationLevel,
    /// Fields exempted from the default annotation.
    #[serde(default)]
    pub whitelist: BTreeMap<FieldId, AnnotationLevel>,
    pub default_choice: Selection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaultConfiguration {
    pub preset_id: String,
    pub level: PresetLevel,
    pub template: ConfigTemplate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttp_signature: Option<Signature>,
}

impl DefaultConfiguration {
    fn signed_bytes(&self) -> Vec<u8> {
        let unsigned = DefaultConfiguration { ttp_signature: None, ..self.clone() };
        let mut out = b"default-config-v1\n".to_vec();
        out.extend(to_canonical_line(&unsigned).expect("preset serializes").into_bytes());
        out
    }

    pub fn verify(&self, ttp_pk: &SigningPublicKey) -> bool {
        self.ttp_signature.is_some_and(|s| crypto::verify(ttp_pk, &self.signed_bytes(), &s))
    }

    pub fn template_for(level: PresetLevel, whitelist: BTreeMap<FieldId, AnnotationLevel>) -> ConfigTemplate {
        match level {
            PresetLevel::Strict => ConfigTemplate {
                default_annotation: AnnotationLevel::LocalOnly,
                whitelist,
                default_choice: Selection::NotUsed,
            },
            PresetLevel::Balanced => ConfigTemplate {
                default_annotation: AnnotationLevel::Unrestricted,
                whitelist: BTreeMap::new(),
                default_choice: Selection::NotUsed,
            },
            PresetLevel::Permissive => ConfigTemplate {
                default_annotation: AnnotationLevel::Unrestricted,
                whitelist: BTreeMap::new(),
                default_choice: Selection::Use,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMember {
    pub service_id: ServiceId,
    pub public_key: SealingPublicKey,
}

/// TTP-signed mapping from role ids to the services that currently hold the role.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleDirectory {
    pub roles: BTreeMap<RoleId, Vec<RoleMember>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttp_signature: Option<Signature>,
}

impl RoleDirectory {
    fn signed_bytes(&self) -> Vec<u8> {
        let unsigned = RoleDirectory { ttp_signature: None, ..self.clone() };
        let mut out = b"role-directory-v1\n".to_vec();
        out.extend(to_canonical_line(&unsigned).expect("directory serializes").into_bytes());
        out
    }

    pub fn verify(&self, ttp_pk: &SigningPublicKey) -> bool {
        self.ttp_signature.is_some_and(|s| crypto::verify(ttp_pk, &self.signed_bytes(), &s))
    }
}

/// Trusted third party holding the signing key users anchor their trust in.
#[derive(Debug, Clone)]
pub struct Ttp {
    key: SigningKeyPair,
}

impl Ttp {
    pub fn new(key: SigningKeyPair) -> Self {
        Self { key }
    }

    pub fn public_key(&self) -> SigningPublicKey {
        self.key.public()
    }

    pub fn sign_verdict(&self, verdict: AuditVerdict) -> AuditVerdict {
        let sig = self.key.sign(&verdict.signed_bytes());
        AuditVerdict { ttp_signature: Some(sig), ..verdict }
    }

    pub fn audit(
        &self,
        service_id: &ServiceId,
        model: &PdlModel,
        script: &AccessScript,
        declarations: &[EmergencyDeclaration],
        now: Timestamp,
    ) -> Result<AuditVerdict, AuditError> {
        audit_service(service_id, model, script, declarations, now).map(|v| self.sign_verdict(v))
    }

    pub fn publish_default_config(&self, level: PresetLevel, whitelist: BTreeMap<FieldId, AnnotationLevel>) -> DefaultConfiguration {
        let preset_id = format!("ttp-{}", format!("{level:?}").to_ascii_lowercase());
        let mut preset = DefaultConfiguration {
            preset_id,
            level,
            template: DefaultConfiguration::template_for(level, whitelist),
            ttp_signature: None,
        };
        preset.ttp_signature = Some(self.key.sign(&preset.signed_bytes()));
        preset
    }

    /// Parses the level name first; unknown names are rejected.
    pub fn publish_named(&self, level: &str) -> Result<DefaultConfiguration, AuditError> {
        Ok(self.publish_default_config(level.parse()?, BTreeMap::new()))
    }

    pub fn sign_role_directory(&self, mut directory: RoleDirectory) -> RoleDirectory {
        directory.ttp_signature = Some(self.key.sign(&directory.signed_bytes()));
        directory
    }
}

impl CheckpointSigner for Ttp {
    fn sign_checkpoint(&self, owner: &OwnerId, up_to_seq: u64, head: [u8; 32]) -> Checkpoint {
        make_checkpoint(&self.key, owner, up_to_seq, head)
    }
}

#[cfg(test)]
mod tests;
