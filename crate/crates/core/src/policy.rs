//! Service-specific privacy policy and monitoring specification, both derived
//! mechanically from a validated PDL model.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use thiserror::Error;

use crate::ids::{FieldId, ServiceId};
use crate::pdl::{self, MethodRef, MethodStatus, PdlModel, ValidationReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("model has {} validation error(s)", .0.errors.len())]
    InvalidModel(ValidationReport),
    #[error("no selection for optional method `{0}`")]
    MissingSelection(MethodRef),
    #[error("selection for `{0}`, which is not a choice of this policy")]
    UnknownSelection(MethodRef),
}

impl From<pdl::PdlError> for PolicyError {
    fn from(e: pdl::PdlError) -> Self {
        match e {
            pdl::PdlError::InvalidModel(r) => PolicyError::InvalidModel(r),
            other => PolicyError::InvalidModel(ValidationReport {
                errors: vec![pdl::Finding {
                    code: pdl::FindingCode::V1,
                    location: String::new(),
                    message: other.to_string(),
                }],
                warnings: Vec::new(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataUse {
    pub attribute: FieldId,
    pub purpose: String,
    /// Methods with an access edge to the attribute. Empty for attributes
    /// declared service-wide through their own `use` text only.
    pub methods: Vec<MethodRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyChoice {
    pub method: MethodRef,
    pub use_option_text: String,
    pub not_used_option_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub method: MethodRef,
    pub status: MethodStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub service_id: ServiceId,
    pub data_uses: Vec<DataUse>,
    pub choices: Vec<PolicyChoice>,
    pub methods: Vec<MethodEntry>,
    /// Hex SHA-256 of the canonical PDL rendering.
    pub model_digest: String,
    /// General liability text supplied by the provider, attached verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preamble: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermittedMethod {
    pub method: MethodRef,
    pub status: MethodStatus,
    pub purpose: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitoredAttribute {
    pub attribute: FieldId,
    pub purpose: String,
    /// The attribute carries its own `use` text and may be read by any method.
    pub service_wide: bool,
    pub methods: Vec<PermittedMethod>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitoringSpec {
    pub monitored: Vec<MonitoredAttribute>,
}

impl MonitoringSpec {
    pub fn entry(&self, attribute: &FieldId) -> Option<&MonitoredAttribute> {
        self.monitored.iter().find(|m| &m.attribute == attribute)
    }

    /// Purpose logged when `method` reads `attribute`; `None` when the read is undeclared.
    pub fn purpose_for(&self, attribute: &FieldId, method: &MethodRef) -> Option<&str> {
        let entry = self.entry(attribute)?;
        if entry.service_wide {
            return Some(&entry.purpose);
        }
        entry.methods.iter().find(|p| &p.method == method).map(|p| p.purpose.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Selection {
    Use,
    NotUsed,
}

/// The outcome of a user's consent decisions for one service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedConsent {
    pub service_id: ServiceId,
    pub model_digest: String,
    pub selections: BTreeMap<MethodRef, Selection>,
    pub enabled: BTreeSet<MethodRef>,
}

impl ResolvedConsent {
    pub fn is_enabled(&self, m: &MethodRef) -> bool {
        self.enabled.contains(m)
    }
}

pub fn model_digest(model: &PdlModel) -> String {
    hex::encode(Sha256::digest(pdl::render(model).as_bytes()))
}

fn method_texts<'a>(model: &'a PdlModel, m: &MethodRef) -> (Option<&'a str>, Option<&'a str>) {
    model
        .method(m)
        .map(|x| (x.use_text.as_deref(), x.not_used_text.as_deref()))
        .unwrap_or((None, None))
}

fn edged_methods(attr: &pdl::PdlAttribute) -> Vec<MethodRef> {
    attr.mandatory_refs.iter().chain(&attr.optional_refs).cloned().collect()
}

fn joined_method_purposes(model: &PdlModel, methods: &[MethodRef]) -> String {
    let mut seen = Vec::<&str>::new();
    for m in methods {
        if let (Some(u), _) = method_texts(model, m) {
            if !seen.contains(&u) {
                seen.push(u);
            }
        }
    }
    seen.join("; ")
}

pub fn generate_policy(model: &PdlModel, service_id: &ServiceId) -> Result<PolicyDocument, PolicyError> {
    pdl::ensure_valid(model)?;
    let data_uses = model
        .attributes()
        .filter(|(_, a)| a.is_declared())
        .map(|(id, a)| {
            let methods = edged_methods(a);
            let purpose = match &a.use_text {
                Some(u) => u.clone(),
                None => joined_method_purposes(model, &methods),
            };
            DataUse { attribute: id, purpose, methods }
        })
        .collect();
    let mut methods = Vec::new();
    let mut choices = Vec::new();
    for (m, method) in model.methods() {
        let status = pdl::method_status(model, &m)?;
        if status == MethodStatus::Optional {
            choices.push(PolicyChoice {
                method: m.clone(),
                use_option_text: method.use_text.clone().unwrap_or_default(),
                not_used_option_text: method.not_used_text.clone().unwrap_or_default(),
            });
        }
        methods.push(MethodEntry { method: m, status });
    }
    Ok(PolicyDocument {
        service_id: service_id.clone(),
        data_uses,
        choices,
        methods,
        model_digest: model_digest(model),
        preamble: None,
    })
}

pub fn generate_monitoring_spec(model: &PdlModel) -> Result<MonitoringSpec, PolicyError> {
    pdl::ensure_valid(model)?;
    let mut monitored = Vec::new();
    for (id, a) in model.attributes().filter(|(_, a)| a.is_declared()) {
        let edged = edged_methods(a);
        let purpose = a.use_text.clone().unwrap_or_else(|| joined_method_purposes(model, &edged));
        let methods = edged
            .into_iter()
            .map(|m| {
                let status = pdl::method_status(model, &m)?;
                let method_purpose = match (&a.use_text, method_texts(model, &m).0) {
                    (Some(u), _) => u.clone(),
                    (None, Some(u)) => u.to_string(),
                    (None, None) => String::new(),
                };
                Ok(PermittedMethod { method: m, status, purpose: method_purpose })
            })
            .collect::<Result<Vec<_>, PolicyError>>()?;
        monitored.push(MonitoredAttribute { attribute: id, purpose, service_wide: a.use_text.is_some(), methods });
    }
    Ok(MonitoringSpec { monitored })
}

/// Human-readable policy text. Deterministic for a given document.
pub fn render_policy_text(doc: &PolicyDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Privacy policy for service {}", doc.service_id);
    let _ = writeln!(out, "Model digest: sha256:{}", doc.model_digest);
    out.push('\n');
    if let Some(preamble) = &doc.preamble {
        out.push_str(preamble.trim_end());
        out.push_str("\n\n");
    }
    out.push_str("How your data is used\n\n");
    if doc.data_uses.is_empty() {
        out.push_str("This service does not use any of your data.\n\n");
    }
    for du in &doc.data_uses {
        let _ = writeln!(out, "{} is used to: {}", du.attribute, du.purpose);
        if du.methods.is_empty() {
            out.push_str("Accessed by: any function of the service.\n");
        } else {
            let names: Vec<String> = du
                .methods
                .iter()
                .map(|m| {
                    let status = doc.methods.iter().find(|e| &e.method == m).map(|e| e.status);
                    match status {
                        Some(MethodStatus::Optional) => format!("{m} (optional)"),
                        _ => format!("{m} (mandatory)"),
                    }
                })
                .collect();
            let _ = writeln!(out, "Accessed by: {}.", names.join(", "));
        }
        out.push('\n');
    }
    out.push_str("Your decisions\n\n");
    if doc.choices.is_empty() {
        out.push_str("No decisions required.\n");
    }
    for (i, c) in doc.choices.iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, c.method);
        let _ = writeln!(out, "   (a) use: {}", c.use_option_text);
        let _ = writeln!(out, "   (b) not used: {}", c.not_used_option_text);
    }
    out
}

pub fn resolve_choices(
    doc: &PolicyDocument,
    selections: &BTreeMap<MethodRef, Selection>,
) -> Result<ResolvedConsent, PolicyError> {
    if let Some(extra) = selections.keys().find(|m| !doc.choices.iter().any(|c| &c.method == *m)) {
        return Err(PolicyError::UnknownSelection(extra.clone()));
    }
    if let Some(missing) = doc.choices.iter().find(|c| !selections.contains_key(&c.method)) {
        return Err(PolicyError::MissingSelection(missing.method.clone()));
    }
    let enabled = doc
        .methods
        .iter()
        .filter(|e| match e.status {
            MethodStatus::Mandatory => true,
            MethodStatus::Optional => selections.get(&e.method) == Some(&Selection::Use),
        })
        .map(|e| e.method.clone())
        .collect();
    Ok(ResolvedConsent {
        service_id: doc.service_id.clone(),
        model_digest: doc.model_digest.clone(),
        selections: selections.clone(),
        enabled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{camera_care_model, CAMERA_CARE_PDL};
    use crate::testkit;
    use proptest::prelude::*;

    fn ad() -> MethodRef {
        MethodRef::new("Analysis", "getPersonalizedAd")
    }

    fn hc() -> MethodRef {
        MethodRef::new("Analysis", "healthCritical")
    }

    fn doc() -> PolicyDocument {
        generate_policy(&camera_care_model(), &ServiceId::from("camera-care")).unwrap()
    }

    #[test]
    fn camera_care_has_one_choice_with_verbatim_texts() {
        let d = doc();
        assert_eq!(d.choices.len(), 1);
        assert_eq!(d.choices[0].method, ad());
        assert_eq!(d.choices[0].use_option_text, "Ad funded service");
        assert_eq!(d.choices[0].not_used_option_text, "Fee is $1 per Month");
    }

    #[test]
    fn camera_care_data_uses_exclude_stream() {
        let attrs: Vec<_> = doc().data_uses.iter().map(|d| d.attribute.to_string()).collect();
        assert_eq!(attrs, vec!["Camera.location", "Camera.recognizedPersons"]);
    }

    #[test]
    fn no_optional_methods_no_choices() {
        let m = pdl::parse("class A { <<use=\"u\">> int a; <<use=\"x\">> int run(); }").unwrap();
        assert!(generate_policy(&m, &"s".into()).unwrap().choices.is_empty());
    }

    #[test]
    fn invalid_model_is_rejected() {
        let m = pdl::parse(&CAMERA_CARE_PDL.replace("<<notUsed=\"Fee is $1 per Month\">>", "")).unwrap();
        assert!(matches!(generate_policy(&m, &"s".into()), Err(PolicyError::InvalidModel(_))));
        assert!(matches!(generate_monitoring_spec(&m), Err(PolicyError::InvalidModel(_))));
    }

    #[test]
    fn camera_care_monitoring_spec() {
        let spec = generate_monitoring_spec(&camera_care_model()).unwrap();
        assert_eq!(spec.monitored.len(), 2);
        let rp = spec.entry(&"Camera.recognizedPersons".into()).unwrap();
        let permitted: Vec<_> = rp.methods.iter().map(|p| (p.method.clone(), p.status)).collect();
        assert_eq!(permitted, vec![(hc(), MethodStatus::Mandatory), (ad(), MethodStatus::Optional)]);
        assert_eq!(
            spec.purpose_for(&"Camera.recognizedPersons".into(), &hc()),
            Some("Determine whether resident is alone and needs help.")
        );
        assert_eq!(
            spec.purpose_for(&"Camera.location".into(), &ad()),
            Some("Determine where to display image in house overview map.")
        );
        assert_eq!(spec.purpose_for(&"Camera.stream".into(), &hc()), None);
    }

    #[test]
    fn empty_model_gives_empty_spec() {
        assert!(generate_monitoring_spec(&pdl::parse("").unwrap()).unwrap().monitored.is_empty());
    }

    #[test]
    fn rendered_text() {
        let d = doc();
        let text = render_policy_text(&d);
        assert!(text.contains("Determine whether resident is alone and needs help."));
        assert!(text.contains("Camera.location is used to: Determine where to display image in house overview map."));
        assert!(text.contains("Fee is $1 per Month"));
        assert!(!text.contains("No decisions required."));
        assert_eq!(text, render_policy_text(&d));

        let m = pdl::parse("class A { <<use=\"u\">> int a; }").unwrap();
        let plain = render_policy_text(&generate_policy(&m, &"s".into()).unwrap());
        assert!(plain.contains("No decisions required."));
    }

    #[test]
    fn preamble_is_attached_verbatim() {
        let mut d = doc();
        d.preamble = Some("Liability: none whatsoever.".into());
        assert!(render_policy_text(&d).contains("Liability: none whatsoever.\n"));
    }

    #[test]
    fn resolve_camera_care_choices() {
        let d = doc();
        let not_used = resolve_choices(&d, &BTreeMap::from([(ad(), Selection::NotUsed)])).unwrap();
        assert_eq!(not_used.enabled, BTreeSet::from([hc()]));
        let used = resolve_choices(&d, &BTreeMap::from([(ad(), Selection::Use)])).unwrap();
        assert_eq!(used.enabled, BTreeSet::from([hc(), ad()]));
        assert_eq!(used.model_digest, d.model_digest);
        assert_eq!(resolve_choices(&d, &BTreeMap::new()), Err(PolicyError::MissingSelection(ad())));
        assert_eq!(
            resolve_choices(&d, &BTreeMap::from([(ad(), Selection::Use), (hc(), Selection::Use)])),
            Err(PolicyError::UnknownSelection(hc()))
        );
    }

    #[test]
    fn digest_changes_with_any_stereotype_character() {
        let base = model_digest(&camera_care_model());
        let changed = pdl::parse(&CAMERA_CARE_PDL.replace("$1", "$2")).unwrap();
        assert_ne!(base, model_digest(&changed));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn choices_match_optional_methods(seed in any::<u64>()) {
            let mut rng = crate::rng::seeded(seed);
            let model = testkit::random_model(&mut rng, &testkit::ModelParams::default());
            let d = generate_policy(&model, &"svc".into()).unwrap();
            let optional = model.methods().filter(|(m, _)| pdl::method_status(&model, m).unwrap() == MethodStatus::Optional).count();
            prop_assert_eq!(d.choices.len(), optional);
            let spec = generate_monitoring_spec(&model).unwrap();
            for (id, a) in model.attributes() {
                let listed = d.data_uses.iter().any(|u| u.attribute == id);
                prop_assert_eq!(listed, a.is_declared());
                prop_assert_eq!(spec.entry(&id).is_some(), a.is_declared());
            }
        }

        #[test]
        fn resolved_consent_contains_every_mandatory_method(seed in any::<u64>(), bits in any::<u16>()) {
            let mut rng = crate::rng::seeded(seed);
            let model = testkit::random_model(&mut rng, &testkit::ModelParams::default());
            let d = generate_policy(&model, &"svc".into()).unwrap();
            let selections: BTreeMap<_, _> = d.choices.iter().enumerate()
                .map(|(i, c)| (c.method.clone(), if bits >> (i % 16) & 1 == 1 { Selection::Use } else { Selection::NotUsed }))
                .collect();
            let consent = resolve_choices(&d, &selections).unwrap();
            for e in &d.methods {
                if e.status == MethodStatus::Mandatory {
                    prop_assert!(consent.enabled.contains(&e.method));
                }
            }
        }

        #[test]
        fn digest_detects_single_character_edits(seed in any::<u64>(), pick in any::<usize>(), ch in proptest::char::range('a', 'z')) {
            let mut rng = crate::rng::seeded(seed);
            let model = testkit::random_model(&mut rng, &testkit::ModelParams::default());
            let Some((id, _)) = model.attributes().find(|(_, a)| a.use_text.is_some()) else { return Ok(()) };
            let mut edited = model.clone();
            let (class, attr) = id.as_str().split_once('.').unwrap();
            let a = edited.classes.iter_mut().find(|c| c.name == class).unwrap()
                .attributes.iter_mut().find(|a| a.name == attr).unwrap();
            let text: Vec<char> = a.use_text.clone().unwrap().chars().collect();
            let i = pick % text.len();
            let mut new_text = text.clone();
            new_text[i] = if text[i] == ch { 'Z' } else { ch };
            a.use_text = Some(new_text.into_iter().collect());
            prop_assert_ne!(model_digest(&model), model_digest(&edited));
        }
    }
}
