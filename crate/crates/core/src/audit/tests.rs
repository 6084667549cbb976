use super::*;
use crate::fixtures::{camera_care_model, camera_care_script};
use crate::gateway::{Aggregate, Comparator};
use crate::rng::seeded;
use crate::testkit::{self, ModelParams, ScriptParams};
use proptest::prelude::*;

fn svc() -> ServiceId {
    ServiceId::from("camera-care")
}

fn ad() -> MethodRef {
    MethodRef::new("Analysis", "getPersonalizedAd")
}

fn hc() -> MethodRef {
    MethodRef::new("Analysis", "healthCritical")
}

fn ttp() -> Ttp {
    Ttp::new(SigningKeyPair::generate(&mut seeded(99)))
}

fn low_heart_rate() -> Trigger {
    Trigger::Internal {
        field: FieldId::from("vitals.heartRate"),
        aggregate: Aggregate::Latest,
        window: 600,
        comparator: Comparator::Lt,
        threshold: 40.0,
    }
}

fn doctor_says(claim: &str) -> Trigger {
    Trigger::External {
        claim_id: claim.into(),
        trusted: vec![SigningKeyPair::generate(&mut seeded(5)).public()],
        freshness: 600,
    }
}

fn declaration(trigger: Trigger) -> EmergencyDeclaration {
    EmergencyDeclaration { rule_id: RuleId::from("doctor"), promised_claim: "unconscious".into(), trigger }
}

#[test]
fn faithful_camera_care_script_passes() {
    let v = audit_service(&svc(), &camera_care_model(), &camera_care_script(), &[], 0).unwrap();
    assert_eq!(v.result, AuditResult::Pass);
    assert_eq!(v.model_digest, model_digest(&camera_care_model()));
    assert_eq!(v.script_digest, camera_care_script().digest());
}

#[test]
fn reading_the_stream_is_exactly_one_undeclared_read() {
    let mut script = camera_care_script();
    script.methods.get_mut(&ad()).unwrap().reads.push(FieldId::from("Camera.stream"));
    let v = audit_service(&svc(), &camera_care_model(), &script, &[], 0).unwrap();
    assert_eq!(
        v.result,
        AuditResult::Fail {
            violations: vec![Violation::UndeclaredRead { method: ad(), attribute: FieldId::from("Camera.stream") }]
        }
    );
}

#[test]
fn location_is_readable_by_any_method_through_attribute_use() {
    let mut script = camera_care_script();
    script.methods.get_mut(&ad()).unwrap().reads.push(FieldId::from("Camera.location"));
    assert!(audit_service(&svc(), &camera_care_model(), &script, &[], 0).unwrap().result.is_pass());
}

#[test]
fn enabled_method_calling_a_disabled_reader_fails() {
    let mut script = camera_care_script();
    script.methods.get_mut(&hc()).unwrap().calls.push(ad());
    let v = audit_service(&svc(), &camera_care_model(), &script, &[], 0).unwrap();
    let AuditResult::Fail { violations } = v.result else { panic!("expected FAIL") };
    assert_eq!(violations.len(), 1);
    let Violation::DisabledMethodReads { entry, method, assignment } = &violations[0] else { panic!() };
    assert_eq!((entry, method), (&hc(), &ad()));
    assert_eq!(assignment.get(&ad()), Some(&Selection::NotUsed));
}

#[test]
fn calling_a_disabled_method_that_reads_nothing_is_fine() {
    let mut script = camera_care_script();
    script.methods.get_mut(&hc()).unwrap().calls.push(ad());
    script.methods.get_mut(&ad()).unwrap().reads.clear();
    assert!(audit_service(&svc(), &camera_care_model(), &script, &[], 0).unwrap().result.is_pass());
}

#[test]
fn emergency_rule_must_require_the_promised_assertion() {
    let model = camera_care_model();
    let script = camera_care_script();
    let internal_only = declaration(low_heart_rate());
    let v = audit_service(&svc(), &model, &script, &[internal_only], 0).unwrap();
    assert_eq!(
        v.result,
        AuditResult::Fail {
            violations: vec![Violation::UnconfirmedEmergency { rule_id: RuleId::from("doctor"), claim: "unconscious".into() }]
        }
    );

    let both = declaration(Trigger::and(low_heart_rate(), doctor_says("unconscious")));
    assert!(audit_service(&svc(), &model, &script, &[both], 0).unwrap().result.is_pass());

    let either = declaration(Trigger::or(low_heart_rate(), doctor_says("unconscious")));
    assert!(!audit_service(&svc(), &model, &script, &[either], 0).unwrap().result.is_pass());

    let wrong_claim = declaration(Trigger::and(low_heart_rate(), doctor_says("asleep")));
    assert!(!audit_service(&svc(), &model, &script, &[wrong_claim], 0).unwrap().result.is_pass());
}

#[test]
fn invalid_model_is_rejected() {
    let model = pdl::parse("class A { <<use=\"x\">> <<notUsed=\"y\">> int f(); }").unwrap();
    assert!(matches!(
        audit_service(&svc(), &model, &AccessScript::default(), &[], 0),
        Err(AuditError::InvalidModel(_))
    ));
}

#[test]
fn more_than_ten_choices_is_refused() {
    let mut text = String::from("class A {\n");
    for i in 0..11 {
        text.push_str(&format!("  <<optional=\"A.m{i}\">>\n"));
    }
    text.push_str("  int x;\n");
    for i in 0..11 {
        text.push_str(&format!("  <<use=\"u\">> <<notUsed=\"n\">> int m{i}();\n"));
    }
    text.push('}');
    let model = pdl::parse(&text).unwrap();
    assert_eq!(
        audit_service(&svc(), &model, &AccessScript::default(), &[], 0).unwrap_err(),
        AuditError::TooManyChoices(11)
    );
}

#[test]
fn signed_verdict_verifies_and_every_field_mutation_breaks_it() {
    let t = ttp();
    let v = t.audit(&svc(), &camera_care_model(), &camera_care_script(), &[], 42).unwrap();
    assert!(v.verify(&t.public_key()));
    let mutations: Vec<AuditVerdict> = vec![
        AuditVerdict { service_id: ServiceId::from("other"), ..v.clone() },
        AuditVerdict { model_digest: "00".repeat(32), ..v.clone() },
        AuditVerdict { script_digest: "11".repeat(32), ..v.clone() },
        AuditVerdict { result: AuditResult::Fail { violations: vec![] }, ..v.clone() },
        AuditVerdict { audited_at: 43, ..v.clone() },
        AuditVerdict { ttp_signature: None, ..v.clone() },
    ];
    for m in &mutations {
        assert!(!m.verify(&t.public_key()), "{m:?}");
    }
    let resigned = t.sign_verdict(AuditVerdict { model_digest: "ab".repeat(32), ttp_signature: None, ..v.clone() });
    assert!(resigned.verify(&t.public_key()));
    assert!(!v.verify(&SigningKeyPair::generate(&mut seeded(1)).public()));
}

#[test]
fn presets_follow_their_levels() {
    let t = ttp();
    let strict = t.publish_named("Strict").unwrap();
    assert_eq!(strict.template.default_annotation, AnnotationLevel::LocalOnly);
    assert_eq!(strict.template.default_choice, Selection::NotUsed);
    let balanced = t.publish_named("balanced").unwrap();
    assert_eq!(balanced.template.default_annotation, AnnotationLevel::Unrestricted);
    assert_eq!(balanced.template.default_choice, Selection::NotUsed);
    let permissive = t.publish_named("permissive").unwrap();
    assert_eq!(permissive.template.default_choice, Selection::Use);
    for p in [&strict, &balanced, &permissive] {
        assert!(p.verify(&t.public_key()));
    }
    assert_eq!(t.publish_named("paranoid").unwrap_err(), AuditError::UnknownLevel("paranoid".into()));

    let mut tampered = strict.clone();
    tampered.template.default_annotation = AnnotationLevel::Unrestricted;
    assert!(!tampered.verify(&t.public_key()));
}

#[test]
fn role_directory_signature_covers_membership() {
    let t = ttp();
    let mut d = RoleDirectory::default();
    d.roles.insert(
        RoleId::from("emergency-doctor"),
        vec![RoleMember { service_id: ServiceId::from("er"), public_key: SealingPublicKey([7; 32]) }],
    );
    let signed = t.sign_role_directory(d);
    assert!(signed.verify(&t.public_key()));
    let mut forged = signed.clone();
    forged.roles.get_mut(&RoleId::from("emergency-doctor")).unwrap()[0].public_key = SealingPublicKey([8; 32]);
    assert!(!forged.verify(&t.public_key()));
}

/// Brute force: every choice assignment, every entry point, full execution.
/// Enablement comes straight from the attribute reference lists.
fn oracle_passes(model: &PdlModel, script: &AccessScript) -> bool {
    let attrs: Vec<(String, &pdl::PdlAttribute)> = model
        .classes
        .iter()
        .flat_map(|c| c.attributes.iter().map(move |a| (format!("{}.{}", c.name, a.name), a)))
        .collect();
    for (m, body) in &script.methods {
        for r in &body.reads {
            let declared = attrs.iter().any(|(id, a)| {
                id == r.as_str() && (a.use_text.is_some() || a.mandatory_refs.contains(m) || a.optional_refs.contains(m))
            });
            if !declared {
                return false;
            }
        }
    }
    let optional: Vec<MethodRef> = {
        let mut v: Vec<MethodRef> = attrs.iter().flat_map(|(_, a)| a.optional_refs.iter().cloned()).collect();
        v.sort();
        v.dedup();
        v
    };
    for bits in 0..(1u32 << optional.len()) {
        let disabled: Vec<&MethodRef> =
            optional.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 0).map(|(_, m)| m).collect();
        for entry in script.methods.keys() {
            if disabled.contains(&entry) {
                continue;
            }
            let mut executed = vec![entry.clone()];
            let mut frontier = vec![entry.clone()];
            while let Some(m) = frontier.pop() {
                for c in script.methods.get(&m).map(|s| s.calls.clone()).unwrap_or_default() {
                    if executed.contains(&c) {
                        continue;
                    }
                    executed.push(c.clone());
                    if disabled.contains(&&c) {
                        if script.methods.get(&c).is_some_and(|s| !s.reads.is_empty()) {
                            return false;
                        }
                    } else {
                        frontier.push(c);
                    }
                }
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn verdict_matches_brute_force(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let model = testkit::random_model(&mut rng, &ModelParams::default());
        let script = testkit::random_script(&mut rng, &model, &ScriptParams::default());
        let v = audit_service(&svc(), &model, &script, &[], 0).unwrap();
        prop_assert_eq!(v.result.is_pass(), oracle_passes(&model, &script));
    }
}
