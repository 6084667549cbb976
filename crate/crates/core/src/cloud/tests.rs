use super::*;
use crate::access_log::{read_as_owner, verify_chain};
use crate::audit::Ttp;
use crate::crypto::{SealingKeyPair, SigningKeyPair};
use crate::fixtures::{camera_care_model, camera_care_script};
use crate::gateway::{PrivacyConfiguration, Reading, ReadingValue};
use crate::gateway::{AnnotationLevel, Pep};
use crate::ids::{DeviceId, EndpointId};
use crate::policy::Selection;
use crate::rng::seeded;

struct World {
    rng: Drbg,
    ttp: Arc<Ttp>,
    cloud: Cloud,
    pep: Pep,
}

fn hc() -> MethodRef {
    MethodRef::new("Analysis", "healthCritical")
}

fn ad() -> MethodRef {
    MethodRef::new("Analysis", "getPersonalizedAd")
}

fn alice() -> OwnerId {
    OwnerId::from("alice")
}

fn svc() -> ServiceId {
    ServiceId::from("camera-care")
}

fn submission(id: &str, script: AccessScript) -> ServiceSubmission {
    let model = camera_care_model();
    let service_id = ServiceId::from(id);
    ServiceSubmission {
        service_id: service_id.clone(),
        model_text: pdl::render(&model),
        policy: policy::generate_policy(&model, &service_id).unwrap(),
        monitoring: policy::generate_monitoring_spec(&model).unwrap(),
        script,
        emergency_declarations: Vec::new(),
    }
}

fn world() -> World {
    let mut rng = seeded(21);
    let ttp = Arc::new(Ttp::new(SigningKeyPair::generate(&mut rng)));
    let platform = SigningKeyPair::generate(&mut rng);
    let mut cloud = Cloud::new(platform, ttp.public_key(), Some(ttp.clone()), seeded(22));
    let reg = cloud.register_service(submission("camera-care", camera_care_script())).unwrap();
    let verdict = ttp.audit(&reg.service_id, &camera_care_model(), &reg.script, &[], 0).unwrap();
    cloud.attach_verdict(verdict).unwrap();
    let pep = Pep::new(
        PrivacyConfiguration::new(alice(), 24 * 3600),
        SealingKeyPair::generate(&mut rng),
        ttp.public_key(),
    );
    World { rng, ttp, cloud, pep }
}

fn consent(w: &mut World, choice: Selection) {
    let reg = w.cloud.list_services().into_iter().find(|r| r.service_id == svc()).unwrap();
    let out = w.pep.apply_consent(&mut w.rng, &reg, &BTreeMap::from([(ad(), choice)]), 0).unwrap();
    w.cloud
        .consent_sync(ConsentSync {
            owner: alice(),
            owner_pk: w.pep.owner_public_key(),
            service_id: svc(),
            consent: Some(out.consent),
            grants: out.grants,
        })
        .unwrap();
}

fn upload(w: &mut World, field: &str, value: ReadingValue, ts: Timestamp) {
    let reading = Reading { owner: alice(), device: DeviceId::from("cam"), field: FieldId::from(field), value, timestamp: ts };
    if let Some(r) = w.pep.ingest(&mut w.rng, reading, &EndpointId::from("cloud")).unwrap().record {
        w.cloud.store_record(r).unwrap();
    }
}

#[test]
fn audited_registration_is_listed() {
    let w = world();
    let listed = w.cloud.list_services();
    assert_eq!(listed.len(), 1);
    assert_eq!(listed[0].service_id, svc());
}

#[test]
fn registration_checks_digest_script_and_monitoring() {
    let mut w = world();
    let mut tampered = submission("t1", camera_care_script());
    tampered.policy.model_digest = "00".repeat(32);
    assert_eq!(w.cloud.register_service(tampered).unwrap_err(), CloudError::DigestMismatch);

    let mut script = camera_care_script();
    script.methods.insert(MethodRef::new("Analysis", "foo"), Default::default());
    assert_eq!(
        w.cloud.register_service(submission("t2", script)).unwrap_err(),
        CloudError::UnknownScriptMethod(MethodRef::new("Analysis", "foo"))
    );

    let mut monitoring = submission("t3", camera_care_script());
    monitoring.monitoring.monitored.clear();
    assert_eq!(w.cloud.register_service(monitoring).unwrap_err(), CloudError::MonitoringMismatch);

    assert_eq!(
        w.cloud.register_service(submission("camera-care", camera_care_script())).unwrap_err(),
        CloudError::DuplicateService(svc())
    );
}

#[test]
fn only_verified_pass_verdicts_are_listed() {
    let mut w = world();
    let mut bad = camera_care_script();
    bad.methods.get_mut(&ad()).unwrap().reads.push(FieldId::from("Camera.stream"));
    let reg = w.cloud.register_service(submission("greedy", bad.clone())).unwrap();
    let verdict = w.ttp.audit(&reg.service_id, &camera_care_model(), &bad, &[], 0).unwrap();
    assert!(!verdict.result.is_pass());
    w.cloud.attach_verdict(verdict).unwrap();
    assert_eq!(w.cloud.list_services().len(), 1, "FAIL verdict is not listed");
    let err = w.cloud.invoke_method(&ServiceId::from("greedy"), &ad(), &alice(), &RecordSelector::All, 1);
    assert_eq!(err.unwrap_err(), CloudError::UnknownService(ServiceId::from("greedy")));

    w.cloud.registration_mut(&svc()).unwrap().verdict.as_mut().unwrap().audited_at += 1;
    assert!(w.cloud.list_services().is_empty(), "corrupted signature is re-checked on read");
}

#[test]
fn empty_registry_lists_nothing() {
    let mut rng = seeded(1);
    let cloud = Cloud::new(SigningKeyPair::generate(&mut rng), SigningKeyPair::generate(&mut rng).public(), None, seeded(2));
    assert!(cloud.list_services().is_empty());
}

#[test]
fn records_are_idempotent_and_checked() {
    let mut w = world();
    let reading = Reading {
        owner: alice(),
        device: DeviceId::from("cam"),
        field: FieldId::from("Camera.location"),
        value: ReadingValue::Text("kitchen".into()),
        timestamp: 5,
    };
    let record = w.pep.ingest(&mut w.rng, reading, &EndpointId::from("cloud")).unwrap().record.unwrap();
    assert!(!w.cloud.store_record(record.clone()).unwrap().duplicate);
    assert!(w.cloud.store_record(record.clone()).unwrap().duplicate);
    assert_eq!(w.cloud.records(&alice()).count(), 1);

    let mut wrong_owner = record.clone();
    wrong_owner.record_id = RecordId::from("other");
    wrong_owner.fields[0].aad.owner = OwnerId::from("bob");
    assert_eq!(w.cloud.store_record(wrong_owner).unwrap_err(), CloudError::AadMismatch(RecordId::from("other")));
}

#[test]
fn ten_thousand_records_are_retrievable() {
    let mut w = world();
    let template = {
        let reading = Reading {
            owner: alice(),
            device: DeviceId::from("cam"),
            field: FieldId::from("Camera.location"),
            value: ReadingValue::Scalar(1.0),
            timestamp: 0,
        };
        w.pep.ingest(&mut w.rng, reading, &EndpointId::from("cloud")).unwrap().record.unwrap()
    };
    for i in 0..10_000 {
        let mut r = template.clone();
        r.record_id = RecordId::new(format!("bulk-{i}"));
        r.fields[0].aad.record_id = r.record_id.clone();
        w.cloud.store_record(r).unwrap();
    }
    for i in (0..10_000).step_by(1) {
        let id = RecordId::new(format!("bulk-{i}"));
        assert_eq!(w.cloud.record(&alice(), &id).unwrap().record_id, id);
    }
}

#[test]
fn consented_invocation_reads_and_logs_with_the_declared_purpose() {
    let mut w = world();
    consent(&mut w, Selection::NotUsed);
    upload(&mut w, "Camera.recognizedPersons", ReadingValue::Text("[\"resident\"]".into()), 10);
    upload(&mut w, "Camera.location", ReadingValue::Text("kitchen".into()), 11);
    let result = w.cloud.invoke_method(&svc(), &hc(), &alice(), &RecordSelector::All, 20).unwrap();
    assert_eq!(result.accesses.len(), 2);
    let persons = &result.accesses[0];
    assert_eq!(persons.attribute, FieldId::from("Camera.recognizedPersons"));
    let AccessOutcome::Value { values, withheld } = &persons.outcome else { panic!("{persons:?}") };
    assert_eq!(values.len(), 1);
    assert!(withheld.is_empty());
    assert_eq!(serde_json::from_slice::<ReadingValue>(&values[0].value).unwrap(), ReadingValue::Text("[\"resident\"]".into()));

    let log = w.cloud.fetch_log(&alice());
    assert_eq!(log.entries.len(), 2);
    let payloads: Vec<LogPayload> =
        read_as_owner(&log.entries, &w.pep.owner_keys().secret).into_iter().map(Result::unwrap).collect();
    assert_eq!(payloads[0].purpose, "Determine whether resident is alone and needs help.");
    assert_eq!(payloads[1].purpose, "Determine where to display image in house overview map.");
    assert_eq!(payloads[0].method, Some(hc()));
    assert_eq!(payloads[0].outcome, LogOutcome::Value);
}

#[test]
fn disabled_method_is_denied_and_logged() {
    let mut w = world();
    consent(&mut w, Selection::NotUsed);
    upload(&mut w, "Camera.recognizedPersons", ReadingValue::Text("x".into()), 10);
    let result = w.cloud.invoke_method(&svc(), &ad(), &alice(), &RecordSelector::All, 20).unwrap();
    assert!(result.accesses.iter().all(|a| a.outcome == AccessOutcome::DeniedDisabledMethod));
    let payloads = read_as_owner(&w.cloud.fetch_log(&alice()).entries, &w.pep.owner_keys().secret);
    assert_eq!(payloads.len(), result.accesses.len());
    assert!(payloads.iter().all(|p| p.as_ref().unwrap().outcome == LogOutcome::DeniedDisabledMethod));
}

#[test]
fn undeclared_reads_never_find_a_key() {
    let mut w = world();
    let mut script = camera_care_script();
    script.methods.get_mut(&hc()).unwrap().reads.push(FieldId::from("Camera.stream"));
    w.cloud.registration_mut(&svc()).unwrap().script = script.clone();
    let hosted_verdict = w.ttp.sign_verdict(AuditVerdict {
        result: crate::audit::AuditResult::Pass,
        script_digest: script.digest(),
        ttp_signature: None,
        ..w.cloud.registration(&svc()).unwrap().verdict.clone().unwrap()
    });
    // A TTP that wrongly passed the bad script: key-level enforcement still holds.
    w.cloud.attach_verdict(hosted_verdict).unwrap();
    consent(&mut w, Selection::Use);
    upload(&mut w, "Camera.stream", ReadingValue::Bytes { bytes: vec![1, 2, 3] }, 10);
    let result = w.cloud.invoke_method(&svc(), &hc(), &alice(), &RecordSelector::All, 20).unwrap();
    let stream = result.accesses.iter().find(|a| a.attribute.as_str() == "Camera.stream").unwrap();
    assert_eq!(stream.outcome, AccessOutcome::DeniedNoKey);
    let payloads = read_as_owner(&w.cloud.fetch_log(&alice()).entries, &w.pep.owner_keys().secret);
    assert!(payloads.iter().any(|p| p.as_ref().unwrap().purpose == UNDECLARED_PURPOSE));
}

#[test]
fn no_consent_is_denied_and_unknown_names_are_errors() {
    let mut w = world();
    w.cloud.register_owner(&alice(), w.pep.owner_public_key()).unwrap();
    let result = w.cloud.invoke_method(&svc(), &hc(), &alice(), &RecordSelector::All, 1).unwrap();
    assert!(result.accesses.iter().all(|a| a.outcome == AccessOutcome::DeniedNoConsent));
    assert_eq!(w.cloud.fetch_log(&alice()).entries.len(), 2);
    assert_eq!(
        w.cloud.invoke_method(&svc(), &MethodRef::new("Analysis", "nope"), &alice(), &RecordSelector::All, 1).unwrap_err(),
        CloudError::UnknownMethod(MethodRef::new("Analysis", "nope"))
    );
    assert_eq!(
        w.cloud.invoke_method(&svc(), &hc(), &OwnerId::from("carol"), &RecordSelector::All, 1).unwrap_err(),
        CloudError::UnknownOwner(OwnerId::from("carol"))
    );
}

#[test]
fn withdrawn_consent_denies_further_access() {
    let mut w = world();
    consent(&mut w, Selection::Use);
    w.cloud
        .consent_sync(ConsentSync { owner: alice(), owner_pk: w.pep.owner_public_key(), service_id: svc(), consent: None, grants: vec![] })
        .unwrap();
    let result = w.cloud.invoke_method(&svc(), &hc(), &alice(), &RecordSelector::All, 1).unwrap();
    assert!(result.accesses.iter().all(|a| a.outcome == AccessOutcome::DeniedNoConsent));
}

#[test]
fn callee_accesses_follow_the_callee_enablement() {
    let mut w = world();
    let mut script = camera_care_script();
    script.methods.get_mut(&hc()).unwrap().calls.push(ad());
    w.cloud.registration_mut(&svc()).unwrap().script = script.clone();
    let verdict = w.ttp.sign_verdict(AuditVerdict {
        script_digest: script.digest(),
        ttp_signature: None,
        ..w.cloud.registration(&svc()).unwrap().verdict.clone().unwrap()
    });
    w.cloud.attach_verdict(verdict).unwrap();
    consent(&mut w, Selection::NotUsed);
    upload(&mut w, "Camera.recognizedPersons", ReadingValue::Text("x".into()), 1);
    let result = w.cloud.invoke_method(&svc(), &hc(), &alice(), &RecordSelector::All, 2).unwrap();
    let summary: Vec<(MethodRef, bool)> =
        result.accesses.iter().map(|a| (a.method.clone(), matches!(a.outcome, AccessOutcome::Value { .. }))).collect();
    assert_eq!(summary, vec![(hc(), true), (hc(), true), (ad(), false)]);
    assert_eq!(result.accesses[2].outcome, AccessOutcome::DeniedDisabledMethod);
    assert_eq!(w.cloud.fetch_log(&alice()).entries.len(), 3);
}

#[test]
fn fetched_log_verifies_and_opens_only_for_its_owner() {
    let mut w = world();
    consent(&mut w, Selection::Use);
    for i in 0..3 {
        w.cloud.invoke_method(&svc(), &hc(), &alice(), &RecordSelector::Latest, i).unwrap();
    }
    w.cloud.close_log(&alice()).unwrap();
    let log = w.cloud.fetch_log(&alice());
    assert!(log.entries.len() >= 3);
    assert!(log.entries.iter().enumerate().all(|(i, e)| e.seq == i as u64));
    assert!(verify_chain(&log.entries, &log.checkpoints, &w.cloud.platform_public_key(), &w.ttp.public_key()).is_ok());
    let stranger = SealingKeyPair::generate(&mut w.rng);
    assert!(read_as_owner(&log.entries, &stranger.secret).iter().all(Result::is_err));
}

#[test]
fn store_holds_no_plaintext() {
    let mut w = world();
    consent(&mut w, Selection::Use);
    w.pep.set_annotation(FieldId::from("Camera.stream"), AnnotationLevel::Unrestricted).unwrap();
    upload(&mut w, "Camera.location", ReadingValue::Text("SECRET-KITCHEN".into()), 1);
    w.cloud.invoke_method(&svc(), &hc(), &alice(), &RecordSelector::All, 2).unwrap();
    let mut rng = seeded(3);
    let snap = serde_json::to_string(&w.cloud.snapshot(&mut rng, b"master")).unwrap();
    assert!(!snap.contains("SECRET-KITCHEN"));
    let log = serde_json::to_string(&w.cloud.fetch_log(&alice())).unwrap();
    assert!(!log.contains("SECRET-KITCHEN"));
    assert!(!log.contains("Determine whether resident"));
    assert!(!log.contains("Camera.location"));
}

#[test]
fn snapshot_restores_services_records_and_logs() {
    let mut w = world();
    consent(&mut w, Selection::Use);
    upload(&mut w, "Camera.location", ReadingValue::Text("hall".into()), 1);
    w.cloud.invoke_method(&svc(), &hc(), &alice(), &RecordSelector::All, 2).unwrap();
    let snap = w.cloud.snapshot(&mut seeded(4), b"master");
    let json = serde_json::to_string(&snap).unwrap();
    let back: CloudSnapshot = serde_json::from_str(&json).unwrap();
    let platform = SigningKeyPair::from_secret_bytes(&[9; 32]);
    assert!(Cloud::restore(back.clone(), b"wrong", platform.clone(), w.ttp.public_key(), None, seeded(5)).is_err());
    let mut restored = Cloud::restore(back, b"master", platform, w.ttp.public_key(), None, seeded(5)).unwrap();
    assert_eq!(restored.list_services().len(), 1);
    assert_eq!(restored.fetch_log(&alice()).entries.len(), 2);
    let again = restored.invoke_method(&svc(), &hc(), &alice(), &RecordSelector::All, 3).unwrap();
    assert!(again.accesses.iter().any(|a| matches!(a.outcome, AccessOutcome::Value { ref values, .. } if !values.is_empty())));
}
