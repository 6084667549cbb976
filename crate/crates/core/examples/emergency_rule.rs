//! An event rule that releases vitals and location to a doctor's service only
//! when the owner's heart rate is low and a trusted doctor asserts the owner
//! is unconscious.

use std::collections::BTreeSet;

use privsphere::crypto::{SealingKeyPair, SigningKeyPair};
use privsphere::gateway::{
    Aggregate, Comparator, EventRule, ExternalAssertion, Grantee, Pep, PrivacyConfiguration, Reading, ReadingValue,
    Trigger,
};
use privsphere::ids::{DeviceId, EndpointId, FieldId, OwnerId, RuleId, ServiceId};
use privsphere::rng::seeded;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = seeded(4);
    let ttp = SigningKeyPair::generate(&mut rng);
    let doctor = SigningKeyPair::generate(&mut rng);
    let portal = SealingKeyPair::generate(&mut rng);
    let owner = OwnerId::from("alice");
    let heart_rate = FieldId::from("Vitals.heartRate");

    let mut pep = Pep::new(PrivacyConfiguration::new(owner.clone(), 86_400), SealingKeyPair::generate(&mut rng), ttp.public());
    pep.register_grantee(ServiceId::from("doctor-portal"), portal.public);
    pep.add_event_rule(EventRule {
        rule_id: RuleId::from("unconscious-resident"),
        grantee: Grantee::Service { service_id: ServiceId::from("doctor-portal") },
        scope: BTreeSet::from([heart_rate.clone(), FieldId::from("Camera.location")]),
        trigger: Trigger::and(
            Trigger::Internal { field: heart_rate.clone(), aggregate: Aggregate::Min, window: 300, comparator: Comparator::Lt, threshold: 45.0 },
            Trigger::External { claim_id: "unconscious".into(), trusted: vec![doctor.public()], freshness: 600 },
        ),
        grant_duration: 900,
    })?;

    for (ts, bpm) in [(100, 72.0), (400, 41.0)] {
        let reading = Reading {
            owner: owner.clone(),
            device: DeviceId::from("wristband"),
            field: heart_rate.clone(),
            value: ReadingValue::Scalar(bpm),
            timestamp: ts,
        };
        let out = pep.ingest(&mut rng, reading, &EndpointId::from("cloud"))?;
        println!("t={ts} heart rate {bpm}: {} grant(s)", out.emergencies.len());
    }

    let stale = ExternalAssertion::sign(&doctor, "unconscious", &owner, 0);
    println!("stale assertion: {} grant(s)", pep.submit_external_assertion(&mut rng, stale, 700)?.len());

    let fresh = ExternalAssertion::sign(&doctor, "unconscious", &owner, 690);
    for issuance in pep.submit_external_assertion(&mut rng, fresh, 700)? {
        println!("fresh assertion: rule {} grants {} field(s) until t={}", issuance.rule_id, issuance.grants.len(), issuance.expires_at);
    }
    let again = ExternalAssertion::sign(&doctor, "unconscious", &owner, 710);
    println!("repeat while granted: {} grant(s)", pep.submit_external_assertion(&mut rng, again, 710)?.len());
    Ok(())
}
