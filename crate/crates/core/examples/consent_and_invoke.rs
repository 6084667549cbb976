//! A cloud platform hosting an audited service, an owner's gateway, and the
//! effect of the owner's choice on what the service's methods can read.

use std::collections::BTreeMap;

use privsphere::access_log::read_as_owner;
use privsphere::audit::Ttp;
use privsphere::cloud::{AccessOutcome, Cloud, ConsentSync, RecordSelector, ServiceSubmission};
use privsphere::crypto::{SealingKeyPair, SigningKeyPair};
use privsphere::fixtures::{camera_care_model, camera_care_script};
use privsphere::gateway::{Pep, PrivacyConfiguration, Reading, ReadingValue};
use privsphere::ids::{DeviceId, EndpointId, FieldId, OwnerId, ServiceId};
use privsphere::pdl::{self, MethodRef};
use privsphere::policy::{self, Selection};
use privsphere::rng::seeded;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = seeded(2);
    let ttp = Ttp::new(SigningKeyPair::generate(&mut rng));
    let mut cloud = Cloud::new(SigningKeyPair::generate(&mut rng), ttp.public_key(), None, seeded(3));

    let model = camera_care_model();
    let id = ServiceId::from("camera-care");
    let registration = cloud.register_service(ServiceSubmission {
        service_id: id.clone(),
        model_text: pdl::render(&model),
        policy: policy::generate_policy(&model, &id)?,
        monitoring: policy::generate_monitoring_spec(&model)?,
        script: camera_care_script(),
        emergency_declarations: Vec::new(),
    })?;
    cloud.attach_verdict(ttp.audit(&id, &model, &camera_care_script(), &[], 0)?)?;
    let registration = cloud.registration(&registration.service_id).expect("registered").clone();

    let owner = OwnerId::from("alice");
    let keys = SealingKeyPair::generate(&mut rng);
    cloud.register_owner(&owner, keys.public)?;
    let mut pep = Pep::new(PrivacyConfiguration::new(owner.clone(), 86_400), keys.clone(), ttp.public_key());

    for (field, text) in [("Camera.location", "living room"), ("Camera.recognizedPersons", "alice")] {
        let reading = Reading {
            owner: owner.clone(),
            device: DeviceId::from("cam-1"),
            field: FieldId::from(field),
            value: ReadingValue::Text(text.into()),
            timestamp: 10,
        };
        let out = pep.ingest(&mut rng, reading, &EndpointId::from("cloud"))?;
        cloud.store_record(out.record.expect("forwarded"))?;
    }

    let ad = MethodRef::new("Analysis", "getPersonalizedAd");
    for (now, choice) in [(20, Selection::NotUsed), (30, Selection::Use)] {
        let out = pep.apply_consent(&mut rng, &registration, &BTreeMap::from([(ad.clone(), choice)]), now)?;
        let mut grants = out.grants;
        grants.extend(out.regrants);
        cloud.consent_sync(ConsentSync {
            owner: owner.clone(),
            owner_pk: keys.public,
            service_id: id.clone(),
            consent: Some(out.consent),
            grants,
        })?;
        let result = cloud.invoke_method(&id, &ad, &owner, &RecordSelector::All, now + 1)?;
        for access in result.accesses {
            let shown = match access.outcome {
                AccessOutcome::Value { values, .. } => {
                    values.iter().map(|v| String::from_utf8_lossy(&v.value).into_owned()).collect::<Vec<_>>().join(", ")
                }
                denied => format!("{denied:?}"),
            };
            println!("{choice:?}: {} reads {}: {shown}", access.method, access.attribute);
        }
    }

    println!("\nowner's view of the access log:");
    for payload in read_as_owner(&cloud.fetch_log(&owner).entries, &keys.secret) {
        let p = payload?;
        println!("  t={} {} {} {:?}", p.timestamp, p.service_id, p.attribute, p.outcome);
    }
    Ok(())
}
