//! Per-field, per-epoch encryption at the gateway. A consent grant opens
//! exactly the granted fields for exactly the granted epochs.

use std::collections::BTreeMap;

use privsphere::crypto::{decrypt_field, unwrap_grant, wire, SealingKeyPair, SigningKeyPair};
use privsphere::fixtures::camera_care_model;
use privsphere::gateway::{Pep, PrivacyConfiguration, Reading, ReadingValue};
use privsphere::ids::{DeviceId, EndpointId, FieldId, OwnerId, ServiceId};
use privsphere::pdl::{self, MethodRef};
use privsphere::policy::{self, Selection};
use privsphere::rng::seeded;
use privsphere::{audit::Ttp, cloud::ServiceRegistration, fixtures::camera_care_script};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = seeded(1);
    let ttp = Ttp::new(SigningKeyPair::generate(&mut rng));
    let service = SealingKeyPair::generate(&mut rng);
    let owner = OwnerId::from("alice");
    let period = 3_600;
    let mut pep = Pep::new(PrivacyConfiguration::new(owner.clone(), period), SealingKeyPair::generate(&mut rng), ttp.public_key());

    let mut records = Vec::new();
    for (ts, field, text) in [(10, "Camera.location", "kitchen"), (20, "Camera.stream", "<frame>"), (4_000, "Camera.location", "hall")] {
        pep.rotate_epochs(ts);
        let reading = Reading {
            owner: owner.clone(),
            device: DeviceId::from("cam-1"),
            field: FieldId::from(field),
            value: ReadingValue::Text(text.into()),
            timestamp: ts,
        };
        let out = pep.ingest(&mut rng, reading, &EndpointId::from("cloud"))?;
        records.push(out.record.expect("unrestricted fields are forwarded"));
    }
    let ct = &records[0].fields[0];
    println!("ciphertext wire size: {} bytes", wire::encode_ciphertext(ct).len());

    // Consent to the mandatory method only. Grants start at the current epoch, so
    // the location reading from before the rotation stays closed.
    let model = camera_care_model();
    let id = ServiceId::from("camera-care");
    let registration = ServiceRegistration {
        service_id: id.clone(),
        public_key: service.public,
        model_text: pdl::render(&model),
        policy: policy::generate_policy(&model, &id)?,
        monitoring: policy::generate_monitoring_spec(&model)?,
        script: camera_care_script(),
        emergency_declarations: Vec::new(),
        verdict: Some(ttp.audit(&id, &model, &camera_care_script(), &[], 0)?),
    };
    let choice = BTreeMap::from([(MethodRef::new("Analysis", "getPersonalizedAd"), Selection::NotUsed)]);
    let consent = pep.apply_consent(&mut rng, &registration, &choice, 4_100)?;

    let mut keys = Vec::new();
    for grant in &consent.grants {
        println!("grant: {} epochs {}..={}", grant.field, grant.epoch_lo, grant.epoch_hi);
        keys.extend(unwrap_grant(grant, &service.secret)?);
    }
    for record in &records {
        let ct = &record.fields[0];
        let opened = keys.iter().find_map(|k| decrypt_field(k, ct, &ct.aad).ok());
        let shown = opened.map_or("<no key>".to_string(), |p| String::from_utf8_lossy(&p).into_owned());
        println!("{} epoch {}: {shown}", ct.field, ct.epoch);
    }
    Ok(())
}
