//! The trusted third party audits a service's accesses against its model and
//! signs the verdict; the platform only lists services that pass.

use privsphere::audit::Ttp;
use privsphere::crypto::SigningKeyPair;
use privsphere::fixtures::{camera_care_model, camera_care_script};
use privsphere::ids::{FieldId, ServiceId};
use privsphere::pdl::MethodRef;
use privsphere::rng::seeded;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ttp = Ttp::new(SigningKeyPair::generate(&mut seeded(6)));
    let model = camera_care_model();

    let faithful = camera_care_script();
    let mut leaky = faithful.clone();
    leaky
        .methods
        .get_mut(&MethodRef::new("Analysis", "healthCritical"))
        .expect("method in script")
        .reads
        .push(FieldId::from("Camera.stream"));

    for (name, script) in [("faithful", &faithful), ("leaky", &leaky)] {
        let verdict = ttp.audit(&ServiceId::from(name), &model, script, &[], 1_000)?;
        println!("{name}: {}", serde_json::to_string(&verdict.result)?);
        println!("  signature verifies: {}", verdict.verify(&ttp.public_key()));
    }
    Ok(())
}
