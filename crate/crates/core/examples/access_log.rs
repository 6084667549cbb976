//! The owner-confidential, hash-chained access log: append, checkpoint,
//! verify, read as the owner, and detect a tampered entry.

use privsphere::access_log::{read_as_owner, to_json_lines, verify_files, LogOutcome, LogPayload, OwnerLog};
use privsphere::audit::Ttp;
use privsphere::crypto::{SealingKeyPair, SigningKeyPair};
use privsphere::ids::{FieldId, OwnerId, ServiceId};
use privsphere::pdl::MethodRef;
use privsphere::rng::seeded;

fn main() {
    let mut rng = seeded(5);
    let owner = SealingKeyPair::generate(&mut rng);
    let platform = SigningKeyPair::generate(&mut rng);
    let ttp = Ttp::new(SigningKeyPair::generate(&mut rng));

    let mut log = OwnerLog::new(OwnerId::from("alice"), owner.public);
    for (t, outcome) in [(10, LogOutcome::Value), (20, LogOutcome::DeniedDisabledMethod), (30, LogOutcome::Value)] {
        let payload = LogPayload {
            timestamp: t,
            service_id: ServiceId::from("camera-care"),
            method: Some(MethodRef::new("Analysis", "healthCritical")),
            attribute: FieldId::from("Camera.location"),
            purpose: "Determine where to display image in house overview map.".into(),
            outcome,
            record_ids: Vec::new(),
        };
        log.append(&mut rng, &platform, &payload, Some(&ttp));
    }
    log.close(&ttp);

    let entries = to_json_lines(&log.entries);
    let checkpoints = to_json_lines(&log.checkpoints);
    let (pk, tk) = (platform.public(), ttp.public_key());
    println!("intact:   {:?}", verify_files(entries.as_bytes(), checkpoints.as_bytes(), &pk, &tk));

    for p in read_as_owner(&log.entries, &owner.secret).into_iter().flatten() {
        println!("  t={} {:?} {}", p.timestamp, p.outcome, p.attribute);
    }
    let stranger = SealingKeyPair::generate(&mut rng);
    let readable = read_as_owner(&log.entries, &stranger.secret).iter().filter(|r| r.is_ok()).count();
    println!("entries readable without the owner key: {readable}");

    // Flip one bit inside the second entry's sealed payload.
    let mut tampered = entries.into_bytes();
    let second = tampered.iter().position(|b| *b == b'\n').expect("three lines") + 1;
    let at = second + tampered[second..].windows(21).position(|w| w == b"\"payload_ciphertext\":").unwrap() + 30;
    tampered[at] ^= 0x01;
    println!("tampered: {:?}", verify_files(&tampered, checkpoints.as_bytes(), &pk, &tk));
}
