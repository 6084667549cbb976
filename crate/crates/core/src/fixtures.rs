//! The canonical example service model and a script that implements it faithfully.

use crate::audit::{AccessScript, MethodScript};
use crate::pdl::{self, MethodRef, PdlModel};

/// Reference model: a camera-based assisted-living service with one ad-funded choice.
pub const CAMERA_CARE_PDL: &str = include_str!("../../../fixtures/camera_care.pdl");

pub fn camera_care_model() -> PdlModel {
    pdl::parse_named("camera_care.pdl", CAMERA_CARE_PDL).expect("bundled fixture parses")
}

/// `healthCritical` reads the recognized persons and the location;
/// `getPersonalizedAd` reads the recognized persons.
pub fn camera_care_script() -> AccessScript {
    let mut script = AccessScript::default();
    script.methods.insert(
        MethodRef::new("Analysis", "healthCritical"),
        MethodScript::reads(["Camera.recognizedPersons", "Camera.location"]),
    );
    script.methods.insert(
        MethodRef::new("Analysis", "getPersonalizedAd"),
        MethodScript::reads(["Camera.recognizedPersons"]),
    );
    script
}
