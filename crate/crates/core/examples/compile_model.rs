//! Parse a service model, validate it, and derive the policy shown to users
//! plus the monitoring spec the platform enforces.
//!
//! `cargo run -p privsphere --example compile_model [path.pdl]`

use privsphere::canonical::to_canonical_json;
use privsphere::fixtures::CAMERA_CARE_PDL;
use privsphere::ids::ServiceId;
use privsphere::{pdl, policy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => CAMERA_CARE_PDL.to_string(),
    };
    let model = pdl::parse(&text)?;
    println!("{}\n", pdl::validate(&model));

    let doc = policy::generate_policy(&model, &ServiceId::from("camera-care"))?;
    println!("{}", policy::render_policy_text(&doc));

    let spec = policy::generate_monitoring_spec(&model)?;
    print!("{}", to_canonical_json(&spec)?);
    Ok(())
}
