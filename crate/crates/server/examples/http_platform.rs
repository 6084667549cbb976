//! Cloud platform (hosting the TTP) and an owner's gateway on ephemeral
//! ports, driven over HTTP the way the user console and a service would.

use std::sync::Arc;

use serde_json::{json, Value};

use privsphere::audit::Ttp;
use privsphere::cloud::{AccessOutcome, RecordSelector, ServiceSubmission};
use privsphere::crypto::{SealingKeyPair, SigningKeyPair};
use privsphere::fixtures::{camera_care_model, camera_care_script};
use privsphere::gateway::{Pep, PrivacyConfiguration};
use privsphere::ids::{OwnerId, ServiceId};
use privsphere::pdl::{self, MethodRef};
use privsphere::policy;
use privsphere::rng::seeded;
use privsphere_server::client::CloudClient;
use privsphere_server::cloud::{self, CloudConfig, CloudState};
use privsphere_server::gateway::{self, GatewayConfig, GatewayState};
use privsphere_server::system_clock;

async fn spawn(router: axum::Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
    let addr = listener.local_addr().expect("bound");
    tokio::spawn(privsphere_server::serve(listener, router));
    format!("http://{addr}")
}

async fn call(http: &reqwest::Client, method: reqwest::Method, url: String, body: Value) -> Value {
    let resp = http.request(method, url).json(&body).send().await.expect("gateway reachable");
    resp.json().await.expect("JSON body")
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = seeded(7);
    let ttp = Ttp::new(SigningKeyPair::generate(&mut rng));
    let cloud_state = CloudState::open(CloudConfig {
        platform: SigningKeyPair::generate(&mut rng),
        ttp_public: ttp.public_key(),
        ttp: Some(ttp.clone()),
        store: None,
        clock: system_clock(),
    })?;
    let cloud_url = spawn(cloud::router(cloud_state)).await;
    let client = CloudClient::new(cloud_url.clone());

    let model = camera_care_model();
    let id = ServiceId::from("camera-care");
    let reg = client
        .register_service(&ServiceSubmission {
            service_id: id.clone(),
            model_text: pdl::render(&model),
            policy: policy::generate_policy(&model, &id)?,
            monitoring: policy::generate_monitoring_spec(&model)?,
            script: camera_care_script(),
            emergency_declarations: Vec::new(),
        })
        .await?;
    println!("cloud at {cloud_url}; camera-care audited: {:?}", reg.verdict.map(|v| v.result));

    let pep = Pep::new(PrivacyConfiguration::new(OwnerId::from("alice"), 86_400), SealingKeyPair::generate(&mut rng), ttp.public_key());
    let gw = GatewayState::new(GatewayConfig {
        pep,
        ttp_public: ttp.public_key(),
        cloud: client.clone(),
        endpoint: "cloud".into(),
        files: None,
        clock: system_clock(),
    });
    let gw_url = spawn(gateway::router(Arc::clone(&gw))).await;
    let http = reqwest::Client::new();

    let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH)?.as_secs();
    let reading = json!({"owner": "alice", "device": "cam-1", "field": "Camera.location", "value": "kitchen", "timestamp": now});
    println!("ingest: {}", call(&http, reqwest::Method::POST, format!("{gw_url}/ingest"), reading).await);

    let consent = json!({"selections": {"Analysis.getPersonalizedAd": "NotUsed"}});
    println!("consent: {}", call(&http, reqwest::Method::POST, format!("{gw_url}/consent/camera-care"), consent).await);

    let result = client
        .invoke(&id, &MethodRef::new("Analysis", "healthCritical"), &OwnerId::from("alice"), RecordSelector::All)
        .await?;
    for access in result.accesses {
        let shown = match access.outcome {
            AccessOutcome::Value { values, .. } => {
                values.iter().map(|v| String::from_utf8_lossy(&v.value).into_owned()).collect::<Vec<_>>().join(", ")
            }
            denied => format!("{denied:?}"),
        };
        println!("healthCritical reads {}: [{shown}]", access.attribute);
    }

    let log = http.get(format!("{gw_url}/log")).send().await?.json::<Value>().await?;
    println!("owner log: {}", serde_json::to_string_pretty(&log)?);
    Ok(())
}
