//! Cloud platform API.
//!
//! When started with a TTP key the server also plays the auditor: every
//! submitted service is audited on registration and checkpoints are
//! countersigned. Otherwise verdicts arrive via `POST /services/{id}/verdict`.

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use std::path::PathBuf;
use std::sync::Arc;
use tokio::sync::Mutex;

use privsphere::access_log::{Checkpoint, CheckpointSigner};
use privsphere::audit::{AuditVerdict, Ttp};
use privsphere::cloud::{
    Cloud, CloudSnapshot, ConsentSync, GrantUpload, InvocationResult, LogBundle, ServiceRegistration, ServiceSubmission,
    StoreAck, StoredRecord,
};
use privsphere::crypto::{SigningKeyPair, SigningPublicKey};
use privsphere::ids::{OwnerId, ServiceId};
use privsphere::pdl::{self, MethodRef};
use privsphere::rng::{self, Drbg};

use crate::client::{InvokeRequest, OwnerRegistration, PlatformKeys};
use crate::{ApiError, ApiResult, Clock, JsonBody};

/// Where and how the platform persists itself.
#[derive(Clone)]
pub struct CloudStore {
    pub path: PathBuf,
    /// Seals hosted services' runtime keys inside the store file.
    pub master_secret: Vec<u8>,
}

pub struct CloudConfig {
    pub platform: SigningKeyPair,
    pub ttp_public: SigningPublicKey,
    /// Present when this process also acts as the TTP.
    pub ttp: Option<Ttp>,
    pub store: Option<CloudStore>,
    pub clock: Clock,
}

pub struct CloudState {
    cloud: Mutex<Cloud>,
    ttp: Option<Ttp>,
    store: Option<CloudStore>,
    rng: Mutex<Drbg>,
    clock: Clock,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("cannot read store `{0}`: {1}")]
    Io(String, String),
    #[error("store `{0}` is corrupt: {1}")]
    Corrupt(String, String),
}

impl CloudState {
    /// Restores from the store file when it exists, otherwise starts empty.
    pub fn open(config: CloudConfig) -> Result<Arc<Self>, StoreError> {
        let signer: Option<Arc<dyn CheckpointSigner + Send + Sync>> =
            config.ttp.clone().map(|t| Arc::new(t) as Arc<dyn CheckpointSigner + Send + Sync>);
        if let Some(dir) = config.store.as_ref().and_then(|s| s.path.parent()).filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| StoreError::Io(dir.display().to_string(), e.to_string()))?;
        }
        let cloud = match &config.store {
            Some(store) if store.path.exists() => {
                let name = store.path.display().to_string();
                let text = std::fs::read(&store.path).map_err(|e| StoreError::Io(name.clone(), e.to_string()))?;
                let snapshot: CloudSnapshot =
                    serde_json::from_slice(&text).map_err(|e| StoreError::Corrupt(name.clone(), e.to_string()))?;
                Cloud::restore(snapshot, &store.master_secret, config.platform, config.ttp_public, signer, rng::system())
                    .map_err(|e| StoreError::Corrupt(name, e.to_string()))?
            }
            _ => Cloud::new(config.platform, config.ttp_public, signer, rng::system()),
        };
        Ok(Arc::new(Self {
            cloud: Mutex::new(cloud),
            ttp: config.ttp,
            store: config.store,
            rng: Mutex::new(rng::system()),
            clock: config.clock,
        }))
    }

    /// Writes the whole platform state atomically (temp file, then rename).
    async fn persist(&self, cloud: &Cloud) -> Result<(), ApiError> {
        let Some(store) = &self.store else { return Ok(()) };
        let snapshot = cloud.snapshot(&mut *self.rng.lock().await, &store.master_secret);
        let bytes = serde_json::to_vec(&snapshot).expect("snapshot serializes");
        let tmp = store.path.with_extension("tmp");
        let fail = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Store", e.to_string());
        std::fs::write(&tmp, bytes).map_err(fail)?;
        std::fs::rename(&tmp, &store.path).map_err(fail)
    }
}

pub fn router(state: Arc<CloudState>) -> Router {
    Router::new()
        .route("/ttp/keys", get(keys))
        .route("/services", post(register_service).get(list_services))
        .route("/services/{service}", get(get_service))
        .route("/services/{service}/verdict", post(attach_verdict))
        .route("/owners", post(register_owner))
        .route("/records", post(store_record))
        .route("/consent-sync", post(consent_sync))
        .route("/grants", post(upload_grants))
        .route("/invoke/{service}/{method}", post(invoke))
        .route("/log/{owner}", get(fetch_log))
        .route("/log/{owner}/checkpoint", post(close_log))
        .with_state(state)
}

async fn keys(State(s): State<Arc<CloudState>>) -> Json<PlatformKeys> {
    let cloud = s.cloud.lock().await;
    Json(PlatformKeys { ttp_public_key: cloud.ttp_public_key(), platform_public_key: cloud.platform_public_key() })
}

async fn register_service(
    State(s): State<Arc<CloudState>>,
    JsonBody(sub): JsonBody<ServiceSubmission>,
) -> Result<(StatusCode, Json<ServiceRegistration>), ApiError> {
    let mut cloud = s.cloud.lock().await;
    let mut registration = cloud.register_service(sub)?;
    if let Some(ttp) = &s.ttp {
        let model = pdl::parse(&registration.model_text).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidModel", e.to_string()))?;
        let verdict = ttp
            .audit(
                &registration.service_id,
                &model,
                &registration.script,
                &registration.emergency_declarations,
                (s.clock)(),
            )
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "AuditError", e.to_string()))?;
        cloud.attach_verdict(verdict.clone())?;
        registration.verdict = Some(verdict);
    }
    s.persist(&cloud).await?;
    Ok((StatusCode::CREATED, Json(registration)))
}

async fn attach_verdict(
    State(s): State<Arc<CloudState>>,
    Path(service): Path<ServiceId>,
    JsonBody(verdict): JsonBody<AuditVerdict>,
) -> Result<StatusCode, ApiError> {
    if verdict.service_id != service {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ServiceMismatch", "verdict names another service"));
    }
    let mut cloud = s.cloud.lock().await;
    if !verdict.verify(&cloud.ttp_public_key()) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "Untrusted", "verdict signature does not verify"));
    }
    cloud.attach_verdict(verdict)?;
    s.persist(&cloud).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_services(State(s): State<Arc<CloudState>>) -> Json<Vec<ServiceRegistration>> {
    Json(s.cloud.lock().await.list_services())
}

async fn get_service(State(s): State<Arc<CloudState>>, Path(service): Path<ServiceId>) -> ApiResult<ServiceRegistration> {
    let cloud = s.cloud.lock().await;
    cloud
        .registration(&service)
        .filter(|r| r.is_listable(&cloud.ttp_public_key()))
        .cloned()
        .map(Json)
        .ok_or_else(|| privsphere::cloud::CloudError::UnknownService(service).into())
}

async fn register_owner(State(s): State<Arc<CloudState>>, JsonBody(r): JsonBody<OwnerRegistration>) -> Result<StatusCode, ApiError> {
    let mut cloud = s.cloud.lock().await;
    cloud.register_owner(&r.owner, r.owner_pk)?;
    s.persist(&cloud).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn store_record(State(s): State<Arc<CloudState>>, JsonBody(record): JsonBody<StoredRecord>) -> ApiResult<StoreAck> {
    let mut cloud = s.cloud.lock().await;
    let ack = cloud.store_record(record)?;
    s.persist(&cloud).await?;
    Ok(Json(ack))
}

async fn consent_sync(State(s): State<Arc<CloudState>>, JsonBody(sync): JsonBody<ConsentSync>) -> Result<StatusCode, ApiError> {
    let mut cloud = s.cloud.lock().await;
    cloud.consent_sync(sync)?;
    s.persist(&cloud).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn upload_grants(State(s): State<Arc<CloudState>>, JsonBody(upload): JsonBody<GrantUpload>) -> Result<StatusCode, ApiError> {
    let mut cloud = s.cloud.lock().await;
    cloud.store_emergency_grants(upload)?;
    s.persist(&cloud).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn invoke(
    State(s): State<Arc<CloudState>>,
    Path((service, method)): Path<(ServiceId, String)>,
    JsonBody(req): JsonBody<InvokeRequest>,
) -> ApiResult<InvocationResult> {
    let method = MethodRef::parse(&method)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "BadMethod", format!("`{method}` is not Class.method")))?;
    let mut cloud = s.cloud.lock().await;
    let result = cloud.invoke_method(&service, &method, &req.owner, &req.select, (s.clock)())?;
    s.persist(&cloud).await?;
    Ok(Json(result))
}

async fn fetch_log(State(s): State<Arc<CloudState>>, Path(owner): Path<OwnerId>) -> Json<LogBundle> {
    Json(s.cloud.lock().await.fetch_log(&owner))
}

async fn close_log(State(s): State<Arc<CloudState>>, Path(owner): Path<OwnerId>) -> ApiResult<Option<Checkpoint>> {
    let mut cloud = s.cloud.lock().await;
    let cp = cloud.close_log(&owner);
    s.persist(&cloud).await?;
    Ok(Json(cp))
}
