//! Typed client for the cloud platform API, used by the gateway and by tools.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use privsphere::access_log::Checkpoint;
use privsphere::audit::AuditVerdict;
use privsphere::cloud::{
    ConsentSync, GrantUpload, InvocationResult, LogBundle, RecordSelector, ServiceRegistration, ServiceSubmission,
    StoreAck, StoredRecord,
};
use privsphere::crypto::{SealingPublicKey, SigningPublicKey};
use privsphere::ids::{OwnerId, ServiceId};
use privsphere::pdl::MethodRef;

use crate::ErrorBody;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(String),
    #[error("HTTP {status}: {}", body.message)]
    Api { status: u16, body: ErrorBody },
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformKeys {
    pub ttp_public_key: SigningPublicKey,
    pub platform_public_key: SigningPublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerRegistration {
    pub owner: OwnerId,
    pub owner_pk: SealingPublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvokeRequest {
    pub owner: OwnerId,
    #[serde(default)]
    pub select: RecordSelector,
}

#[derive(Debug, Clone)]
pub struct CloudClient {
    base: String,
    http: reqwest::Client,
}

impl CloudClient {
    /// `base` is e.g. `http://127.0.0.1:8080`, without a trailing slash.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            let body = if bytes.is_empty() { b"null".as_slice() } else { &bytes };
            serde_json::from_slice(body).map_err(|e| ClientError::Transport(e.to_string()))
        } else {
            let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| ErrorBody {
                error: "Http".into(),
                message: String::from_utf8_lossy(&bytes).into_owned(),
            });
            Err(ClientError::Api { status: status.as_u16(), body })
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn keys(&self) -> Result<PlatformKeys, ClientError> {
        self.get("/ttp/keys").await
    }

    pub async fn register_service(&self, sub: &ServiceSubmission) -> Result<ServiceRegistration, ClientError> {
        self.post("/services", sub).await
    }

    pub async fn attach_verdict(&self, verdict: &AuditVerdict) -> Result<(), ClientError> {
        self.post(&format!("/services/{}/verdict", verdict.service_id), verdict).await
    }

    pub async fn list_services(&self) -> Result<Vec<ServiceRegistration>, ClientError> {
        self.get("/services").await
    }

    /// A listed service's registration.
    pub async fn service(&self, id: &ServiceId) -> Result<ServiceRegistration, ClientError> {
        self.get(&format!("/services/{id}")).await
    }

    pub async fn register_owner(&self, owner: &OwnerId, owner_pk: SealingPublicKey) -> Result<(), ClientError> {
        self.post("/owners", &OwnerRegistration { owner: owner.clone(), owner_pk }).await
    }

    pub async fn store_record(&self, record: &StoredRecord) -> Result<StoreAck, ClientError> {
        self.post("/records", record).await
    }

    pub async fn consent_sync(&self, sync: &ConsentSync) -> Result<(), ClientError> {
        self.post("/consent-sync", sync).await
    }

    pub async fn upload_grants(&self, upload: &GrantUpload) -> Result<(), ClientError> {
        self.post("/grants", upload).await
    }

    pub async fn invoke(
        &self,
        service: &ServiceId,
        method: &MethodRef,
        owner: &OwnerId,
        select: RecordSelector,
    ) -> Result<InvocationResult, ClientError> {
        self.post(&format!("/invoke/{service}/{method}"), &InvokeRequest { owner: owner.clone(), select }).await
    }

    pub async fn fetch_log(&self, owner: &OwnerId) -> Result<LogBundle, ClientError> {
        self.get(&format!("/log/{owner}")).await
    }

    pub async fn close_log(&self, owner: &OwnerId) -> Result<Option<Checkpoint>, ClientError> {
        self.post(&format!("/log/{owner}/checkpoint"), &()).await
    }
}
