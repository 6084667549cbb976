//! HTTP front ends for the two online components: the owner's gateway (PEP)
//! and the multi-tenant cloud platform, plus a small client for the latter.

pub mod client;
pub mod cloud;
pub mod gateway;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use privsphere::ids::Timestamp;

/// Source of the current time; servers take it as a parameter so tests can move it.
pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: impl Into<String>, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: error.into(), message: message.into() } }
    }

    /// Names the error after its enum variant.
    fn from_variant(status: StatusCode, e: &(impl std::fmt::Debug + std::fmt::Display)) -> Self {
        let debug = format!("{e:?}");
        let kind = debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string();
        Self::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<privsphere::cloud::CloudError> for ApiError {
    fn from(e: privsphere::cloud::CloudError) -> Self {
        use privsphere::cloud::CloudError::*;
        let status = match &e {
            UnknownService(_) | UnknownMethod(_) | UnknownOwner(_) => StatusCode::NOT_FOUND,
            DuplicateService(_) | OwnerKeyConflict(_) => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::from_variant(status, &e)
    }
}

impl From<privsphere::gateway::GatewayError> for ApiError {
    fn from(e: privsphere::gateway::GatewayError) -> Self {
        use privsphere::gateway::GatewayError::*;
        let status = match &e {
            ServiceNotAudited(_) | Untrusted(_) | BadSignature | UnknownAsserter => StatusCode::FORBIDDEN,
            NoSuchConsent(_) => StatusCode::NOT_FOUND,
            Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::from_variant(status, &e)
    }
}

impl From<client::ClientError> for ApiError {
    fn from(e: client::ClientError) -> Self {
        match e {
            client::ClientError::Api { status, body } => {
                let status = StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_GATEWAY);
                Self { status, body }
            }
            other => Self::new(StatusCode::BAD_GATEWAY, "Upstream", other.to_string()),
        }
    }
}

pub type ApiResult<T> = Result<Json<T>, ApiError>;

/// Serves `router` on an already bound listener until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, router: axum::Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}

/// `Json` whose rejections use the common error body.
pub struct JsonBody<T>(pub T);

impl<S, T> axum::extract::FromRequest<S> for JsonBody<T>
where
    T: serde::de::DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(JsonBody(v)),
            Err(e) => Err(ApiError::new(e.status(), "BadRequest", e.body_text())),
        }
    }
}
