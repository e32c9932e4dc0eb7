// SPDX-License-Identifier: Apache-2.0

//! REST surface.
//!
//! | route | method | who |
//! |---|---|---|
//! | `/api/v1/auth/login` | POST | anyone |
//! | `/api/v1/command` | POST | any token; the activity manager gates by role |
//! | `/api/v1/firmware/{filename}` | POST | third party, engineer |
//! | `/api/v1/records` | GET | any token; confidential needs full privilege |
//! | `/api/v1/threat-profiles/latest`, `/{id}` | GET | administrator |
//! | `/api/v1/health` | GET | anyone |
//!
//! Bodies are JSON. Errors are `{"error": <code>, "message": <text>}`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ecig_core::access::Role;
use ecig_core::audit::{AuditEntry, Outcome, TimeWindow};
use ecig_core::cmdparse;
use ecig_core::AssetId;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::actmgr::{is_safe_filename, ActivityManager, ActivityResult, Principal};
use crate::auth::{AuthError, Authenticator};
use crate::datastore::{Category, RecordFilter, StoreError};

#[derive(Debug)]
pub struct AppState {
    pub am: Arc<ActivityManager>,
    pub auth: Arc<Authenticator>,
    pub staging_dir: PathBuf,
    pub firmware_cap: u64,
    pub attested: bool,
}

type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/auth/login", post(login))
        .route("/api/v1/command", post(command))
        .route(
            "/api/v1/firmware/{filename}",
            post(upload).layer(DefaultBodyLimit::disable()),
        )
        .route("/api/v1/records", get(records))
        .route("/api/v1/threat-profiles/latest", get(latest_profile))
        .route("/api/v1/threat-profiles/{id}", get(profile_by_id))
        .route("/api/v1/health", get(health))
        .with_state(state)
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": code, "message": message.into() }))).into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
}

impl AppState {
    fn audit(&self, who: &str, activity: &str, outcome: Outcome, detail: impl Into<String>) {
        let entry = AuditEntry::new(who, activity).outcome(outcome).detail(detail);
        if let Err(e) = self.am.store().audit().append(entry) {
            tracing::warn!("normal-world audit append failed: {e}");
        }
    }

    /// Resolves the bearer token, answering 401 when it is missing or stale.
    #[allow(clippy::result_large_err)]
    fn principal(&self, headers: &HeaderMap) -> Result<Principal, Response> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim);
        match token.map(|t| self.auth.resolve(t)) {
            Some(Ok(p)) => Ok(p),
            _ => {
                self.audit("anonymous", "auth.token", Outcome::Denied, "reason=bad_token");
                Err(error(StatusCode::UNAUTHORIZED, "BadToken", AuthError::BadToken.to_string()))
            }
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Response> {
    tokio::task::spawn_blocking(f).await.map_err(internal)
}

#[derive(Debug, Deserialize)]
pub struct LoginBody {
    pub user_id: String,
    pub password: String,
}

async fn login(State(s): Shared, Json(body): Json<LoginBody>) -> Response {
    let st = s.clone();
    let user = body.user_id.clone();
    let r = match blocking(move || st.auth.login(&body.user_id, &body.password)).await {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match r {
        Ok(t) => {
            s.audit(&user, "auth.login", Outcome::Ok, format!("role={}", t.principal.role));
            Json(json!({
                "token": t.token,
                "user_id": t.principal.user_id,
                "role": t.principal.role,
                "issued_at": t.issued_at,
                "expires_at": t.expires_at,
            }))
            .into_response()
        }
        Err(e) => {
            s.audit(&user, "auth.login", Outcome::Denied, "reason=bad_credentials");
            error(StatusCode::UNAUTHORIZED, "BadCredentials", e.to_string())
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CommandBody {
    pub command: String,
}

pub fn status_of(r: &ActivityResult) -> StatusCode {
    match r {
        ActivityResult::Ok { .. } => StatusCode::OK,
        ActivityResult::Denied { .. } => StatusCode::FORBIDDEN,
        ActivityResult::Failed { .. } => StatusCode::BAD_GATEWAY,
    }
}

async fn command(State(s): Shared, headers: HeaderMap, Json(body): Json<CommandBody>) -> Response {
    let who = match s.principal(&headers) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let cmd = match cmdparse::parse(&body.command) {
        Ok(c) => c,
        Err(e) => {
            s.audit(&who.user_id, "cp.parse", Outcome::Denied, format!("reason={}", e.code()));
            return error(StatusCode::BAD_REQUEST, e.code(), e.to_string());
        }
    };
    let am = s.am.clone();
    match blocking(move || am.dispatch(&cmd, &who)).await {
        Ok(result) => (status_of(&result), Json(result)).into_response(),
        Err(resp) => resp,
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct UploadReceipt {
    pub filename: String,
    pub bytes: u64,
    pub sha256: String,
}

async fn upload(State(s): Shared, headers: HeaderMap, Path(filename): Path<String>, body: Body) -> Response {
    let who = match s.principal(&headers) {
        Ok(p) => p,
        Err(r) => return r,
    };
    if !matches!(who.role, Role::ThirdParty | Role::Engineer) {
        s.audit(&who.user_id, "gw.upload", Outcome::Denied, "reason=role_forbidden");
        return error(StatusCode::FORBIDDEN, "RoleForbidden", "firmware upload is not permitted for this role");
    }
    if !is_safe_filename(&filename) {
        s.audit(&who.user_id, "gw.upload", Outcome::Denied, "reason=bad_name");
        return error(StatusCode::BAD_REQUEST, "BadName", format!("`{filename}` is not a plain file name"));
    }
    let cap = usize::try_from(s.firmware_cap).unwrap_or(usize::MAX);
    let bytes = match axum::body::to_bytes(body, cap).await {
        Ok(b) => b,
        Err(_) => {
            s.audit(&who.user_id, "gw.upload", Outcome::Denied, "reason=too_large");
            return error(
                StatusCode::PAYLOAD_TOO_LARGE,
                "TooLarge",
                format!("firmware images are capped at {} bytes", s.firmware_cap),
            );
        }
    };
    let dir = s.staging_dir.clone();
    let name = filename.clone();
    let written = blocking(move || -> std::io::Result<UploadReceipt> {
        std::fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!(".{name}.part"));
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, dir.join(&name))?;
        Ok(UploadReceipt {
            filename: name,
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    })
    .await;
    match written {
        Ok(Ok(receipt)) => {
            s.audit(
                &who.user_id,
                "gw.upload",
                Outcome::Ok,
                format!("file={} bytes={} sha256={}", receipt.filename, receipt.bytes, receipt.sha256),
            );
            Json(receipt).into_response()
        }
        Ok(Err(e)) => {
            s.audit(&who.user_id, "gw.upload", Outcome::Failed, "reason=storage_error");
            internal(e)
        }
        Err(resp) => resp,
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct RecordQuery {
    pub asset: Option<AssetId>,
    pub category: Option<String>,
    pub from: Option<i64>,
    pub to: Option<i64>,
}

async fn records(State(s): Shared, headers: HeaderMap, Query(q): Query<RecordQuery>) -> Response {
    let who = match s.principal(&headers) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let category = match q.category.as_deref().map(|c| Category::parse(c).ok_or(c)) {
        None => None,
        Some(Ok(c)) => Some(c),
        Some(Err(bad)) => return error(StatusCode::BAD_REQUEST, "BadCategory", format!("unknown category `{bad}`")),
    };
    let window = (q.from.is_some() || q.to.is_some()).then(|| {
        TimeWindow::new(q.from.unwrap_or(TimeWindow::ALL.from_ms), q.to.unwrap_or(TimeWindow::ALL.to_ms))
    });
    let filter = RecordFilter {
        asset: q.asset,
        category,
        window,
    };
    let st = s.clone();
    let role = who.role;
    let r = match blocking(move || st.am.store().get_records(filter, role.privilege())).await {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match r {
        Ok(recs) => {
            s.audit(&who.user_id, "gw.records", Outcome::Ok, format!("returned={}", recs.len()));
            Json(json!({ "records": recs })).into_response()
        }
        Err(StoreError::RoleForbidden) => {
            s.audit(&who.user_id, "gw.records", Outcome::Denied, "reason=role_forbidden");
            error(StatusCode::FORBIDDEN, "RoleForbidden", StoreError::RoleForbidden.to_string())
        }
        Err(e @ StoreError::DecryptFailure(_)) => {
            s.audit(&who.user_id, "gw.records", Outcome::Failed, "reason=decrypt_failure");
            error(StatusCode::INTERNAL_SERVER_ERROR, "DecryptFailure", e.to_string())
        }
        Err(e) => {
            s.audit(&who.user_id, "gw.records", Outcome::Failed, "reason=storage_error");
            internal(e)
        }
    }
}

async fn latest_profile(State(s): Shared, headers: HeaderMap) -> Response {
    serve_profile(s, headers, None).await
}

async fn profile_by_id(State(s): Shared, headers: HeaderMap, Path(id): Path<u64>) -> Response {
    serve_profile(s, headers, Some(id)).await
}

async fn serve_profile(s: Arc<AppState>, headers: HeaderMap, id: Option<u64>) -> Response {
    let who = match s.principal(&headers) {
        Ok(p) => p,
        Err(r) => return r,
    };
    if who.role != Role::Administrator {
        s.audit(&who.user_id, "gw.profiles", Outcome::Denied, "reason=role_forbidden");
        return error(StatusCode::FORBIDDEN, "RoleForbidden", "threat profiles are for administrators");
    }
    let st = s.clone();
    let found = blocking(move || -> Result<Option<(u64, Vec<u8>)>, StoreError> {
        let store = st.am.store();
        let id = match id {
            Some(id) => id,
            None => match store.profile_ids()?.last() {
                Some(id) => *id,
                None => return Ok(None),
            },
        };
        Ok(store.get_profile(id)?.map(|doc| (id, doc)))
    })
    .await;
    match found {
        Ok(Ok(Some((id, doc)))) => match serde_json::from_slice::<serde_json::Value>(&doc) {
            Ok(profile) => {
                s.audit(&who.user_id, "gw.profiles", Outcome::Ok, format!("profile={id}"));
                Json(json!({ "profile_id": id, "profile": profile })).into_response()
            }
            Err(e) => internal(e),
        },
        Ok(Ok(None)) => {
            s.audit(&who.user_id, "gw.profiles", Outcome::Ok, "found=none");
            error(StatusCode::NOT_FOUND, "NotFound", "no such threat profile")
        }
        Ok(Err(e)) => {
            s.audit(&who.user_id, "gw.profiles", Outcome::Failed, "reason=storage_error");
            internal(e)
        }
        Err(resp) => resp,
    }
}

async fn health(State(s): Shared) -> Response {
    Json(json!({ "status": "ok", "attested": s.attested })).into_response()
}
