//! REST interface under `/v1`, the session event stream, and static
//! serving of the dashboard bundle under `/ui/`.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Router;
use converge_sim::trace::RecordKind;
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;

use crate::commands::{CommandRequest, PlacementRequest, RisProfileRequest};
use crate::dataset::TraceFilter;
use crate::error::CoreError;
use crate::events::SessionEvent;
use crate::models::ModelEntry;
use crate::service::{Core, CreateSession};
use crate::session::SessionState;

#[derive(Clone)]
pub struct AppState {
    pub core: Arc<Core>,
}

pub struct ApiError(pub CoreError);

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &CoreError) -> StatusCode {
    match e {
        CoreError::Unauthorized => StatusCode::UNAUTHORIZED,
        CoreError::Forbidden(_) | CoreError::QuotaExceeded { .. } => StatusCode::FORBIDDEN,
        CoreError::UnknownSession(_) | CoreError::UnknownDataset(_) | CoreError::UnknownModel(_) => StatusCode::NOT_FOUND,
        CoreError::IllegalTransition { .. }
        | CoreError::SessionNotRunning { .. }
        | CoreError::NonMonotonicTimestamp { .. }
        | CoreError::Unsealed(_)
        | CoreError::DuplicateModel(_) => StatusCode::CONFLICT,
        CoreError::UnknownScenario(_) | CoreError::Validation { .. } | CoreError::SchemaMismatch(_) => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        CoreError::NotInvocable(_) => StatusCode::NOT_IMPLEMENTED,
        CoreError::ExecutorUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        CoreError::Corrupt(_) | CoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(&self.0);
        let mut body = json!({ "error": self.0.code(), "message": self.0.to_string() });
        if let CoreError::Validation { field, .. } = &self.0 {
            body["field"] = json!(field);
        }
        let mut resp = (status, axum::Json(body)).into_response();
        if status == StatusCode::UNAUTHORIZED {
            resp.headers_mut().insert(header::WWW_AUTHENTICATE, "Bearer".parse().unwrap());
        }
        resp
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body whose rejections use the service's error shape (always 422).
pub struct Json<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Json<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Json(v)),
            Err(rejection) => {
                let message = match &rejection {
                    JsonRejection::JsonDataError(e) => e.body_text(),
                    other => other.body_text(),
                };
                Err(CoreError::invalid("body", message).into())
            }
        }
    }
}

fn ok<T: Serialize>(status: StatusCode, body: T) -> Response {
    (status, axum::Json(body)).into_response()
}

/// The authenticated principal. Browsers cannot set headers on an
/// EventSource, so `access_token` in the query is accepted as well.
pub struct Principal(pub String);

impl FromRequestParts<AppState> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let header_token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(|t| t.trim().to_string());
        let query_token = parts.uri.query().and_then(|q| {
            q.split('&').find_map(|kv| kv.strip_prefix("access_token=").map(str::to_string))
        });
        let token = header_token.or(query_token).ok_or(CoreError::Unauthorized)?;
        Ok(Principal(state.core.authenticate(&token)?))
    }
}

/// Runs blocking service work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, CoreError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| CoreError::Corrupt(format!("worker panicked: {e}")))?
        .map_err(ApiError)
}

async fn healthz() -> Response {
    ok(StatusCode::OK, json!({ "status": "ok" }))
}

async fn create_session(State(st): State<AppState>, Principal(p): Principal, Json(req): Json<CreateSession>) -> ApiResult<Response> {
    let s = blocking(move || st.core.create_session(&p, req)).await?;
    Ok(ok(StatusCode::CREATED, s))
}

async fn list_sessions(State(st): State<AppState>, Principal(p): Principal) -> ApiResult<Response> {
    let list = blocking(move || st.core.sessions(&p)).await?;
    Ok(ok(StatusCode::OK, list))
}

async fn get_session(State(st): State<AppState>, Principal(p): Principal, Path(id): Path<String>) -> ApiResult<Response> {
    let s = blocking(move || st.core.session(&p, &id)).await?;
    Ok(ok(StatusCode::OK, s))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionBody {
    target: SessionState,
}

async fn transition(
    State(st): State<AppState>,
    Principal(p): Principal,
    Path(id): Path<String>,
    Json(body): Json<TransitionBody>,
) -> ApiResult<Response> {
    let s = blocking(move || st.core.transition(&p, &id, body.target)).await?;
    Ok(ok(StatusCode::OK, s))
}

async fn scene(State(st): State<AppState>, Principal(p): Principal, Path(id): Path<String>) -> ApiResult<Response> {
    let snap = blocking(move || st.core.snapshot(&p, &id)).await?;
    Ok(ok(StatusCode::OK, snap))
}

async fn placement(
    State(st): State<AppState>,
    Principal(p): Principal,
    Path((id, device)): Path<(String, String)>,
    Json(body): Json<PlacementRequest>,
) -> ApiResult<Response> {
    let a = blocking(move || st.core.set_placement(&p, &id, &device, body)).await?;
    Ok(ok(StatusCode::ACCEPTED, a))
}

async fn ris_profile(
    State(st): State<AppState>,
    Principal(p): Principal,
    Path((id, lis)): Path<(String, String)>,
    Json(body): Json<RisProfileRequest>,
) -> ApiResult<Response> {
    let a = blocking(move || st.core.set_ris_profile(&p, &id, &lis, body)).await?;
    Ok(ok(StatusCode::ACCEPTED, a))
}

async fn command(
    State(st): State<AppState>,
    Principal(p): Principal,
    Path(id): Path<String>,
    Json(body): Json<CommandRequest>,
) -> ApiResult<Response> {
    let a = blocking(move || st.core.command(&p, &id, body)).await?;
    Ok(ok(StatusCode::ACCEPTED, a))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    last_event_id: Option<u64>,
    #[serde(default)]
    #[allow(dead_code)]
    access_token: Option<String>,
}

fn sse_event(e: &SessionEvent) -> Event {
    Event::default().id(e.id.to_string()).event(e.event.clone()).data(e.data.to_string())
}

async fn events(
    State(st): State<AppState>,
    Principal(p): Principal,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok())
        .or(q.last_event_id);
    let core = st.core.clone();
    let sid = id.clone();
    let sub = blocking(move || core.subscribe(&p, &sid, after)).await?;
    let last = sub.backlog.last().map(|e| e.id).or(after).unwrap_or(0);
    let backlog = stream::iter(sub.backlog.into_iter().map(|e| Ok(sse_event(&e))));
    let core = st.core.clone();
    let live = stream::unfold((sub.live, last, core, id), |(mut rx, mut last, core, id)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if e.id <= last => continue,
                Ok(e) => {
                    last = e.id;
                    return Some((vec![Ok(sse_event(&e))], (rx, last, core, id)));
                }
                Err(RecvError::Lagged(_)) => {
                    // Refill from history so the client sees no gap.
                    let missed = core.events_since(&id, last);
                    if let Some(l) = missed.last() {
                        last = l.id;
                    }
                    let batch = missed.iter().map(|e| Ok(sse_event(e))).collect();
                    return Some((batch, (rx, last, core, id)));
                }
                Err(RecvError::Closed) => return None,
            }
        }
    })
    .flat_map(stream::iter);
    Ok(Sse::new(backlog.chain(live)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

async fn get_dataset(State(st): State<AppState>, Principal(p): Principal, Path(id): Path<String>) -> ApiResult<Response> {
    let d = blocking(move || st.core.dataset(&p, &id)).await?;
    Ok(ok(StatusCode::OK, d))
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn export(
    State(st): State<AppState>,
    Principal(p): Principal,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let bytes = blocking(move || st.core.export_dataset(&p, &id, q.format.as_deref())).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from(bytes)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TracesQuery {
    #[serde(default)]
    from_s: Option<f64>,
    #[serde(default)]
    to_s: Option<f64>,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    device_id: Option<String>,
}

async fn traces(
    State(st): State<AppState>,
    Principal(p): Principal,
    Path(id): Path<String>,
    query: Result<Query<TracesQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query.map_err(|e| CoreError::invalid("query", e.body_text()))?;
    let kind = q
        .kind
        .map(|k| k.parse::<RecordKind>())
        .transpose()
        .map_err(|e| CoreError::invalid("kind", e))?;
    let filter = TraceFilter { from_s: q.from_s, to_s: q.to_s, kind, device_id: q.device_id };
    let records = blocking(move || st.core.query_traces(&p, &id, &filter)).await?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&crate::dataset::record_line(r));
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn register_model(State(st): State<AppState>, Principal(p): Principal, Json(entry): Json<ModelEntry>) -> ApiResult<Response> {
    let e = blocking(move || st.core.register_model(&p, entry)).await?;
    Ok(ok(StatusCode::CREATED, e))
}

async fn list_models(State(st): State<AppState>, Principal(p): Principal) -> ApiResult<Response> {
    let list = blocking(move || st.core.models(&p)).await?;
    Ok(ok(StatusCode::OK, list))
}

/// `POST /v1/models/{id}/{version}:invoke`
async fn invoke_model(
    State(st): State<AppState>,
    Principal(p): Principal,
    Path((id, action)): Path<(String, String)>,
    Json(input): Json<Value>,
) -> ApiResult<Response> {
    let Some(version) = action.strip_suffix(":invoke").map(str::to_string) else {
        return Ok((StatusCode::NOT_FOUND, axum::Json(json!({ "error": "not_found" }))).into_response());
    };
    let out = blocking(move || st.core.invoke_model(&p, &id, &version, &input)).await?;
    Ok(ok(StatusCode::OK, out))
}

const PLACEHOLDER_UI: &str = "<!doctype html>\n<title>converge</title>\n<p>No dashboard bundle configured. \
Start the server with <code>--ui-dir</code> pointing at a built dashboard.</p>\n";

async fn placeholder_ui() -> Html<&'static str> {
    Html(PLACEHOLDER_UI)
}

async fn not_found() -> Response {
    (StatusCode::NOT_FOUND, axum::Json(json!({ "error": "not_found", "message": "no such route" }))).into_response()
}

pub fn router(core: Arc<Core>, ui_dir: Option<PathBuf>) -> Router {
    let v1 = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/transition", post(transition))
        .route("/sessions/{id}/scene", get(scene))
        .route("/sessions/{id}/placement/{device_id}", put(placement))
        .route("/sessions/{id}/ris/{lis_id}/profile", put(ris_profile))
        .route("/sessions/{id}/commands", post(command))
        .route("/sessions/{id}/events", get(events))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/export", get(export))
        .route("/datasets/{id}/traces", get(traces))
        .route("/models", post(register_model).get(list_models))
        .route("/models/{id}/{action}", post(invoke_model));
    let app = Router::new().nest("/v1", v1);
    let app = match ui_dir {
        Some(dir) => app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.route("/ui", get(placeholder_ui)).route("/ui/", get(placeholder_ui)),
    };
    app
        .fallback(not_found)
        .with_state(AppState { core })
}
