use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, RawQuery, Request, State};
use axum::http::header::{ACCEPT, AUTHORIZATION, CONTENT_DISPOSITION, CONTENT_TYPE};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use fairkit::catalog::{ModelChange, Principal, TableRef};
use fairkit::idspace::MintRequest;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::ops::{
    query_from_params, ExportBody, Health, LocationsBody, RunBody, UpdateBody, UpgradeBody,
};
use crate::{html, ApiError, DataDir};

type Shared = Arc<DataDir>;
type Reply = Result<Response, ApiError>;

/// Header carrying a client-chosen key that makes a create request safe to
/// repeat.
pub const IDEMPOTENCY_KEY: &str = "idempotency-key";

/// A route as `(method, path template)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Route {
    pub method: &'static str,
    pub path: &'static str,
}

const ROUTES: &[(&str, &str)] = &[
    ("GET", "/v1/healthz"),
    ("POST", "/v1/id/mint"),
    ("GET", "/v1/id/{id}"),
    ("PATCH", "/v1/id/{id}/locations"),
    ("POST", "/v1/id/{id}/upgrade"),
    ("GET", "/v1/catalog/model"),
    ("POST", "/v1/catalog/model"),
    ("POST", "/v1/catalog/entity/{schema}/{table}"),
    ("PATCH", "/v1/catalog/entity/{rid}"),
    ("GET", "/v1/catalog/entity/{rid}"),
    ("GET", "/v1/catalog/query"),
    ("GET", "/v1/catalog/snapshot/{sid}/entity/{schema}/{table}"),
    ("POST", "/v1/catalog/export"),
    ("POST", "/v1/flow/define"),
    ("POST", "/v1/flow/run"),
    ("POST", "/v1/flow/{run_id}/resume"),
    ("GET", "/v1/flow/{run_id}/audit"),
];

/// Every route the service answers.
pub fn route_table() -> Vec<Route> {
    ROUTES
        .iter()
        .map(|&(method, path)| Route { method, path })
        .collect()
}

pub fn router(data: Shared) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/id/mint", post(mint))
        .route("/v1/id/{id}", get(resolve_id))
        .route("/v1/id/{id}/locations", patch(update_locations))
        .route("/v1/id/{id}/upgrade", post(upgrade))
        .route("/v1/catalog/model", get(get_model).post(change_model))
        .route("/v1/catalog/entity/{schema}/{table}", post(insert))
        .route(
            "/v1/catalog/entity/{rid}",
            get(get_entity).patch(update_entity),
        )
        .route("/v1/catalog/query", get(query))
        .route(
            "/v1/catalog/snapshot/{sid}/entity/{schema}/{table}",
            get(snapshot_query),
        )
        .route("/v1/catalog/export", post(export))
        .route("/v1/flow/define", post(define_flow))
        .route("/v1/flow/run", post(run_flow))
        .route("/v1/flow/{run_id}/resume", post(resume_flow))
        .route("/v1/flow/{run_id}/audit", get(audit))
        .fallback(unknown_route)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(middleware::from_fn(cors))
        .with_state(data)
}

/// Lets browser clients on other origins call the API.
async fn cors(request: Request, next: Next) -> Response {
    let mut response = if request.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(request).await
    };
    let headers = response.headers_mut();
    headers.insert("access-control-allow-origin", HeaderValue::from_static("*"));
    headers.insert(
        "access-control-allow-methods",
        HeaderValue::from_static("GET, POST, PATCH, OPTIONS"),
    );
    headers.insert(
        "access-control-allow-headers",
        HeaderValue::from_static("authorization, content-type, idempotency-key"),
    );
    headers.insert(
        "access-control-expose-headers",
        HeaderValue::from_static("x-minid, x-catalog-snapshot"),
    );
    response
}

async fn unknown_route(method: Method, uri: axum::http::Uri) -> ApiError {
    ApiError::new(
        "UnknownRoute",
        format!("no route for {method} {}", uri.path()),
    )
}

async fn method_not_allowed(method: Method, uri: axum::http::Uri) -> ApiError {
    ApiError::new(
        "MethodNotAllowed",
        format!("{method} is not supported on {}", uri.path()),
    )
}

/// Runs `work` on the blocking pool; the stores do synchronous file I/O.
async fn blocking<T: Send + 'static>(
    work: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(work)
        .await
        .map_err(ApiError::internal)?
}

fn caller(data: &DataDir, headers: &HeaderMap) -> Result<Principal, ApiError> {
    let token = match headers.get(AUTHORIZATION) {
        None => None,
        Some(value) => Some(
            value
                .to_str()
                .ok()
                .and_then(|v| v.strip_prefix("Bearer "))
                .map(str::trim)
                .ok_or_else(|| {
                    ApiError::new("Unauthorized", "expected `Authorization: Bearer <token>`")
                })?,
        ),
    };
    Ok(data.principal_for(token)?)
}

fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get(IDEMPOTENCY_KEY)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

fn wants_html(headers: &HeaderMap) -> bool {
    headers
        .get(ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|accept| accept.contains("text/html"))
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new("MalformedRequest", e.to_string()))
}

fn params(raw: &Option<String>) -> Vec<(String, String)> {
    raw.as_deref()
        .map(|q| {
            url::form_urlencoded::parse(q.as_bytes())
                .into_owned()
                .collect()
        })
        .unwrap_or_default()
}

fn snapshot_param(raw: &Option<String>) -> Result<Option<u64>, ApiError> {
    let mut snapshot = None;
    for (key, value) in params(raw) {
        if key != "snapshot" {
            return Err(ApiError::new(
                "MalformedRequest",
                format!("unknown query parameter `{key}`"),
            ));
        }
        snapshot = Some(
            value
                .parse()
                .map_err(|_| ApiError::new("MalformedRequest", "`snapshot` must be a number"))?,
        );
    }
    Ok(snapshot)
}

fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, Json(value)).into_response()
}

fn table_ref(schema: &str, table: &str) -> Result<TableRef, ApiError> {
    Ok(TableRef::parse(&format!("{schema}:{table}"))?)
}

async fn healthz() -> Json<Health> {
    Json(Health::ok())
}

async fn mint(State(data): State<Shared>, headers: HeaderMap, body: Bytes) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let request: MintRequest = parse_body(&body)?;
        let record = data.mint(&who, &request, idempotency_key(&headers).as_deref())?;
        Ok(json(StatusCode::CREATED, &record))
    })
    .await
}

async fn resolve_id(
    State(data): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let record = data.resolve_id(&who, &id)?;
        Ok(if wants_html(&headers) {
            Html(html::minid_page(&record)).into_response()
        } else {
            json(StatusCode::OK, &record)
        })
    })
    .await
}

async fn update_locations(
    State(data): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let record = data.update_locations(&who, &id, &parse_body::<LocationsBody>(&body)?)?;
        Ok(json(StatusCode::OK, &record))
    })
    .await
}

async fn upgrade(
    State(data): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let record = data.upgrade_id(&who, &id, &parse_body::<UpgradeBody>(&body)?)?;
        Ok(json(StatusCode::OK, &record))
    })
    .await
}

async fn get_model(
    State(data): State<Shared>,
    RawQuery(raw): RawQuery,
    headers: HeaderMap,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        Ok(json(
            StatusCode::OK,
            &data.model(&who, snapshot_param(&raw)?)?,
        ))
    })
    .await
}

async fn change_model(State(data): State<Shared>, headers: HeaderMap, body: Bytes) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let change: ModelChange = parse_body(&body)?;
        Ok(json(
            StatusCode::OK,
            &data.apply_model_change(&who, change)?,
        ))
    })
    .await
}

async fn insert(
    State(data): State<Shared>,
    Path((schema, table)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let table = table_ref(&schema, &table)?;
        let values: Map<String, Value> = parse_body(&body)?;
        let record = data.insert(&who, &table, values, idempotency_key(&headers).as_deref())?;
        Ok(json(StatusCode::CREATED, &record))
    })
    .await
}

async fn update_entity(
    State(data): State<Shared>,
    Path(rid): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let record = data.update_entity(&who, &rid, &parse_body::<UpdateBody>(&body)?)?;
        Ok(json(StatusCode::OK, &record))
    })
    .await
}

async fn get_entity(
    State(data): State<Shared>,
    Path(rid): Path<String>,
    RawQuery(raw): RawQuery,
    headers: HeaderMap,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let resolution = data.get_entity(&who, &rid, snapshot_param(&raw)?)?;
        Ok(if wants_html(&headers) {
            Html(html::record_page(&resolution)).into_response()
        } else {
            json(StatusCode::OK, &resolution)
        })
    })
    .await
}

async fn query(State(data): State<Shared>, RawQuery(raw): RawQuery, headers: HeaderMap) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let pairs = params(&raw);
        let query = query_from_params(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(json(StatusCode::OK, &data.query(&who, &query)?))
    })
    .await
}

async fn snapshot_query(
    State(data): State<Shared>,
    Path((sid, schema, table)): Path<(String, String, String)>,
    RawQuery(raw): RawQuery,
    headers: HeaderMap,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let sid: u64 = sid.parse().map_err(|_| {
            ApiError::new(
                "MalformedRequest",
                format!("`{sid}` is not a snapshot number"),
            )
        })?;
        let mut pairs = params(&raw);
        if pairs.iter().any(|(k, _)| k == "path" || k == "snapshot") {
            return Err(ApiError::new(
                "MalformedRequest",
                "the table and snapshot come from the route",
            ));
        }
        pairs.push(("path".into(), table_ref(&schema, &table)?.to_string()));
        pairs.push(("snapshot".into(), sid.to_string()));
        let query = query_from_params(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(json(StatusCode::OK, &data.query(&who, &query)?))
    })
    .await
}

async fn export(State(data): State<Shared>, headers: HeaderMap, body: Bytes) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let exported = data.export(&who, &parse_body::<ExportBody>(&body)?)?;
        let header = |v: String| HeaderValue::from_str(&v).map_err(ApiError::internal);
        let mut response = Response::new(Body::from(exported.archive));
        let headers = response.headers_mut();
        headers.insert(CONTENT_TYPE, HeaderValue::from_static("application/x-tar"));
        headers.insert(
            CONTENT_DISPOSITION,
            header(format!(
                "attachment; filename=\"{}.tar\"",
                exported.minid.id.suffix()
            ))?,
        );
        headers.insert("x-minid", header(exported.minid.id.to_string())?);
        headers.insert("x-catalog-snapshot", header(exported.snapshot.to_string())?);
        Ok(response)
    })
    .await
}

async fn define_flow(State(data): State<Shared>, headers: HeaderMap, body: Bytes) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        let spec =
            std::str::from_utf8(&body).map_err(|e| ApiError::new("ParseError", e.to_string()))?;
        Ok(json(StatusCode::CREATED, &data.define_flow(&who, spec)?))
    })
    .await
}

async fn run_flow(State(data): State<Shared>, headers: HeaderMap, body: Bytes) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        Ok(json(
            StatusCode::OK,
            &data.run_flow(&who, &parse_body::<RunBody>(&body)?)?,
        ))
    })
    .await
}

async fn resume_flow(
    State(data): State<Shared>,
    Path(run_id): Path<String>,
    headers: HeaderMap,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        Ok(json(StatusCode::OK, &data.resume_flow(&who, &run_id)?))
    })
    .await
}

async fn audit(
    State(data): State<Shared>,
    Path(run_id): Path<String>,
    headers: HeaderMap,
) -> Reply {
    blocking(move || {
        let who = caller(&data, &headers)?;
        Ok(json(StatusCode::OK, &data.audit(&who, &run_id)?))
    })
    .await
}
