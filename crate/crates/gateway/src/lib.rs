//! HTTP+JSON gateway over a [`Network`].
//!
//! Bearer tokens from the network config identify the caller. Every POST
//! runs one or more transactions as that identity and answers after commit;
//! permission checks are left entirely to the contract. Reads answer from
//! committed state under a shared lock, so they run concurrently while
//! mutations take turns.
//!
//! | Method | Path | Body | Answer |
//! |---|---|---|---|
//! | POST | `/animals` | `{animal_id, born_at}` | tx outcome |
//! | POST | `/animals/{id}/events` | `{kind, detail, at}` | tx outcome |
//! | POST | `/batches` | `{batch_id, source_animals, rfid}` | tx outcome |
//! | POST | `/process` | `{inputs, output_id, process_kind, receiver?}` | tx outcome |
//! | POST | `/transfers` | `{batch_id, to}` | tx outcome |
//! | POST | `/offers` | `{offer_id, product_id, standard_price, targeted?, settlement?}` | offer |
//! | POST | `/offers/{id}/accept` | none | acceptance |
//! | POST | `/recalls` | `{batch_ids, report?, origin?}` | tx outcome |
//! | GET | `/trace/back/{batch}` | | trace |
//! | GET | `/trace/forward/{origin}` | | recall report |
//! | GET | `/tokens/{farm}` | | token ledger entry |
//! | GET | `/qr/{payload}` | | trace, no token needed |
//! | GET | `/ledger/{channel}/blocks/{n}` | | block, channel members only |
//! | GET | `/health` | | heights, no token needed |
//!
//! A tx outcome is `{tx_id, channel, validity, block_no, tx_index, response}`.
//! Errors are `{error, detail}` where `error` is the refusal code.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use provledger::chaincode::{Offer, RecallReport, TokenLedgerEntry, TraceBack};
use provledger::codec::Doc;
use provledger::membership::MAIN_CHANNEL;
use provledger::network::{block_json, Acceptance, Network, NetworkError, OfferRequest, TxOutcome};

pub type SharedNetwork = Arc<RwLock<Network>>;

pub fn shared(net: Network) -> SharedNetwork {
    Arc::new(RwLock::new(net))
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {reason}")]
    Bind { addr: SocketAddr, reason: String },
    #[error("server stopped: {0}")]
    Serve(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Bind { .. } => "BIND_FAILURE",
            GatewayError::Serve(_) => "IO_ERROR",
        }
    }
}

/// Binds `addr` and serves until the process stops.
pub async fn serve(net: SharedNetwork, addr: SocketAddr) -> Result<(), GatewayError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| GatewayError::Bind { addr, reason: e.to_string() })?;
    axum::serve(listener, router(net)).await.map_err(|e| GatewayError::Serve(e.to_string()))
}

pub fn router(net: SharedNetwork) -> Router {
    Router::new()
        .route("/animals", post(post_animal))
        .route("/animals/{id}/events", post(post_animal_event))
        .route("/batches", post(post_batch))
        .route("/process", post(post_process))
        .route("/transfers", post(post_transfer))
        .route("/offers", post(post_offer))
        .route("/offers/{id}/accept", post(post_accept))
        .route("/recalls", post(post_recall))
        .route("/trace/back/{batch}", get(get_trace_back))
        .route("/trace/forward/{origin}", get(get_trace_forward))
        .route("/tokens/{farm}", get(get_tokens))
        .route("/qr/{payload}", get(get_qr))
        .route("/ledger/{channel}/blocks/{n}", get(get_block))
        .route("/health", get(get_health))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint") })
        .with_state(net)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        ApiError { status, code: code.to_string(), detail: detail.into() }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

impl From<NetworkError> for ApiError {
    fn from(e: NetworkError) -> Self {
        ApiError::new(status_for(e.code()), e.code(), e.to_string())
    }
}

/// HTTP status for a refusal code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "UNAUTHENTICATED" => StatusCode::UNAUTHORIZED,
        "WRONG_ROLE" | "NOT_OWNER" | "NOT_CUSTODIAN" | "NOT_TARGETED" | "NOT_A_MEMBER" | "UNAUTHORIZED"
        | "NOT_AN_ENDORSER" => StatusCode::FORBIDDEN,
        "INVALID" => StatusCode::UNPROCESSABLE_ENTITY,
        "ALREADY_SOLD" | "BATCH_RECALLED" | "INPUT_RECALLED" | "NOT_IN_REPORT" | "MVCC_CONFLICT" => {
            StatusCode::CONFLICT
        }
        c if c.starts_with("DUPLICATE_") => StatusCode::CONFLICT,
        c if c.starts_with("UNKNOWN_") || c == "BLOCK_NOT_FOUND" => StatusCode::NOT_FOUND,
        "BAD_ENDORSEMENT" | "IO_ERROR" | "REPLAY_DIVERGENCE" | "ENDORSEMENT_MISMATCH" => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        _ => StatusCode::BAD_REQUEST,
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn read(net: &SharedNetwork) -> RwLockReadGuard<'_, Network> {
    net.read().unwrap_or_else(|e| e.into_inner())
}

fn write(net: &SharedNetwork) -> RwLockWriteGuard<'_, Network> {
    net.write().unwrap_or_else(|e| e.into_inner())
}

/// Identity behind the request's bearer token.
fn caller(net: &Network, headers: &HeaderMap) -> Result<String, ApiError> {
    let unauthenticated = |detail: &str| ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHENTICATED", detail);
    let value = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| unauthenticated("missing bearer token"))?;
    let token = value.strip_prefix("Bearer ").ok_or_else(|| unauthenticated("expected a bearer token"))?;
    net.token_identity(token.trim()).map(str::to_string).ok_or_else(|| unauthenticated("unknown token"))
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

/// Contract args from a JSON object body. A client-supplied `now` is
/// dropped so that custody times always come from the gateway clock.
fn args(body: &Bytes) -> Result<Doc, ApiError> {
    let mut value: serde_json::Value = parse(body)?;
    let Some(map) = value.as_object_mut() else {
        return Err(ApiError::bad_request("body must be a JSON object"));
    };
    map.remove("now");
    Doc::try_from(value).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn run(net: &SharedNetwork, headers: &HeaderMap, op: &str, args: Doc) -> ApiResult<TxOutcome> {
    let mut net = write(net);
    let actor = caller(&net, headers)?;
    Ok(Json(net.submit_op(&actor, op, args)?))
}

async fn post_animal(State(net): State<SharedNetwork>, headers: HeaderMap, body: Bytes) -> ApiResult<TxOutcome> {
    run(&net, &headers, "register_animal", args(&body)?)
}

async fn post_animal_event(
    State(net): State<SharedNetwork>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<TxOutcome> {
    run(&net, &headers, "record_animal_event", args(&body)?.with("animal_id", id))
}

async fn post_batch(State(net): State<SharedNetwork>, headers: HeaderMap, body: Bytes) -> ApiResult<TxOutcome> {
    run(&net, &headers, "register_batch", args(&body)?)
}

async fn post_process(State(net): State<SharedNetwork>, headers: HeaderMap, body: Bytes) -> ApiResult<TxOutcome> {
    run(&net, &headers, "process_batch", args(&body)?)
}

async fn post_transfer(State(net): State<SharedNetwork>, headers: HeaderMap, body: Bytes) -> ApiResult<TxOutcome> {
    run(&net, &headers, "transfer_custody", args(&body)?)
}

async fn post_offer(State(net): State<SharedNetwork>, headers: HeaderMap, body: Bytes) -> ApiResult<Offer> {
    let request: OfferRequest = parse(&body)?;
    let mut net = write(&net);
    let actor = caller(&net, &headers)?;
    Ok(Json(net.publish_offer(&actor, request)?))
}

async fn post_accept(
    State(net): State<SharedNetwork>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Acceptance> {
    let mut net = write(&net);
    let actor = caller(&net, &headers)?;
    Ok(Json(net.accept_offer(&actor, &id)?))
}

#[derive(Deserialize)]
struct RecallRequest {
    batch_ids: Vec<String>,
    /// Report the auditor reviewed; must still match committed state.
    report: Option<RecallReport>,
    /// Traced afresh when no report is given.
    origin: Option<String>,
}

async fn post_recall(State(net): State<SharedNetwork>, headers: HeaderMap, body: Bytes) -> ApiResult<TxOutcome> {
    let request: RecallRequest = parse(&body)?;
    let mut net = write(&net);
    let actor = caller(&net, &headers)?;
    let report = match (request.report, request.origin) {
        (Some(report), _) => report,
        (None, Some(origin)) => net.trace_forward(&origin)?,
        (None, None) => return Err(ApiError::bad_request("give a report or an origin")),
    };
    Ok(Json(net.recall(&actor, &report, &request.batch_ids)?))
}

async fn get_trace_back(
    State(net): State<SharedNetwork>,
    Path(batch): Path<String>,
    headers: HeaderMap,
) -> ApiResult<TraceBack> {
    let net = read(&net);
    caller(&net, &headers)?;
    Ok(Json(net.trace_back(&batch)?))
}

async fn get_trace_forward(
    State(net): State<SharedNetwork>,
    Path(origin): Path<String>,
    headers: HeaderMap,
) -> ApiResult<RecallReport> {
    let net = read(&net);
    caller(&net, &headers)?;
    Ok(Json(net.trace_forward(&origin)?))
}

async fn get_tokens(
    State(net): State<SharedNetwork>,
    Path(farm): Path<String>,
    headers: HeaderMap,
) -> ApiResult<TokenLedgerEntry> {
    let net = read(&net);
    caller(&net, &headers)?;
    Ok(Json(net.token_entry(&farm)?))
}

async fn get_qr(State(net): State<SharedNetwork>, Path(payload): Path<String>) -> ApiResult<TraceBack> {
    Ok(Json(read(&net).verify_qr(&payload)?))
}

async fn get_block(
    State(net): State<SharedNetwork>,
    Path((channel, n)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<serde_json::Value> {
    let number: u64 = n.parse().map_err(|_| ApiError::bad_request(format!("bad block number {n:?}")))?;
    let net = read(&net);
    let actor = caller(&net, &headers)?;
    if net.membership().channel(&channel).is_err() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_CHANNEL", channel));
    }
    if !net.membership().authorize(&actor, &channel) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "NOT_A_MEMBER", format!("{actor} is not in {channel}")));
    }
    let block = net
        .block(&channel, number)?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "BLOCK_NOT_FOUND", format!("{channel} has no block {number}")))?;
    Ok(Json(block_json(&block)))
}

async fn get_health(State(net): State<SharedNetwork>) -> Json<serde_json::Value> {
    let net = read(&net);
    let height = net.height(MAIN_CHANNEL).unwrap_or(0);
    Json(serde_json::json!({ "status": "ok", "main_height": height }))
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/gateway.md")]
mod book_gateway {}
