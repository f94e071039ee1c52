use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use provledger::codec::Doc;
use provledger::network::{Network, NetworkConfig, Storage};
use provledger_gateway::{router, shared, SharedNetwork};

const T0: u64 = 1_700_000_000_000;

fn app() -> (Router, SharedNetwork) {
    let mut net = Network::bootstrap(NetworkConfig::demo(), Storage::Memory).unwrap();
    net.set_time(T0);
    let net = shared(net);
    (router(net.clone()), net)
}

async fn call(app: &Router, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut request = Request::builder().method(method).uri(path);
    if let Some(token) = token {
        request = request.header(header::AUTHORIZATION, format!("Bearer {token}"));
    }
    let body = match body {
        Some(v) => {
            request = request.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let response = app.clone().oneshot(request.body(body).unwrap()).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn post(app: &Router, path: &str, token: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, path, Some(token), Some(body)).await
}

async fn get(app: &Router, path: &str, token: Option<&str>) -> (StatusCode, Value) {
    call(app, Method::GET, path, token, None).await
}

/// Cow, raw batch and a transfer to proc-1, all from farm-a.
async fn seed(app: &Router) {
    let (s, _) = post(app, "/animals", "farm-a-token", json!({"animal_id": "cow-1", "born_at": "2023-03-01"})).await;
    assert_eq!(s, StatusCode::OK);
    let batch = json!({"batch_id": "m-1", "source_animals": ["cow-1"], "rfid": "E2001"});
    let (s, _) = post(app, "/batches", "farm-a-token", batch).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = post(app, "/transfers", "farm-a-token", json!({"batch_id": "m-1", "to": "proc-1"})).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn register_animal_reports_commit() {
    let (app, _) = app();
    let (status, body) = post(&app, "/animals", "farm-a-token", json!({"animal_id": "cow-1", "born_at": "2023-03-01"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["validity"], "VALID");
    assert_eq!(body["channel"], "main");
    assert_eq!(body["tx_id"].as_str().unwrap().len(), 64);
    assert_eq!(body["response"]["farm_id"], "farm-a");
}

#[tokio::test]
async fn consumer_cannot_register_animals() {
    let (app, _) = app();
    let (status, body) = post(&app, "/animals", "consumer-token", json!({"animal_id": "cow-1", "born_at": "2023-03-01"})).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "WRONG_ROLE");
}

#[tokio::test]
async fn missing_or_unknown_token_is_unauthenticated() {
    let (app, _) = app();
    let (status, body) = call(&app, Method::POST, "/animals", None, Some(json!({}))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"], "UNAUTHENTICATED");
    let (status, _) = get(&app, "/trace/forward/farm-a", Some("nope")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = get(&app, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn refusal_codes_map_to_statuses() {
    let (app, _) = app();
    seed(&app).await;
    let again = json!({"animal_id": "cow-1", "born_at": "2023-03-01"});
    assert_eq!(post(&app, "/animals", "farm-a-token", again).await.0, StatusCode::CONFLICT);
    let unknown = json!({"batch_id": "m-9", "source_animals": ["cow-9"], "rfid": "x"});
    let (status, body) = post(&app, "/batches", "farm-a-token", unknown).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("UNKNOWN_ANIMAL")));
    let (status, body) = post(&app, "/animals", "farm-a-token", json!({"animal_id": "cow-2"})).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("BAD_ARGS")));
    let (status, _) = post(&app, "/transfers", "farm-a-token", json!({"batch_id": "m-1", "to": "shop-1"})).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let raw = Request::post("/animals")
        .header(header::AUTHORIZATION, "Bearer farm-a-token")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(app.clone().oneshot(raw).await.unwrap().status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn animal_events_use_the_path_id() {
    let (app, _) = app();
    seed(&app).await;
    let event = json!({"kind": "VACCINATION", "detail": "FMD", "at": "2023-04-01"});
    let (status, body) = post(&app, "/animals/cow-1/events", "farm-a-token", event.clone()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["response"]["events"][1]["detail"], "FMD");
    let (status, body) = post(&app, "/animals/cow-1/events", "farm-b-token", event).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::FORBIDDEN, Some("NOT_OWNER")));
}

#[tokio::test]
async fn empty_farm_traces_to_nothing() {
    let (app, _) = app();
    let (status, body) = get(&app, "/trace/forward/farm-b", Some("auditor-token")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["affected_batches"], json!([]));
}

#[tokio::test]
async fn reads_see_committed_writes() {
    let (app, _) = app();
    seed(&app).await;
    let process = json!({"inputs": ["m-1"], "output_id": "c-1", "process_kind": "cheese", "receiver": "shop-1"});
    let (status, body) = post(&app, "/process", "proc-1-token", process).await;
    assert_eq!((status, body["validity"].as_str()), (StatusCode::OK, Some("VALID")));

    let (_, back) = get(&app, "/trace/back/c-1", Some("consumer-token")).await;
    assert_eq!(back["origin_farms"], json!(["farm-a"]));
    let (_, forward) = get(&app, "/trace/forward/farm-a", Some("auditor-token")).await;
    assert_eq!(forward["affected_batches"], json!(["c-1", "m-1"]));
    assert_eq!(forward["holders"]["c-1"], "shop-1");
    let (_, tokens) = get(&app, "/tokens/farm-a", Some("farm-a-token")).await;
    assert_eq!(tokens["balance"], 1);
}

#[tokio::test]
async fn qr_verification_statuses() {
    let (app, net) = app();
    seed(&app).await;
    let payload = net.read().unwrap().encode_qr("m-1").unwrap().to_string();
    let (status, body) = get(&app, &format!("/qr/{payload}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["batch_id"], "m-1");

    let mut tampered = payload.clone();
    let last = tampered.pop().unwrap();
    tampered.push(if last == '0' { '1' } else { '0' });
    let (status, body) = get(&app, &format!("/qr/{tampered}"), None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("INVALID")));

    let (status, body) = get(&app, "/qr/garbage", None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("MALFORMED_PAYLOAD")));
}

#[tokio::test]
async fn targeted_offer_through_the_api() {
    let (app, _) = app();
    seed(&app).await;
    let offer = json!({
        "offer_id": "o1",
        "product_id": "m-1",
        "standard_price": 100,
        "targeted": [{"buyer": "shop-1", "price": 80}],
        "settlement": "BANK_TRANSFER",
    });
    let (status, body) = post(&app, "/offers", "proc-1-token", offer).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["channel"], "deal-o1");

    let (status, body) = call(&app, Method::POST, "/offers/o1/accept", Some("shop-1-token"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["price"], 80);
    assert_eq!(body["channel"], "deal-o1");

    let (status, body) = call(&app, Method::POST, "/offers/o1/accept", Some("shop-2-token"), None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::CONFLICT, Some("ALREADY_SOLD")));

    let (status, block) = get(&app, "/ledger/deal-o1/blocks/1", Some("shop-1-token")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(block["transactions"][0]["op"], "publish_deal");
    let (status, body) = get(&app, "/ledger/deal-o1/blocks/1", Some("bank-token")).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::FORBIDDEN, Some("NOT_A_MEMBER")));
    assert_eq!(get(&app, "/ledger/deal-o1/blocks/99", Some("shop-1-token")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/ledger/nowhere/blocks/0", Some("shop-1-token")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn recall_from_origin() {
    let (app, _) = app();
    seed(&app).await;
    let request = json!({"origin": "farm-a", "batch_ids": ["m-1"]});
    let (status, _) = post(&app, "/recalls", "farm-a-token", request.clone()).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, body) = post(&app, "/recalls", "auditor-token", request).await;
    assert_eq!((status, body["validity"].as_str()), (StatusCode::OK, Some("VALID")));
    let process = json!({"inputs": ["m-1"], "output_id": "c-1", "process_kind": "cheese"});
    let (status, body) = post(&app, "/process", "proc-1-token", process).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::CONFLICT, Some("INPUT_RECALLED")));
}

#[tokio::test]
async fn client_clock_is_ignored() {
    let (app, _) = app();
    seed(&app).await;
    let (_, body) = post(&app, "/transfers", "proc-1-token", json!({"batch_id": "m-1", "to": "trans-1", "now": 5})).await;
    assert_eq!(body["validity"], "VALID");
    let times: Vec<u64> = body["response"]["custody_history"].as_array().unwrap().iter().map(|c| c["at"].as_u64().unwrap()).collect();
    assert_eq!(times.len(), 3, "{body}");
    assert!(times.iter().all(|&t| t == T0), "{body}");
}

/// Every identity and every mutation: the gateway refuses exactly what the
/// network refuses when called directly with the same identity.
#[tokio::test]
async fn gateway_matches_direct_authorization() {
    let cases: Vec<(&str, &str, Value)> = vec![
        ("/animals", "register_animal", json!({"animal_id": "cow-x", "born_at": "2023-03-01"})),
        ("/batches", "register_batch", json!({"batch_id": "m-x", "source_animals": ["cow-1"], "rfid": "r"})),
        ("/transfers", "transfer_custody", json!({"batch_id": "m-1", "to": "proc-2"})),
        ("/process", "process_batch", json!({"inputs": ["m-1"], "output_id": "c-x", "process_kind": "cheese"})),
    ];
    let identities: Vec<String> = NetworkConfig::demo().identities.iter().filter_map(|i| i.id.clone()).collect();
    for (path, op, body) in &cases {
        for identity in &identities {
            let (app, _) = app();
            seed(&app).await;
            let direct = {
                let mut copy = Network::bootstrap(NetworkConfig::demo(), Storage::Memory).unwrap();
                copy.set_time(T0);
                replay_seed(&mut copy);
                copy.submit_op(identity, op, Doc::try_from(body.clone()).unwrap()).map(|o| o.validity)
            };
            let (status, answer) = post(&app, path, &format!("{identity}-token"), body.clone()).await;
            match direct {
                Ok(validity) => {
                    assert_eq!(status, StatusCode::OK, "{identity} {op}: {answer}");
                    assert_eq!(answer["validity"], validity.as_str());
                }
                Err(e) => assert_eq!(answer["error"], e.code(), "{identity} {op}"),
            }
        }
    }
}

fn replay_seed(net: &mut Network) {
    let steps = [
        ("farm-a", "register_animal", json!({"animal_id": "cow-1", "born_at": "2023-03-01"})),
        ("farm-a", "register_batch", json!({"batch_id": "m-1", "source_animals": ["cow-1"], "rfid": "E2001"})),
        ("farm-a", "transfer_custody", json!({"batch_id": "m-1", "to": "proc-1"})),
    ];
    for (actor, op, args) in steps {
        net.submit_op(actor, op, Doc::try_from(args).unwrap()).unwrap();
    }
}
