use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use scanquery::engine::{Engine, QuerySource, QuerySpec, WeightPaths};
use scanquery::eval::{synth_world, SynthParams};
use scanquery::inference::{he_initialized, small_decoder_spec, small_encoder_spec, small_similarity_spec, NetworkRole};
use scanquery::scan::{rasterize, scan_to_line, AngularWindow, LaserScan, ScanRecord};
use scanquery_service::{router, AppState, SCHEMA_VERSION};

fn weights(dir: &Path) -> WeightPaths {
    let paths = WeightPaths {
        encoder: Some(dir.join("encoder.l2vw")),
        decoder: Some(dir.join("decoder.l2vw")),
        similarity: Some(dir.join("similarity.l2vw")),
    };
    he_initialized(NetworkRole::Encoder, &small_encoder_spec(64), 1).unwrap().save(paths.encoder.as_ref().unwrap()).unwrap();
    he_initialized(NetworkRole::Decoder, &small_decoder_spec(64), 2).unwrap().save(paths.decoder.as_ref().unwrap()).unwrap();
    he_initialized(NetworkRole::Similarity, &small_similarity_spec(), 3).unwrap().save(paths.similarity.as_ref().unwrap()).unwrap();
    paths
}

fn scans(n: usize) -> Vec<LaserScan> {
    let params = SynthParams { episodes: 4, scans_per_episode: n.div_ceil(4), ..SynthParams::default() };
    synth_world(&params, 9).scans.into_iter().take(n).collect()
}

struct Fixture {
    _dir: tempfile::TempDir,
    app: Router,
    store: std::path::PathBuf,
    weights: WeightPaths,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(dir.path());
    let store = dir.path().join("store");
    let app = router(AppState::new(Engine::open(&store, &w).unwrap()));
    Fixture { _dir: dir, app, store, weights: w }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<(&str, String)>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some((ct, b)) => {
            req = req.header("content-type", ct);
            Body::from(b)
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body.map(|v| ("application/json", v.to_string()))).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn ingest(app: &Router, scans: &[LaserScan]) -> Value {
    let records: Vec<ScanRecord> = scans.iter().map(ScanRecord::from).collect();
    let (s, v) = call_json(app, "POST", "/api/scans", Some(json!({ "scans": records }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap()
}

#[tokio::test]
async fn ingest_returns_ids_in_an_envelope() {
    let f = fixture();
    let v = ingest(&f.app, &scans(2)).await;
    assert_eq!(v["schema_version"], SCHEMA_VERSION);
    assert_eq!(v["data"]["ids"], json!([0, 1]));

    let lines: String = scans(3).iter().map(|s| scan_to_line(s) + "\n").collect();
    let (s, b) = call(&f.app, "POST", "/api/scans", Some(("application/x-ndjson", lines))).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["data"]["ids"], json!([2, 3, 4]));

    let (_, v) = call_json(&f.app, "GET", "/api/health", None).await;
    assert_eq!(v["data"]["records"], 5);
    assert_eq!(v["data"]["index"], Value::Null);
}

#[tokio::test]
async fn status_codes_follow_the_error_kind() {
    let f = fixture();
    ingest(&f.app, &scans(4)).await;
    let (s, v) = call_json(&f.app, "POST", "/api/query", Some(json!({ "scan_id": 0, "k": 2 }))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::CONFLICT, "index_missing"));

    let (s, _) = call_json(&f.app, "POST", "/api/index/build", Some(json!({ "epsilon": 1.0 }))).await;
    assert_eq!(s, StatusCode::OK);

    let (s, v) = call_json(&f.app, "POST", "/api/query", Some(json!({ "scan_id": 40, "k": 2 }))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "unknown_id"));

    let window = json!({ "start": 3.0, "span": 0.1 });
    let (s, v) = call_json(&f.app, "POST", "/api/query", Some(json!({ "scan_id": 0, "k": 2, "window": window }))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::UNPROCESSABLE_ENTITY, "invalid_window"));

    let (s, b) = call(&f.app, "POST", "/api/query", Some(("application/json", "{not json".into()))).await;
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "malformed_payload"));

    let (s, v) = call_json(&f.app, "POST", "/api/query", Some(json!({ "scan_id": 0, "k": 0 }))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "invalid_request"));

    let (s, v) = call_json(&f.app, "GET", "/api/scans/99/bitmap.png", None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "unknown_id"));

    ingest(&f.app, &scans(1)).await;
    let (s, v) = call_json(&f.app, "POST", "/api/query", Some(json!({ "scan_id": 0, "k": 2 }))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::CONFLICT, "index_stale"));
}

#[tokio::test]
async fn large_k_returns_every_record_and_a_trace() {
    let f = fixture();
    ingest(&f.app, &scans(6)).await;
    call_json(&f.app, "POST", "/api/index/build", Some(json!({ "auto": true, "samples": 4, "directions": 2 }))).await;
    let (s, v) = call_json(&f.app, "POST", "/api/query", Some(json!({ "scan_id": 2, "k": 50 }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["data"]["results"].as_array().unwrap().len(), 6);
    // too few records for a residual curve
    let qid = v["data"]["qid"].as_str().unwrap();
    let (_, t) = call_json(&f.app, "GET", &format!("/api/query/{qid}/trace"), None).await;
    assert_eq!(t["data"]["steps"].as_array().unwrap().len(), 6);
    assert_eq!(t["data"]["nard"], json!([]));

    let (_, v) = call_json(&f.app, "POST", "/api/query", Some(json!({ "scan_id": 2, "k": 3 }))).await;
    let qid = v["data"]["qid"].as_str().unwrap();
    let (_, t) = call_json(&f.app, "GET", &format!("/api/query/{qid}/trace"), None).await;
    let nard = t["data"]["nard"].as_array().unwrap();
    assert_eq!(nard.len(), 4);
    assert_eq!(nard.last().unwrap()["value"], 0.0);

    let (s, v) = call_json(&f.app, "GET", "/api/query/q999/trace", None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "unknown_query"));
}

#[tokio::test]
async fn responses_match_direct_engine_calls() {
    let f = fixture();
    let corpus = scans(12);
    ingest(&f.app, &corpus).await;
    call_json(&f.app, "POST", "/api/index/build", Some(json!({ "epsilon": 2.5 }))).await;
    let window = AngularWindow::new(-0.8, 1.2).unwrap();
    let payload = json!({
        "scan": ScanRecord::from(&corpus[5]),
        "window": { "start": -0.8, "span": 1.2 },
        "k": 4,
        "t": 2,
        "seed": 17,
    });
    let (s, v) = call_json(&f.app, "POST", "/api/query", Some(payload)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let api_hits = v["data"]["results"].clone();

    drop(f.app);
    let engine = Engine::open(&f.store, &f.weights).unwrap();
    let spec = QuerySpec { source: QuerySource::Scan(corpus[5].clone()), window: Some(window), k: 4, t: Some(2), seed: 17 };
    let direct = engine.query(&spec).unwrap();
    assert_eq!(api_hits, serde_json::to_value(&direct.hits).unwrap());
}

#[tokio::test]
async fn bitmap_decodes_to_the_raster_grid() {
    let f = fixture();
    let corpus = scans(2);
    ingest(&f.app, &corpus).await;
    let (s, png_bytes) = call(&f.app, "GET", "/api/scans/1/bitmap.png", None).await;
    assert_eq!(s, StatusCode::OK);
    let decoder = png::Decoder::new(std::io::Cursor::new(png_bytes));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!((info.width, info.height), (64, 64));
    assert_eq!(info.color_type, png::ColorType::Grayscale);
    let engine_cfg = Engine::open(tempfile::tempdir().unwrap().path(), &f.weights).unwrap().raster_config();
    let want = rasterize(&corpus[1], &engine_cfg).unwrap();
    let got: Vec<u8> = buf[..64 * 64].iter().map(|&p| u8::from(p == 255)).collect();
    assert!(buf[..64 * 64].iter().all(|&p| p == 0 || p == 255));
    assert_eq!(got, want.cells());

    let (s, v) = call_json(&f.app, "GET", "/api/scans/1", None).await;
    assert_eq!(s, StatusCode::OK);
    let rec: ScanRecord = serde_json::from_value(v["data"].clone()).unwrap();
    assert_eq!(LaserScan::try_from(rec).unwrap(), corpus[1]);
}
