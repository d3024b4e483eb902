use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::body::Body;
use axum::http::Request;
use serde_json::{json, Value};
use tower::ServiceExt;

use scanquery::engine::{Engine, WeightPaths};
use scanquery::eval::{synth_world, SynthParams};
use scanquery::inference::{he_initialized, small_decoder_spec, small_encoder_spec, small_similarity_spec, NetworkRole};
use scanquery::scan::{write_scans, ScanRecord};
use scanquery_service::{router, AppState};

struct Workspace {
    dir: tempfile::TempDir,
    weights: WeightPaths,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let weights = WeightPaths {
            encoder: Some(dir.path().join("encoder.l2vw")),
            decoder: Some(dir.path().join("decoder.l2vw")),
            similarity: Some(dir.path().join("similarity.l2vw")),
        };
        he_initialized(NetworkRole::Encoder, &small_encoder_spec(64), 11).unwrap().save(weights.encoder.as_ref().unwrap()).unwrap();
        he_initialized(NetworkRole::Decoder, &small_decoder_spec(64), 12).unwrap().save(weights.decoder.as_ref().unwrap()).unwrap();
        he_initialized(NetworkRole::Similarity, &small_similarity_spec(), 13).unwrap().save(weights.similarity.as_ref().unwrap()).unwrap();
        Self { dir, weights }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn store(&self) -> PathBuf {
        self.path("store")
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_scanquery"));
        cmd.current_dir(self.dir.path());
        cmd.arg("--store").arg(self.store());
        cmd.arg("--encoder").arg(self.weights.encoder.as_ref().unwrap());
        cmd.arg("--decoder").arg(self.weights.decoder.as_ref().unwrap());
        cmd.arg("--similarity").arg(self.weights.similarity.as_ref().unwrap());
        cmd.args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn ingest_synthetic(&self, scans: &[scanquery::scan::LaserScan]) {
        let file = self.path("scans.jsonl");
        write_scans(std::fs::File::create(&file).unwrap(), scans).unwrap();
        self.ok(&["ingest", file.to_str().unwrap()]);
    }
}

fn corpus(episodes: usize, per: usize) -> Vec<scanquery::scan::LaserScan> {
    let p = SynthParams { episodes, scans_per_episode: per, ..SynthParams::default() };
    synth_world(&p, 5).scans
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rank,id,score,timestamp_us,deployment_id,seq"));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn query_before_index_fails_then_succeeds_after_auto_index() {
    let ws = Workspace::new();
    ws.ingest_synthetic(&corpus(2, 4));
    let out = ws.run(&["query", "--scan-id", "0", "--k", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("index missing"));

    ws.ok(&["index", "--auto", "--samples", "4", "--directions", "2"]);
    let rows = csv_rows(&ws.ok(&["query", "--scan-id", "0", "--k", "2"]));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "1");
}

#[test]
fn k_larger_than_the_store_returns_every_record() {
    let ws = Workspace::new();
    ws.ingest_synthetic(&corpus(1, 3));
    ws.ok(&["index", "--epsilon", "1.0"]);
    let out = ws.path("hits.csv");
    ws.ok(&["query", "--scan-id", "1", "--k", "10", "--out", out.to_str().unwrap()]);
    let rows = csv_rows(&std::fs::read_to_string(out).unwrap());
    assert_eq!(rows.len(), 3);
    let mut ids: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    ids.sort_unstable();
    assert_eq!(ids, ["0", "1", "2"]);
}

#[test]
fn nard_reports_are_byte_identical_for_a_seed() {
    let ws = Workspace::new();
    let args = |out: &Path| {
        vec![
            "experiment".to_string(),
            "nard".into(),
            "--records".into(),
            "400".into(),
            "--queries".into(),
            "20".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.to_str().unwrap().to_string(),
        ]
    };
    for name in ["a", "b"] {
        let a = args(&ws.path(name).join("nard"));
        ws.ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    for suffix in ["nard.jsonl", "nard.summary.txt", "nard.curves.csv"] {
        let a = std::fs::read(ws.path("a").join(suffix)).unwrap();
        let b = std::fs::read(ws.path("b").join(suffix)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{suffix}");
    }
}

#[tokio::test]
async fn windowed_query_matches_the_http_api() {
    let ws = Workspace::new();
    let scans = corpus(3, 4);
    ws.ingest_synthetic(&scans);
    ws.ok(&["index", "--epsilon", "2.0"]);

    let query_file = ws.path("query.jsonl");
    write_scans(std::fs::File::create(&query_file).unwrap(), &scans[6..7]).unwrap();
    let cli_rows = csv_rows(&ws.ok(&[
        "query",
        "--scan-file",
        query_file.to_str().unwrap(),
        "--window",
        "-0.7",
        "1.3",
        "--k",
        "4",
        "--t",
        "6",
        "--seed",
        "3",
    ]));

    let app = router(AppState::new(Engine::open(ws.store(), &ws.weights).unwrap()));
    let body = json!({
        "scan": ScanRecord::from(&scans[6]),
        "window": { "start": -0.7, "span": 1.3 },
        "k": 4,
        "t": 6,
        "seed": 3,
    });
    let req = Request::post("/api/query")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    let api = v["data"]["results"].as_array().unwrap();

    assert_eq!(cli_rows.len(), api.len());
    for (row, hit) in cli_rows.iter().zip(api) {
        assert_eq!(row[1].parse::<u64>().unwrap(), hit["id"].as_u64().unwrap());
        assert_eq!(row[2].parse::<f64>().unwrap(), hit["score"].as_f64().unwrap());
        assert_eq!(row[3].parse::<u64>().unwrap(), hit["timestamp_us"].as_u64().unwrap());
        assert_eq!(row[4], hit["deployment_id"].as_str().unwrap());
        assert_eq!(row[5].parse::<u64>().unwrap(), hit["seq"].as_u64().unwrap());
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["query", "--k", "3"]).status.code(), Some(2));
    assert_eq!(ws.run(&["index", "--epsilon", "1", "--auto"]).status.code(), Some(2));
    assert_eq!(ws.run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn invalid_window_is_an_engine_error() {
    let ws = Workspace::new();
    ws.ingest_synthetic(&corpus(1, 2));
    ws.ok(&["index", "--epsilon", "1.0"]);
    let out = ws.run(&["query", "--scan-id", "0", "--window", "3.0", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid window"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let ws = Workspace::new();
    ws.ingest_synthetic(&corpus(1, 5));
    ws.ok(&["index", "--epsilon", "1.0"]);
    let cfg = ws.path("scanquery.toml");
    std::fs::write(&cfg, "[query]\nk = 2\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(csv_rows(&ws.ok(&["--config", cfg, "query", "--scan-id", "0"])).len(), 2);
    assert_eq!(csv_rows(&ws.ok(&["--config", cfg, "query", "--scan-id", "0", "--k", "4"])).len(), 4);
}

#[test]
fn init_weights_writes_loadable_files() {
    let ws = Workspace::new();
    let dir = ws.path("fresh");
    ws.ok(&["init-weights", "--out-dir", dir.to_str().unwrap(), "--side", "64", "--seed", "1"]);
    let paths = WeightPaths {
        encoder: Some(dir.join("encoder.l2vw")),
        decoder: Some(dir.join("decoder.l2vw")),
        similarity: Some(dir.join("similarity.l2vw")),
    };
    let engine = Engine::open(ws.path("other-store"), &paths).unwrap();
    assert_eq!(engine.raster_config().side_px, 64);
    let out = ws.run(&["init-weights", "--out-dir", dir.to_str().unwrap(), "--side", "50"]);
    assert_eq!(out.status.code(), Some(1));
}
