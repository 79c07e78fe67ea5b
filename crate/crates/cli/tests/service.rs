//! HTTP API contract against an in-process router.

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use ckm_cli::service::{router, AppState, InferResponse};
use ckm_core::dataset::{assign_splits, write_dataset, Split};
use ckm_core::inference::ModelPredictor;
use ckm_core::sim::{gen_corpus, SimConfig};
use ckm_core::training::{save_outcome, train, ModelConfig, TrainConfig};
use ckm_core::{AssemblyConfig, BaselineConfig, GridSpec, Scenario};
use ckm_nn::{UNet, UNetConfig};
use http_body_util::BodyExt;
use tower::ServiceExt;

const W: usize = 16;

fn scenarios() -> Vec<Scenario> {
    let config = SimConfig {
        grid: GridSpec { width_cells: W, ..GridSpec::default() },
        maps: 2,
        aps_per_map: 4,
        min_buildings: 2,
        max_buildings: 3,
        ..SimConfig::default()
    };
    gen_corpus(&config, 21).unwrap()
}

fn model() -> ModelPredictor {
    let cfg = UNetConfig { base_width: 4, depth: 2, extra_conv_levels: vec![], in_channels: 4 };
    ModelPredictor::new(UNet::build(cfg, 3).unwrap(), AssemblyConfig::default())
}

fn app_with(scs: Vec<Scenario>, model: ModelPredictor) -> Router {
    let n = scs.len();
    let state = AppState {
        scenarios: assign_splits(n, 1).into_iter().zip(scs).collect(),
        model,
        baselines: BaselineConfig::default(),
        coverage_threshold_db: -90.0,
    };
    router(Arc::new(state))
}

fn app() -> Router {
    app_with(scenarios(), model())
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn lists_scenarios_with_ap_coordinates() {
    let scs = scenarios();
    let (s, body) = call(&app(), "GET", "/api/scenarios", "").await;
    assert_eq!(s, StatusCode::OK);
    let v = json(&body);
    let list = v["scenarios"].as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0]["id"], "env_0000");
    assert_eq!(list[0]["width"], W);
    assert_eq!(list[1]["split"], "val");
    assert_eq!(list[0]["aps"][2]["row"], scs[0].records[2].ap_coord.row);
    assert_eq!(v["model_slots"], 3);
}

#[tokio::test]
async fn existing_gain_as_array_and_png() {
    let scs = scenarios();
    let (s, body) = call(&app(), "GET", "/api/scenarios/env_0001/aps/1/gain", "").await;
    assert_eq!(s, StatusCode::OK);
    let v = json(&body);
    let values: Vec<f64> = serde_json::from_value(v["values_db"].clone()).unwrap();
    assert_eq!(values, scs[1].records[1].gain.to_db());

    let (s, body) = call(&app(), "GET", "/api/scenarios/env_0001/aps/1/gain?format=png", "").await;
    assert_eq!(s, StatusCode::OK);
    let png = base64::engine::general_purpose::STANDARD
        .decode(json(&body)["png_base64"].as_str().unwrap())
        .unwrap();
    assert_eq!(&png[1..4], b"PNG");

    for uri in [
        "/api/scenarios/env_0001/aps/9/gain",
        "/api/scenarios/env_0001/aps/x/gain",
        "/api/scenarios/nope/aps/0/gain",
    ] {
        assert_eq!(call(&app(), "GET", uri, "").await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    let (s, _) = call(&app(), "GET", "/api/scenarios/env_0001/aps/1/gain?format=tiff", "").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn infer_at_existing_ap_returns_full_map() {
    let scs = scenarios();
    let c = scs[0].records[0].ap_coord;
    let body = format!(r#"{{"row": {}, "col": {}, "schemes": ["model"]}}"#, c.row, c.col);
    let (s, bytes) = call(&app(), "POST", "/api/scenarios/env_0000/infer", &body).await;
    assert_eq!(s, StatusCode::OK);
    let r: InferResponse = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(r.results.len(), 1);
    assert_eq!(r.results[0].shape, [1, W, W]);
    assert_eq!(r.results[0].values_db.len(), W * W);
    let st = &r.results[0].stats;
    assert!(st.min_db <= st.mean_db && st.mean_db <= st.max_db);
}

#[tokio::test]
async fn default_schemes_follow_report_order_and_threshold_applies() {
    let scs = scenarios();
    let c = scs[0].records[1].ap_coord;
    let body = format!(r#"{{"row": {}, "col": {}, "threshold_db": 500.0}}"#, c.row, c.col);
    let (s, bytes) = call(&app(), "POST", "/api/scenarios/env_0000/infer", &body).await;
    assert_eq!(s, StatusCode::OK);
    let r: InferResponse = serde_json::from_slice(&bytes).unwrap();
    let names: Vec<&str> = r.results.iter().map(|x| x.scheme.name()).collect();
    assert_eq!(names, ["model", "weighted", "pathloss", "pathloss-los"]);
    assert!(r.results.iter().all(|x| x.stats.coverage_fraction_above_threshold == 0.0));
}

#[tokio::test]
async fn rejects_bad_locations_with_422() {
    let scs = scenarios();
    let blocked = scs[0]
        .obstacles
        .as_ref()
        .unwrap()
        .cells()
        .iter()
        .position(|&b| b)
        .map(|i| (i / W, i % W))
        .unwrap();
    let cases = [
        format!(r#"{{"row": {W}, "col": 0}}"#),
        r#"{"row": -1, "col": 3}"#.to_string(),
        format!(r#"{{"row": {}, "col": {}}}"#, blocked.0, blocked.1),
    ];
    for body in cases {
        let (s, bytes) = call(&app(), "POST", "/api/scenarios/env_0000/infer", &body).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert!(json(&bytes)["error"].is_string());
    }
    let (_, bytes) = call(&app(), "POST", "/api/scenarios/env_0000/infer", r#"{"row": 99, "col": 0}"#).await;
    assert!(json(&bytes)["error"].as_str().unwrap().contains("0..=15"));
}

#[tokio::test]
async fn rejects_malformed_bodies_with_400_and_unknown_ids_with_404() {
    for body in [
        "",
        "{",
        r#"{"row": 1}"#,
        r#"{"row": 1, "col": 2, "schemes": ["radio"]}"#,
        r#"{"row": 1, "col": 2, "extra": true}"#,
        r#"{"row": "a", "col": 2}"#,
        r#"{"row": 1, "col": 2, "schemes": []}"#,
    ] {
        let (s, _) = call(&app(), "POST", "/api/scenarios/env_0000/infer", body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    }
    let (s, _) = call(&app(), "POST", "/api/scenarios/env_7/infer", r#"{"row": 1, "col": 2}"#).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn requests_are_deterministic_and_do_not_mutate_state() {
    let app = app();
    let (_, before) = call(&app, "GET", "/api/scenarios", "").await;
    let body = r#"{"row": 5, "col": 6, "schemes": ["model", "weighted"]}"#;
    let free = scenarios()[1].obstacles.as_ref().unwrap().is_blocked(ckm_core::Coord::new(5, 6));
    let uri = "/api/scenarios/env_0001/infer";
    let expected = if free { StatusCode::UNPROCESSABLE_ENTITY } else { StatusCode::OK };
    let first = call(&app, "POST", uri, body).await;
    assert_eq!(first.0, expected);
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, "POST", uri, body).await })
        })
        .collect();
    for h in handles {
        assert_eq!(h.await.unwrap(), first);
    }
    let (_, after) = call(&app, "GET", "/api/scenarios", "").await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn service_matches_offline_infer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let scs = scenarios();
    write_dataset(&scs, &assign_splits(2, 1), &data).unwrap();
    let ds = ckm_core::read_dataset(&data).unwrap();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 4,
        model: ModelConfig { base_width: 4, depth: Some(2), extra_conv_levels: None },
        ..TrainConfig::default()
    };
    let outcome = train(&config, &ds.split(Split::Train), &ds.split(Split::Val)).unwrap();
    let run = dir.path().join("run");
    save_outcome(&outcome, &run).unwrap();

    let free = ds.scenarios[0].obstacles.as_ref().unwrap().free_cells()[17];
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_ckm"))
        .args(["infer", "--data", p(&data), "--checkpoint", p(&run), "--env", "env_0000"])
        .args(["--at", &format!("{},{}", free.row, free.col), "--out", p(&dir.path().join("inf"))])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let offline: InferResponse = serde_json::from_slice(
        &std::fs::read(dir.path().join(format!("inf/env_0000_r{}_c{}.json", free.row, free.col))).unwrap(),
    )
    .unwrap();

    let model = ckm_core::training::load_predictor(&run.join("model.ckpt")).unwrap();
    let app = app_with(ds.scenarios.clone(), model);
    let body = format!(r#"{{"row": {}, "col": {}}}"#, free.row, free.col);
    let (s, bytes) = call(&app, "POST", "/api/scenarios/env_0000/infer", &body).await;
    assert_eq!(s, StatusCode::OK);
    let online: InferResponse = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(online, offline);
    for scheme in ["model", "weighted", "pathloss", "pathloss-los"] {
        let f = dir.path().join(format!("inf/env_0000_r{}_c{}_{scheme}.png", free.row, free.col));
        assert!(f.is_file(), "{}", f.display());
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
