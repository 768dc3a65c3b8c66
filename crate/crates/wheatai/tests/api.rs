use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use wheatai::jobs::{JobManager, JobStore, ManagerConfig};
use wheatai::pipeline::PipelineId;
use wheatai::synth::{demo_dataset, demo_params, write_demo_dataset};
use wheatai_gateway::{router, AppState, ERROR_CODES};

struct Server {
    app: Router,
    state: Arc<AppState>,
    demo: PathBuf,
    _tmp: tempfile::TempDir,
}

fn server_with(max_upload: usize, workers: usize) -> Server {
    let tmp = tempfile::tempdir().unwrap();
    let demo = tmp.path().join("demo");
    write_demo_dataset(&demo).unwrap();
    let manager = JobManager::start(
        JobStore::open(tmp.path().join("data")).unwrap(),
        ManagerConfig {
            workers,
            per_job_concurrency: 2,
            default_backend: Some(demo.join("fdk").join("preds")),
            image_hook: None,
        },
    )
    .unwrap();
    let state = Arc::new(AppState {
        manager,
        max_upload,
        static_dir: None,
        cors_origin: None,
    });
    Server {
        app: router(Arc::clone(&state)),
        state,
        demo,
        _tmp: tmp,
    }
}

fn server() -> Server {
    server_with(wheatai_gateway::api::DEFAULT_MAX_UPLOAD, 2)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = get(app, uri).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn post_json(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn upload(app: &Router, name: &str, bytes: &[u8]) -> (StatusCode, Value) {
    let boundary = "XyZzY";
    let mut body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{name}\"\r\nContent-Type: application/octet-stream\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let req = Request::post("/api/v1/images")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn upload_demo(s: &Server, p: PipelineId) -> Vec<String> {
    let mut ids = Vec::new();
    for scene in demo_dataset(p) {
        let bytes = std::fs::read(s.demo.join(p.as_str()).join("images").join(scene.name())).unwrap();
        let (st, v) = upload(&s.app, scene.name(), &bytes).await;
        assert_eq!(st, StatusCode::OK, "{v}");
        ids.push(v["image_id"].as_str().unwrap().to_owned());
    }
    ids
}

async fn wait_terminal(app: &Router, id: &str) -> Value {
    let start = Instant::now();
    loop {
        let (s, v) = get_json(app, &format!("/api/v1/jobs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        if ["completed", "failed", "cancelled"].contains(&v["state"].as_str().unwrap()) {
            return v;
        }
        assert!(start.elapsed() < Duration::from_secs(60));
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(ERROR_CODES.contains(&code));
    assert!(v["message"].is_string());
}

#[tokio::test]
async fn health_and_pipelines() {
    let s = server();
    let (st, v) = get_json(&s.app, "/api/v1/health").await;
    assert_eq!((st, v), (StatusCode::OK, json!({"status": "ok"})));
    let (st, v) = get_json(&s.app, "/api/v1/pipelines").await;
    assert_eq!(st, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 8);
    let field = list.iter().find(|d| d["pipeline_id"] == "fhb-field").unwrap();
    let pad = field["params"].as_array().unwrap().iter().find(|p| p["name"] == "crop_padding").unwrap();
    assert_eq!(pad["default"], 0.1);
}

#[tokio::test]
async fn uploads_are_idempotent_and_typed() {
    let s = server();
    let img = image::RgbImage::from_pixel(10, 8, image::Rgb([9, 8, 7]));
    let mut jpeg = std::io::Cursor::new(Vec::new());
    img.write_to(&mut jpeg, image::ImageFormat::Jpeg).unwrap();
    let (st, a) = upload(&s.app, "x_1.jpg", jpeg.get_ref()).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(a["media_type"], "image/jpeg");
    let (_, b) = upload(&s.app, "x_1.jpg", jpeg.get_ref()).await;
    assert_eq!(a["image_id"], b["image_id"]);
    let (st, v) = upload(&s.app, "notes.txt", b"just text").await;
    assert_eq!(st, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    assert_error(&v, "unsupported_media_type");
}

#[tokio::test]
async fn oversized_upload_is_413() {
    let s = server_with(1000, 1);
    let (st, v) = upload(&s.app, "big.png", &vec![0u8; 5000]).await;
    assert_eq!(st, StatusCode::PAYLOAD_TOO_LARGE);
    assert_error(&v, "payload_too_large");
}

#[tokio::test]
async fn bulk_job_round_trip() {
    let s = server();
    let ids = upload_demo(&s, PipelineId::Fdk).await;
    let (st, v) = post_json(&s.app, "/api/v1/jobs", &json!({"pipeline_id": "fdk", "image_ids": ids, "mode": "bulk"})).await;
    assert_eq!(st, StatusCode::ACCEPTED, "{v}");
    let id = v["job_id"].as_str().unwrap().to_owned();
    let done = wait_terminal(&s.app, &id).await;
    assert_eq!(done["state"], "completed");
    assert_eq!(done["progress"]["done"], 3);

    let (st, body) = get(&s.app, &format!("/api/v1/jobs/{id}/results.csv")).await;
    assert_eq!(st, StatusCode::OK);
    let on_disk = std::fs::read(s.state.manager.store().job_dir(&id).join("results.csv")).unwrap();
    assert_eq!(body, on_disk);
    let (st, r) = get_json(&s.app, &format!("/api/v1/jobs/{id}/results")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(r["images"].as_array().unwrap().len(), 3);
    let (st, png) = get(&s.app, &format!("/api/v1/jobs/{id}/overlays/{}.png", ids[0])).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(&png[1..4], b"PNG");
    let (st, v) = get_json(&s.app, &format!("/api/v1/jobs/{id}/overlays/ffff.png")).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_image");
}

#[tokio::test]
async fn single_mode_inline() {
    let s = server();
    let ids = upload_demo(&s, PipelineId::Fdk).await;
    let (st, v) = post_json(&s.app, "/api/v1/jobs", &json!({"pipeline_id": "fdk", "image_ids": [ids[0]], "mode": "single"})).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["job"]["state"], "completed");
    let rec = &v["results"]["images"][0]["records"];
    assert_eq!(rec["kind"], "fdk");
    assert_eq!(rec["result"]["total_kernels"], 16);
    let (st, v) = post_json(&s.app, "/api/v1/jobs", &json!({"pipeline_id": "fdk", "image_ids": ids[..2], "mode": "single"})).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "single_mode_one_image");
}

#[tokio::test]
async fn error_codes() {
    let s = server_with(wheatai_gateway::api::DEFAULT_MAX_UPLOAD, 0);
    let (st, v) = get_json(&s.app, "/api/v1/jobs/does-not-exist").await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_job");

    let (st, v) = post_json(&s.app, "/api/v1/jobs", &json!({"pipeline_id": "frost", "image_ids": ["ab"]})).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "unknown_pipeline");

    let (st, v) = post_json(&s.app, "/api/v1/jobs", &json!({"pipeline_id": "fdk", "image_ids": ["abcdef"]})).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_image");

    let (st, v) = post_json(&s.app, "/api/v1/jobs", &json!({"pipeline": "fdk"})).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "invalid_request");

    let ids = upload_demo(&s, PipelineId::KernelMorph).await;
    let (st, v) = post_json(&s.app, "/api/v1/jobs", &json!({"pipeline_id": "kernel-morph", "image_ids": ids})).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "calibration_required");

    let (st, v) = post_json(
        &s.app,
        "/api/v1/jobs",
        &json!({"pipeline_id": "fdk", "image_ids": ids, "params": {"nms_iou": 2.0}}),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "invalid_params");

    // no workers: the job stays queued
    let params = serde_json::to_value(demo_params(PipelineId::KernelMorph)).unwrap();
    let (st, v) = post_json(&s.app, "/api/v1/jobs", &json!({"pipeline_id": "kernel-morph", "image_ids": ids, "params": params})).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    let id = v["job_id"].as_str().unwrap();
    for tail in ["results", "results.csv"] {
        let (st, v) = get_json(&s.app, &format!("/api/v1/jobs/{id}/{tail}")).await;
        assert_eq!(st, StatusCode::CONFLICT);
        assert_error(&v, "job_not_finished");
    }
    let (st, v) = post_json(&s.app, &format!("/api/v1/jobs/{id}/cancel"), &json!({})).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["state"], "cancelled");
    let (st, v) = get_json(&s.app, &format!("/api/v1/jobs/{id}/results")).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_error(&v, "job_not_completed");

    let (st, v) = get_json(&s.app, "/api/v1/nothing").await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_error(&v, "not_found");
}
