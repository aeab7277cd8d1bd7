mod common;

use std::fs;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use common::*;
use defgrid_core::grid::{DeformedGrid, GridFile, TopologyVariant};
use defgrid_core::tracer::PolygonExport;
use defgrid_workbench::io::{encode_pgm8, MAX_SIDE};
use defgrid_workbench::service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let request = match body {
        Some(b) => request.body(Body::from(b.to_string())).unwrap(),
        None => request.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, image: &[u8], quads: &str) -> (String, Value) {
    let (status, body) = call(app, "POST", "/session", Some(json!({ "image": BASE64.encode(image), "quads": quads }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    (body["id"].as_str().unwrap().to_string(), body)
}

fn grid_of(v: &Value) -> GridFile {
    serde_json::from_value(v.clone()).unwrap()
}

#[tokio::test]
async fn fresh_session_exports_uniform_grid_and_no_polygons() {
    let app = router(AppState::default());
    let (id, created) = create(&app, &regions_png(), "20x20").await;
    assert_eq!(created["grid"]["vertices"].as_array().unwrap().len(), 441);
    let (status, export) = call(&app, "GET", &format!("/session/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    let uniform = DeformedGrid::uniform(20, 20, SIZE, SIZE, TopologyVariant::Alternating).unwrap().to_file();
    assert_eq!(grid_of(&export["grid"]), uniform);
    assert_eq!(export["polygons"], json!([]));
    assert_eq!(export["mask"], Value::Null);
    assert_eq!(export["revision"], 0);
}

#[tokio::test]
async fn safe_vertex_move_bumps_revision() {
    let app = router(AppState::default());
    let (id, _) = create(&app, &regions_png(), "4x4").await;
    // Interior vertex (1, 1) sits at (10, 10); pitch 10, bound 4.5 px.
    let (status, body) =
        call(&app, "POST", &format!("/session/{id}/vertex"), Some(json!({ "index": 6, "x": 11.5, "y": 9.0, "revision": 0 })))
            .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["flipped"], false);
    assert_eq!(body["revision"], 1);
    assert_eq!(grid_of(&body["grid"]).vertices[6], defgrid_core::grid::Point::new(11.5, 9.0));
}

#[tokio::test]
async fn flipping_move_is_rejected_without_change() {
    let app = router(AppState::default());
    let (id, created) = create(&app, &regions_png(), "3x3").await;
    let before = grid_of(&created["grid"]);
    // Pitch 40/3. Vertices 5, 6 and 10 each stay within their own bound, but
    // the third move squeezes the cell between them past zero area.
    let uri = format!("/session/{id}/vertex");
    let b = 13.333333333333334 * 0.45 * 0.99;
    let (_, first) = call(&app, "POST", &uri, Some(json!({ "index": 5, "x": before.vertices[5].x + b, "y": before.vertices[5].y - b }))).await;
    assert_eq!(first["flipped"], false);
    let (_, second) = call(&app, "POST", &uri, Some(json!({ "index": 6, "x": before.vertices[6].x - b, "y": before.vertices[6].y + b }))).await;
    assert_eq!((second["flipped"].clone(), second["revision"].clone()), (json!(false), json!(2)));
    let (status, third) =
        call(&app, "POST", &uri, Some(json!({ "index": 10, "x": before.vertices[10].x + b, "y": before.vertices[10].y - b })))
            .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(third["flipped"], true);
    assert_eq!(third["revision"], 2);
    assert_eq!(grid_of(&third["grid"]), grid_of(&second["grid"]));
    let (_, export) = call(&app, "GET", &format!("/session/{id}/export"), None).await;
    assert_eq!(grid_of(&export["grid"]), grid_of(&second["grid"]));
    assert_eq!(export["revision"], 2);
    DeformedGrid::from_file(&grid_of(&export["grid"])).unwrap().validate().unwrap();
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = router(AppState::default());
    let (status, body) = call(&app, "GET", "/session/nope/export", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));

    let huge = encode_pgm8(MAX_SIDE + 1, 2, &vec![0; (MAX_SIDE + 1) * 2]);
    let (status, body) = call(&app, "POST", "/session", Some(json!({ "image": BASE64.encode(huge) }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("2048"));

    let (status, _) = call(&app, "POST", "/session", Some(json!({ "image": "!!" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (id, _) = create(&app, &object_png(), "4x4").await;
    let (status, body) = call(&app, "POST", &format!("/session/{id}/trace"), Some(json!({ "seeds": [[5, 5], [30, 5], [20, 30]] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("energy"));

    let (status, _) = call(&app, "POST", &format!("/session/{id}/vertex"), Some(json!({ "index": 999, "x": 1, "y": 1 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) =
        call(&app, "POST", &format!("/session/{id}/vertex"), Some(json!({ "index": 6, "x": 10, "y": 10, "revision": 7 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = call(&app, "DELETE", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, "DELETE", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_are_independent() {
    let state = AppState::default();
    let app = router(state.clone());
    let (a, _) = create(&app, &regions_png(), "4x4").await;
    let (b, _) = create(&app, &regions_png(), "4x4").await;
    assert_ne!(a, b);
    assert_eq!(state.session_count(), 2);
    let (_, moved) = call(&app, "POST", &format!("/session/{a}/vertex"), Some(json!({ "index": 6, "x": 12, "y": 10 }))).await;
    assert_eq!(moved["flipped"], false);
    let (_, other) = call(&app, "GET", &format!("/session/{b}/export"), None).await;
    assert_eq!(other["revision"], 0);
    assert_eq!(grid_of(&other["grid"]).vertices[6], defgrid_core::grid::Point::new(10.0, 10.0));
}

#[tokio::test]
async fn deform_and_scribbles_drive_tracing() {
    let app = router(AppState::default());
    let (id, _) = create(&app, &object_png(), "8x8").await;
    let (status, deformed) = call(&app, "POST", &format!("/session/{id}/deform"), Some(json!({ "iters": 30 }))).await;
    assert_eq!(status, StatusCode::OK, "{deformed}");
    let tail = deformed["trace_tail"].as_array().unwrap();
    assert_eq!(tail.len(), 20);
    assert_eq!(tail.last().unwrap()["iteration"], 30);
    assert_eq!(deformed["revision"], 1);
    let strokes = json!([[[9.3, 7.8], [31.6, 10.2], [28.4, 31.7], [11.2, 27.5], [9.3, 7.8]]]);
    let (status, ack) = call(&app, "POST", &format!("/session/{id}/energy"), Some(json!({ "scribbles": strokes }))).await;
    assert_eq!((status, ack["ok"].clone(), ack["revision"].clone()), (StatusCode::OK, json!(true), json!(2)));
    let (status, traced) = call(
        &app,
        "POST",
        &format!("/session/{id}/trace"),
        Some(json!({ "seeds": [[9.3, 7.8], [31.6, 10.2], [28.4, 31.7], [11.2, 27.5]], "snap_k": 6 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{traced}");
    assert!(traced["polygon"].as_array().unwrap().len() >= 4);
    assert_eq!(traced["revision"], 3);
    // Moving a polygon vertex moves the exported polygon with it.
    let v = traced["vertex_indices"][0].as_u64().unwrap() as usize;
    let p = &traced["polygon"][0];
    let target = [p[0].as_f64().unwrap() + 0.3, p[1].as_f64().unwrap()];
    let (_, moved) = call(&app, "POST", &format!("/session/{id}/vertex"), Some(json!({ "index": v, "x": target[0], "y": target[1] }))).await;
    assert_eq!(moved["flipped"], false);
    let (_, export) = call(&app, "GET", &format!("/session/{id}/export"), None).await;
    let polygon: PolygonExport = serde_json::from_value(export["polygons"][0].clone()).unwrap();
    assert_eq!(polygon.vertices[0], defgrid_core::grid::Point::new(target[0], target[1]));
    assert!(export["mask"].is_string());
}

/// The same fixture through the CLI and through a scripted session gives
/// byte-identical polygon JSON and mask PNG.
#[tokio::test]
async fn service_replays_cli_trace_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path());
    let out = defgrid(
        &[
            "trace", "--image", "object.png", "--mask", "object_mask.png", "--seeds", "seeds.json", "--quads", "8x8",
            "--iters", "40", "--snap-k", "4", "--out", "t",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cli_polygon = fs::read_to_string(dir.path().join("t/polygon.json")).unwrap();
    let cli_mask = fs::read(dir.path().join("t/mask.png")).unwrap();

    let app = router(AppState::default());
    let (id, _) = create(&app, &object_png(), "8x8").await;
    let (status, _) = call(&app, "POST", &format!("/session/{id}/deform"), Some(json!({ "iters": 40 }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) =
        call(&app, "POST", &format!("/session/{id}/energy"), Some(json!({ "mask": BASE64.encode(object_mask_png()) }))).await;
    assert_eq!(status, StatusCode::OK);
    let seeds: Value = serde_json::from_str(&seeds_json()).unwrap();
    let (status, _) = call(&app, "POST", &format!("/session/{id}/trace"), Some(json!({ "seeds": seeds, "snap_k": 4 }))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, export) = call(&app, "GET", &format!("/session/{id}/export"), None).await;

    let polygon: PolygonExport = serde_json::from_value(export["polygons"][0].clone()).unwrap();
    assert_eq!(polygon.to_json(), cli_polygon);
    assert_eq!(BASE64.decode(export["mask"].as_str().unwrap()).unwrap(), cli_mask);
    let cli_grid = fs::read_to_string(dir.path().join("t/grid.json")).unwrap();
    assert_eq!(grid_of(&export["grid"]).to_json(), cli_grid);
}
