use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;

use pheno_core::dataio::{fit_norm_stats, format_session, prepare_windows, BehaviorLabel, PoseSession};
use pheno_core::encoder::{ClassifierHead, EncoderConfig, EncoderModel, HeadTask, ModelBundle};
use pheno_core::evaluation::{kmeans, Projection2d};
use pheno_core::synthgen::{generate_cohort, CohortConfig, GenotypeSpec};
use pheno_service::{router, AppState, InferenceModel, ServiceConfig, SessionReport};

const GENOTYPES: [&str; 7] = [
    "cntnap2:WT",
    "cntnap2:HET",
    "cntnap2:HOM",
    "shank3:WT",
    "shank3:HOM",
    "fmr1:WT",
    "fmr1:HOM",
];

fn sessions() -> Vec<PoseSession> {
    let mut cfg = CohortConfig::new("cntnap2", vec![GenotypeSpec::new("WT", 2), GenotypeSpec::new("HOM", 2)], 5);
    cfg.session_frames = 160;
    generate_cohort(&cfg).unwrap()
}

/// Untrained but complete bundle: every field inference reads is present.
fn model() -> InferenceModel {
    let s = sessions();
    let enc_cfg = EncoderConfig {
        d_model: 16,
        n_heads: 2,
        ffn_width: 32,
        ..EncoderConfig::default()
    };
    let encoder = EncoderModel::init(enc_cfg, 3).unwrap();
    let mut bundle = ModelBundle::new(encoder);
    bundle.meta.window.length = enc_cfg.window_len;
    bundle.meta.cohorts = vec!["cntnap2".into(), "shank3".into(), "fmr1".into()];
    let windows = prepare_windows(&s, &bundle.meta.window);
    let norm = fit_norm_stats(&windows).unwrap();
    let data: Vec<Vec<f32>> = windows.iter().map(|w| pheno_core::dataio::apply_norm(&w.data, &norm)).collect();
    let refs: Vec<&[f32]> = data.iter().map(|d| d.as_slice()).collect();
    let z = bundle.encoder.embed(&refs, 64).unwrap();
    bundle.behavior_head = Some(ClassifierHead::init(HeadTask::Behavior, BehaviorLabel::names(), 16, 4).unwrap());
    bundle.genotype_head = Some(
        ClassifierHead::init(HeadTask::UnifiedGenotype, GENOTYPES.iter().map(|g| g.to_string()).collect(), 16, 5)
            .unwrap(),
    );
    bundle.projection = Some(Projection2d::fit(&z).unwrap());
    bundle.centroids = Some(kmeans(&z, 3, 6, 100).unwrap().centroids_tensor());
    bundle.norm = Some(norm);
    let hash = bundle.hash().unwrap();
    InferenceModel::new(bundle, hash).unwrap()
}

fn app(config: ServiceConfig) -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::new(model(), config).unwrap());
    (state.clone(), router(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let json = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, json)
}

fn upload_body(i: usize) -> Vec<u8> {
    format_session(&sessions()[i]).into_bytes()
}

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("")
}

#[tokio::test]
async fn upload_then_report_has_normalized_distributions() {
    let (_, app) = app(ServiceConfig::default());
    let (status, up) = call(&app, "POST", "/v1/sessions", upload_body(0)).await;
    assert_eq!(status, StatusCode::OK, "{up}");
    let id = up["session_id"].as_str().unwrap().to_string();
    assert_eq!(id.len(), 32);

    let (status, rep) = call(&app, "GET", &format!("/v1/sessions/{id}/report"), vec![]).await;
    assert_eq!(status, StatusCode::OK);
    let report: SessionReport = serde_json::from_value(rep).unwrap();
    assert_eq!(report.windows.len(), up["windows"].as_u64().unwrap() as usize);
    assert_eq!(report.genotype_classes.len(), 7);
    for w in &report.windows {
        assert!((w.behavior.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((w.genotype.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(w.cluster < 3);
    }
    assert!((report.mean_behavior.iter().sum::<f64>() - 1.0).abs() < 1e-6);

    let (status, man) = call(&app, "GET", &format!("/v1/sessions/{id}/manifold"), vec![]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(man["points"].as_array().unwrap().len(), report.windows.len());
}

#[tokio::test]
async fn identical_uploads_share_an_id_and_report() {
    let (state, app) = app(ServiceConfig::default());
    let (_, a) = call(&app, "POST", "/v1/sessions", upload_body(1)).await;
    let (_, b) = call(&app, "POST", "/v1/sessions", upload_body(1)).await;
    assert_eq!(a, b);
    assert_eq!(state.session_count(), 1);
    let (_, c) = call(&app, "POST", "/v1/sessions", upload_body(2)).await;
    assert_ne!(a["session_id"], c["session_id"]);
    assert_eq!(state.session_count(), 2);
}

#[tokio::test]
async fn error_statuses() {
    let (_, app) = app(ServiceConfig {
        max_upload: 4096,
        ..ServiceConfig::default()
    });
    let (s, v) = call(&app, "GET", "/v1/sessions/deadbeef/report", vec![]).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "not_found"));
    let (s, v) = call(&app, "GET", "/v1/nothing/here", vec![]).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "not_found"));
    let (s, v) = call(&app, "POST", "/v1/sessions", b"not a pose file".to_vec()).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "invalid_session"));
    let (s, _) = call(&app, "POST", "/v1/sessions", vec![0xff, 0xfe, 0x00]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call(&app, "POST", "/v1/sessions", vec![b'x'; 4097]).await;
    assert_eq!((s, error_code(&v)), (StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large"));
    assert_eq!(v["error"]["status"], 413);
}

#[tokio::test]
async fn short_session_is_unprocessable() {
    let (_, app) = app(ServiceConfig::default());
    let mut s = sessions().remove(0);
    s.frame_labels.truncate(20);
    s.coords.truncate(20 * s.channels());
    let (status, v) = call(&app, "POST", "/v1/sessions", format_session(&s).into_bytes()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(error_code(&v), "unprocessable_session");
}

#[tokio::test]
async fn model_info_and_enrichment() {
    let (state, app) = app(ServiceConfig::default());
    let (s, info) = call(&app, "GET", "/v1/model/info", vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(info["genotype_classes"].as_array().unwrap().len(), 7);
    assert_eq!(info["checkpoint_hash"], state.model().hash.as_str());

    let (_, empty) = call(&app, "GET", "/v1/clusters/enrichment", vec![]).await;
    assert_eq!(empty["windows"], 0);
    for i in 0..2 {
        call(&app, "POST", "/v1/sessions", upload_body(i)).await;
    }
    let (s, e) = call(&app, "GET", "/v1/clusters/enrichment", vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(e["sessions"], 2);
    let rows = e["by_cluster"]["fractions"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let empty_rows = e["by_cluster"]["empty_rows"].as_array().unwrap().len();
    let full = rows
        .iter()
        .filter(|r| (r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum::<f64>() - 1.0).abs() < 1e-9)
        .count();
    assert_eq!(full + empty_rows, 3);
}

#[tokio::test]
async fn model_is_untouched_by_traffic() {
    let (state, app) = app(ServiceConfig::default());
    let before = state.model().checksum().unwrap();
    for i in 0..40 {
        match i % 4 {
            0 => drop(call(&app, "POST", "/v1/sessions", upload_body(i % 4)).await),
            1 => drop(call(&app, "GET", "/v1/model/info", vec![]).await),
            2 => drop(call(&app, "GET", "/v1/clusters/enrichment", vec![]).await),
            _ => drop(call(&app, "POST", "/v1/sessions", b"garbage".to_vec()).await),
        }
    }
    assert_eq!(state.model().checksum().unwrap(), before);
    assert_eq!(before, state.model().hash);
}

#[tokio::test]
async fn stored_sessions_reload_and_static_files_are_served() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("sessions");
    let www = dir.path().join("www");
    std::fs::create_dir_all(&www).unwrap();
    std::fs::write(www.join("index.html"), "<html>ok</html>").unwrap();
    let config = ServiceConfig {
        sessions_dir: Some(store.clone()),
        static_dir: Some(www),
        ..ServiceConfig::default()
    };
    let (_, first) = app(config.clone());
    let (_, up) = call(&first, "POST", "/v1/sessions", upload_body(0)).await;
    let id = up["session_id"].as_str().unwrap().to_string();
    assert!(store.join(format!("{id}.pose")).exists());

    let (state, second) = app(config);
    assert_eq!(state.session_count(), 1);
    let (s, _) = call(&second, "GET", &format!("/v1/sessions/{id}/report"), vec![]).await;
    assert_eq!(s, StatusCode::OK);

    let req = Request::builder().uri("/index.html").body(Body::empty()).unwrap();
    let resp = second.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(&body[..], b"<html>ok</html>");
    let (s, v) = call(&second, "GET", "/v1/unknown", vec![]).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "not_found"));
}
