use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;

use pheno_core::dataio::{parse_session, WindowConfig};
use pheno_core::encoder::EncoderConfig;
use pheno_core::evaluation::{enrichment, EnrichmentMatrix};
use pheno_core::fsutil::atomic_write;
use pheno_core::CoreError;

use crate::predict::{behavior_code, predict_session, InferenceModel, SessionReport};

pub const DEFAULT_MAX_UPLOAD: usize = 64 * 1024 * 1024;
pub const DEFAULT_PORT: u16 = 8080;
/// Hex digits of the SHA-256 content hash used as a session id.
const ID_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    /// Upload size limit in bytes; larger bodies get 413.
    pub max_upload: usize,
    /// Static assets served for every path outside the API.
    pub static_dir: Option<PathBuf>,
    /// When set, uploads are written here and reloaded at startup.
    pub sessions_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_upload: DEFAULT_MAX_UPLOAD,
            static_dir: None,
            sessions_dir: None,
        }
    }
}

/// Structured error body: `{"error": {"status", "code", "message"}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub status: u16,
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }
}

fn code_of(status: StatusCode) -> &'static str {
    match status.as_u16() {
        400 => "invalid_session",
        404 => "not_found",
        413 => "payload_too_large",
        422 => "unprocessable_session",
        _ => "internal",
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            status: self.status.as_u16(),
            code: code_of(self.status).to_string(),
            message: self.message,
        };
        (self.status, Json(serde_json::json!({ "error": body }))).into_response()
    }
}

/// Status of a failure to turn an uploaded session into a report. Parsing
/// and validation failures are the client's file; a valid file the model
/// cannot score is 422.
fn prediction_status(e: &CoreError) -> StatusCode {
    match e {
        CoreError::SessionTooShort { .. } | CoreError::KeypointMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        CoreError::Numerics(_) | CoreError::Checkpoint(_) | CoreError::NonFiniteLoss { .. } => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        _ => StatusCode::BAD_REQUEST,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub checkpoint_hash: String,
    pub encoder: EncoderConfig,
    pub window: WindowConfig,
    pub parameters: usize,
    pub cohorts: Vec<String>,
    pub behavior_classes: Vec<String>,
    pub genotype_classes: Vec<String>,
    pub clusters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub session_id: String,
    pub windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub start_frame: usize,
    pub x: f32,
    pub y: f32,
    pub cluster: usize,
    pub behavior: String,
    pub genotype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPayload {
    pub id: String,
    pub session_id: String,
    pub behavior_classes: Vec<String>,
    pub genotype_classes: Vec<String>,
    pub points: Vec<ManifoldPoint>,
}

/// Predicted genotype composition of predicted behaviors and of clusters,
/// over every uploaded session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentPayload {
    pub sessions: usize,
    pub windows: usize,
    pub by_behavior: EnrichmentMatrix,
    pub by_cluster: EnrichmentMatrix,
}

/// Shared, read-only model plus the guarded session registry.
pub struct AppState {
    model: InferenceModel,
    info: ModelInfo,
    config: ServiceConfig,
    registry: RwLock<BTreeMap<String, Arc<SessionReport>>>,
}

impl AppState {
    pub fn new(model: InferenceModel, config: ServiceConfig) -> pheno_core::Result<Self> {
        let info = ModelInfo {
            checkpoint_hash: model.hash.clone(),
            encoder: model.bundle.encoder.config,
            window: model.bundle.meta.window,
            parameters: model.bundle.encoder.num_params(),
            cohorts: model.bundle.meta.cohorts.clone(),
            behavior_classes: model.behavior_classes().to_vec(),
            genotype_classes: model.genotype_classes().to_vec(),
            clusters: model.k(),
        };
        let state = Self {
            model,
            info,
            config,
            registry: RwLock::new(BTreeMap::new()),
        };
        if let Some(dir) = state.config.sessions_dir.clone() {
            state.reload(&dir)?;
        }
        Ok(state)
    }

    pub fn model(&self) -> &InferenceModel {
        &self.model
    }

    pub fn session_count(&self) -> usize {
        self.registry.read().expect("registry lock").len()
    }

    fn reload(&self, dir: &Path) -> pheno_core::Result<()> {
        if !dir.exists() {
            std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
            return Ok(());
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| CoreError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pose"))
            .collect();
        files.sort();
        for f in files {
            let bytes = std::fs::read(&f).map_err(|e| CoreError::io(&f, e))?;
            match self.ingest(&bytes) {
                Ok(_) => {}
                Err(e) => log::warn!("skipping stored session {}: {}", f.display(), e.message),
            }
        }
        log::info!("reloaded {} stored sessions", self.session_count());
        Ok(())
    }

    /// Parses, scores and registers one upload. Re-uploading identical
    /// bytes returns the existing entry.
    pub fn ingest(&self, body: &[u8]) -> Result<Arc<SessionReport>, ApiError> {
        let id = hex::encode(Sha256::digest(body))[..ID_LEN].to_string();
        if let Some(r) = self.registry.read().expect("registry lock").get(&id) {
            return Ok(r.clone());
        }
        let text = std::str::from_utf8(body)
            .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "session file is not valid UTF-8"))?;
        let session = parse_session(text, Path::new("upload"))
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        let report = predict_session(&self.model, &session, &id)
            .map_err(|e| ApiError::new(prediction_status(&e), e.to_string()))?;
        if let Some(dir) = &self.config.sessions_dir {
            atomic_write(&dir.join(format!("{id}.pose")), body)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        }
        let report = Arc::new(report);
        let mut reg = self.registry.write().expect("registry lock");
        // A concurrent identical upload may have won; both computed the same
        // report, keep the first.
        Ok(reg.entry(id).or_insert(report).clone())
    }

    fn report(&self, id: &str) -> Result<Arc<SessionReport>, ApiError> {
        self.registry
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session '{id}'")))
    }

    pub fn enrichment(&self) -> pheno_core::Result<EnrichmentPayload> {
        let reg = self.registry.read().expect("registry lock");
        let classes = self.model.genotype_classes().to_vec();
        let (mut rows_b, mut rows_c, mut cols) = (Vec::new(), Vec::new(), Vec::new());
        for r in reg.values() {
            for w in &r.windows {
                rows_b.push(behavior_code(&w.behavior_label).unwrap_or(0));
                rows_c.push(w.cluster);
                cols.push(classes.iter().position(|c| c == &w.genotype_label).unwrap_or(0));
            }
        }
        let behaviors = self.model.behavior_classes().to_vec();
        let clusters = (0..self.model.k()).map(|c| format!("cluster-{c}")).collect();
        Ok(EnrichmentPayload {
            sessions: reg.len(),
            windows: cols.len(),
            by_behavior: enrichment(&rows_b, &cols, behaviors, classes.clone())?,
            by_cluster: enrichment(&rows_c, &cols, clusters, classes)?,
        })
    }
}

type Shared = Arc<AppState>;

async fn upload(State(st): State<Shared>, body: Result<Bytes, BytesRejection>) -> Result<Json<UploadResponse>, ApiError> {
    let body = body.map_err(|r| ApiError::new(r.status(), r.body_text()))?;
    let report = tokio::task::spawn_blocking(move || st.ingest(&body))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(UploadResponse {
        session_id: report.id.clone(),
        windows: report.windows.len(),
    }))
}

async fn session_report(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionReport>, ApiError> {
    Ok(Json(st.report(&id)?.as_ref().clone()))
}

async fn manifold(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<ManifoldPayload>, ApiError> {
    let r = st.report(&id)?;
    Ok(Json(ManifoldPayload {
        id: r.id.clone(),
        session_id: r.session_id.clone(),
        behavior_classes: r.behavior_classes.clone(),
        genotype_classes: r.genotype_classes.clone(),
        points: r
            .windows
            .iter()
            .map(|w| ManifoldPoint {
                start_frame: w.start_frame,
                x: w.x,
                y: w.y,
                cluster: w.cluster,
                behavior: w.behavior_label.clone(),
                genotype: w.genotype_label.clone(),
            })
            .collect(),
    }))
}

async fn model_info(State(st): State<Shared>) -> Json<ModelInfo> {
    Json(st.info.clone())
}

async fn cluster_enrichment(State(st): State<Shared>) -> Result<Json<EnrichmentPayload>, ApiError> {
    st.enrichment()
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn no_route() -> ApiError {
    ApiError::not_found("no such route")
}

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/v1/sessions", post(upload))
        .route("/v1/sessions/{id}/report", get(session_report))
        .route("/v1/sessions/{id}/manifold", get(manifold))
        .route("/v1/model/info", get(model_info))
        .route("/v1/clusters/enrichment", get(cluster_enrichment))
        .layer(DefaultBodyLimit::max(state.config.max_upload));
    let app = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).not_found_service(get(no_route).post(no_route))),
        None => api.fallback(no_route),
    };
    app.with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: Shared, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
