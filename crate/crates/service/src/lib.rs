//! HTTP inference over a trained all-cohort model bundle.
//!
//! | method | path | success | errors |
//! |---|---|---|---|
//! | POST | `/v1/sessions` | `{session_id, windows}` | 400 invalid file, 413 too large, 422 unscorable |
//! | GET | `/v1/sessions/{id}/report` | [`SessionReport`] | 404 |
//! | GET | `/v1/sessions/{id}/manifold` | [`ManifoldPayload`] | 404 |
//! | GET | `/v1/model/info` | [`ModelInfo`] | |
//! | GET | `/v1/clusters/enrichment` | [`EnrichmentPayload`] | |
//!
//! Session ids are content hashes, so re-uploading a file is idempotent. The
//! bundle is never written after load.

mod api;
mod predict;

pub use api::{
    router, serve, AppState, EnrichmentPayload, ErrorBody, ManifoldPayload, ManifoldPoint, ModelInfo, ServiceConfig,
    UploadResponse, DEFAULT_MAX_UPLOAD, DEFAULT_PORT,
};
pub use predict::{predict_session, InferenceModel, SessionReport, TimelineEntry, WindowPrediction};
