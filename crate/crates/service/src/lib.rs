//! HTTP service behind the annotation UI.
//!
//! Serves frame listings and live threshold previews, stores manual
//! thresholds, trains the category model and returns predictions. Response
//! maps are computed on first use and cached per `(frame, config hash)`.
//!
//! | method | path | body / query | result |
//! |---|---|---|---|
//! | GET | `/api/frames` | | `[{frame_id, category, split, annotated}]` |
//! | GET | `/api/frames/{id}/stats` | | `{frame_id, width, height, average_intensity, min_response, max_response, config_hash}` |
//! | GET | `/api/frames/{id}/preview` | `?t=` | PNG overlay, `X-Peak-Count` header |
//! | GET | `/api/frames/{id}/foreground` | `?t=` | `{width, height, count_true, bits}` (row-major, MSB-first, base64) |
//! | POST | `/api/frames/{id}/annotation` | `{threshold}` | 204 |
//! | POST | `/api/train` | `{category}` | `{category, final_rmse, n_records}` |
//! | GET | `/api/frames/{id}/prediction` | | `{threshold, count, centroids}` |
//!
//! Errors are JSON `{"error": "..."}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use ntd_core::datastore::{AnnotationRecord, AnnotationStore, DatasetManifest, Split};
use ntd_core::eval::training_records;
use ntd_core::neural::{mlp_train, ModelRegistry, TrainConfig};
use ntd_core::overlay::{render_overlay, OverlayStyle};
use ntd_core::pipeline::{
    analyze_response, apply_threshold, average_intensity, count_peaks, enhance, PipelineConfig,
    ResponseMap,
};
use ntd_core::raster::{encode_png, load_image, GrayImage};
use ntd_core::Error as CoreError;

/// Everything the service needs at startup.
#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub manifest: PathBuf,
    pub annotations: PathBuf,
    pub models: PathBuf,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub ui_dir: Option<PathBuf>,
}

struct CachedFrame {
    image: GrayImage,
    response: ResponseMap,
    average_intensity: f64,
}

type CacheSlot = Arc<OnceLock<Result<Arc<CachedFrame>, String>>>;

/// Session state shared by all handlers. The manifest and pipeline config are
/// fixed for the life of the process; annotations and models live on disk.
pub struct AppState {
    manifest: DatasetManifest,
    config: PipelineConfig,
    config_hash: String,
    train_cfg: TrainConfig,
    store: AnnotationStore,
    registry: ModelRegistry,
    overlay: OverlayStyle,
    cache: Mutex<HashMap<(String, String), CacheSlot>>,
    /// Serializes annotation writes and training.
    writer: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(cfg: &ServiceConfig) -> ntd_core::Result<Self> {
        cfg.pipeline.validate()?;
        cfg.train.validate()?;
        let manifest = DatasetManifest::load(&cfg.manifest)?;
        let store = AnnotationStore::open(&cfg.annotations);
        store.records()?;
        Ok(AppState {
            config_hash: cfg.pipeline.config_hash(),
            config: cfg.pipeline.clone(),
            train_cfg: cfg.train.clone(),
            store,
            registry: ModelRegistry::open(&cfg.models),
            overlay: OverlayStyle {
                intensity: 1.0,
                marker_radius: (cfg.pipeline.max_track_radius.round() as usize).max(1),
            },
            cache: Mutex::new(HashMap::new()),
            writer: tokio::sync::Mutex::new(()),
            manifest,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn slot(&self, frame_id: &str) -> CacheSlot {
        let key = (frame_id.to_string(), self.config_hash.clone());
        self.cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_default()
            .clone()
    }
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError(status, msg.into())
    }

    fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, msg)
    }

    fn internal(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, msg)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::UnknownFrame(_) => StatusCode::NOT_FOUND,
            CoreError::NoModel(_) => StatusCode::CONFLICT,
            CoreError::TooFewRecords { .. } | CoreError::Degenerate(_) | CoreError::Invalid { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn require_frame(state: &AppState, id: &str) -> ApiResult<()> {
    match state.manifest.find(id) {
        Some(_) => Ok(()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown frame '{id}'"))),
    }
}

/// Cached frame and response map, computing them off the async runtime on
/// first use.
async fn frame_data(state: &Arc<AppState>, id: &str) -> ApiResult<Arc<CachedFrame>> {
    require_frame(state, id)?;
    let slot = state.slot(id);
    if let Some(done) = slot.get() {
        return done.clone().map_err(ApiError::internal);
    }
    let st = state.clone();
    let id = id.to_string();
    tokio::task::spawn_blocking(move || {
        slot.get_or_init(|| {
            let entry = st.manifest.find(&id).expect("checked above");
            let image = load_image(st.manifest.image_path(entry)).map_err(|e| e.to_string())?;
            let response = enhance(&image, &st.config).map_err(|e| e.to_string())?;
            Ok(Arc::new(CachedFrame {
                average_intensity: average_intensity(&response),
                image,
                response,
            }))
        })
        .clone()
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(ApiError::internal)
}

fn parse_threshold(q: &HashMap<String, String>) -> ApiResult<f64> {
    let raw = q
        .get("t")
        .ok_or_else(|| ApiError::bad_request("missing query parameter 't'"))?;
    match raw.parse::<f64>() {
        Ok(t) if t.is_finite() => Ok(t),
        _ => Err(ApiError::bad_request(format!("bad threshold '{raw}'"))),
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct FrameListItem {
    pub frame_id: String,
    pub category: String,
    pub split: Split,
    pub annotated: bool,
}

async fn list_frames(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<FrameListItem>>> {
    let records = state.store.records()?;
    let mut items: Vec<FrameListItem> = state
        .manifest
        .frames
        .iter()
        .map(|f| FrameListItem {
            frame_id: f.frame_id.clone(),
            category: state.manifest.category.clone(),
            split: f.split,
            annotated: records
                .iter()
                .any(|r| r.frame_id == f.frame_id && r.config_hash == state.config_hash),
        })
        .collect();
    items.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    Ok(Json(items))
}

async fn frame_stats(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let data = frame_data(&state, &id).await?;
    let (w, h) = data.image.dims();
    Ok(Json(json!({
        "frame_id": id,
        "width": w,
        "height": h,
        "average_intensity": data.average_intensity,
        "min_response": data.response.image().min(),
        "max_response": data.response.max(),
        "config_hash": state.config_hash,
    })))
}

async fn preview(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    require_frame(&state, &id)?;
    let t = parse_threshold(&q)?;
    let data = frame_data(&state, &id).await?;
    let st = state.clone();
    let (count, png) = tokio::task::spawn_blocking(move || -> ntd_core::Result<(usize, Vec<u8>)> {
        let report = count_peaks(&apply_threshold(&data.response, t), &st.config, &data.response)?;
        let overlay = render_overlay(&data.image, &report, &st.overlay);
        Ok((report.count, encode_png(&overlay)?))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let mut resp = png.into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert("x-peak-count", HeaderValue::from(count));
    Ok(resp)
}

async fn foreground(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<serde_json::Value>> {
    require_frame(&state, &id)?;
    let t = parse_threshold(&q)?;
    let data = frame_data(&state, &id).await?;
    let bin = apply_threshold(&data.response, t);
    let (w, h) = bin.dims();
    Ok(Json(json!({
        "width": w,
        "height": h,
        "count_true": bin.count_true(),
        "bits": base64::engine::general_purpose::STANDARD.encode(bin.pack()),
    })))
}

#[derive(Deserialize)]
struct AnnotationBody {
    threshold: f64,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("bad request body: {e}")))
}

async fn annotate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<StatusCode> {
    require_frame(&state, &id)?;
    let body: AnnotationBody = parse_body(&body)?;
    if !body.threshold.is_finite() {
        return Err(ApiError::bad_request("threshold must be finite"));
    }
    let split = state.manifest.find(&id).expect("checked").split;
    if split != Split::Train {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("frame '{id}' is in the {} split; only training frames can be annotated", split.as_str()),
        ));
    }
    let data = frame_data(&state, &id).await?;
    let _guard = state.writer.lock().await;
    let rec = AnnotationRecord::now(&id, data.average_intensity, body.threshold, &state.config_hash);
    state.store.record(&state.manifest, rec)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct TrainBody {
    category: String,
}

async fn train(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let body: TrainBody = parse_body(&body)?;
    if body.category != state.manifest.category {
        return Err(ApiError::bad_request(format!(
            "category '{}' is not served here (manifest category is '{}')",
            body.category, state.manifest.category
        )));
    }
    let _guard = state.writer.lock().await;
    let st = state.clone();
    let (rmse, n) = tokio::task::spawn_blocking(move || -> ntd_core::Result<(f64, usize)> {
        let annotations = st.store.load(&st.manifest)?;
        let records = training_records(&annotations, &st.config_hash);
        let outcome = mlp_train(&st.manifest.category, &records, &st.train_cfg)?;
        st.registry.save(&outcome.model)?;
        Ok((outcome.final_rmse, records.len()))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(json!({
        "category": body.category,
        "final_rmse": rmse,
        "n_records": n,
    })))
}

async fn prediction(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    require_frame(&state, &id)?;
    let model = state.registry.load(&state.manifest.category)?;
    let data = frame_data(&state, &id).await?;
    let analysis = analyze_response(data.response.clone(), &state.config, &model)?;
    Ok(Json(json!({
        "frame_id": id,
        "threshold": analysis.threshold,
        "count": analysis.report.count,
        "centroids": analysis.report.centroids(),
    })))
}

pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/frames", get(list_frames))
        .route("/api/frames/{id}/stats", get(frame_stats))
        .route("/api/frames/{id}/preview", get(preview))
        .route("/api/frames/{id}/foreground", get(foreground))
        .route("/api/frames/{id}/annotation", post(annotate))
        .route("/api/frames/{id}/prediction", get(prediction))
        .route("/api/train", post(train))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process is stopped. `on_bound` receives
/// the actual address (useful with port 0).
pub async fn serve(
    cfg: ServiceConfig,
    addr: SocketAddr,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let state = Arc::new(AppState::new(&cfg)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state, cfg.ui_dir.clone())).await?;
    Ok(())
}
