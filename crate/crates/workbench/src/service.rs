//! JSON-over-HTTP sessions exposing deformation, energy, tracing and vertex
//! editing to an annotation client. Each session is guarded by its own lock;
//! sessions never share state.

use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::hash::BuildHasher;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use defgrid_core::energy::LossWeights;
use defgrid_core::features::FeatureMap;
use defgrid_core::grid::{DeformedGrid, GridFile, Point, TopologyVariant};
use defgrid_core::mask::Mask;
use defgrid_core::optimizer::{apply_external_offsets, deform, FlipGuard, OptimizerConfig, TraceEntry};
use defgrid_core::pipeline::trace_seeds;
use defgrid_core::tracer::{rasterize_polygon, segment_energy, EnergyMap, PolygonExport, TracedPolygon, DEFAULT_SEED_COUNT, DEFAULT_SNAP_K};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use crate::commands::{energy_map, uniform_grid, EnergySource, Quads, DEFAULT_EDGE_THRESHOLD};
use crate::error::WorkbenchError;
use crate::io::{decode_image, decode_labels, encode_mask_png};

/// Trace entries returned by a deform call.
pub const TRACE_TAIL: usize = 20;

/// Request bodies carry base64 images of up to 2048×2048.
const BODY_LIMIT: usize = 64 << 20;

struct StoredPolygon {
    polygon: TracedPolygon,
    /// Grid revision the polygon was traced on.
    grid_revision: u64,
}

struct Session {
    features: FeatureMap,
    grid: DeformedGrid,
    max_offset: f64,
    energy: Option<(EnergySource, EnergyMap)>,
    polygons: Vec<StoredPolygon>,
    revision: u64,
    grid_revision: u64,
}

impl Session {
    fn bump(&mut self) {
        self.revision += 1;
    }

    fn grid_changed(&mut self) {
        self.bump();
        self.grid_revision = self.revision;
    }

    /// Polygons re-derived from their vertex indices on the current grid.
    fn export_polygons(&self) -> Result<Vec<(PolygonExport, Mask)>, ApiError> {
        self.polygons
            .iter()
            .map(|stored| {
                if stored.grid_revision == self.grid_revision {
                    return Ok((stored.polygon.export(), stored.polygon.mask.clone()));
                }
                let indices = &stored.polygon.vertex_indices;
                let vertices: Vec<Point> = indices.iter().map(|&v| self.grid.position(v)).collect();
                let energy = match &self.energy {
                    Some((_, map)) => (0..vertices.len())
                        .map(|i| segment_energy(map, vertices[i], vertices[(i + 1) % vertices.len()]))
                        .sum(),
                    None => stored.polygon.energy,
                };
                let mask = rasterize_polygon(&vertices, self.grid.width(), self.grid.height()).map_err(ApiError::from)?;
                Ok((PolygonExport { vertices, vertex_indices: indices.clone(), energy }, mask))
            })
            .collect()
    }
}

#[derive(Default)]
struct Registry {
    sessions: std::sync::Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    created: AtomicU64,
    hasher: RandomState,
}

impl Registry {
    fn new_id(&self) -> String {
        let n = self.created.fetch_add(1, Ordering::Relaxed);
        format!("{:016x}{:08x}", self.hasher.hash_one(n), n)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }
}

/// Shared service state.
#[derive(Clone, Default)]
pub struct AppState {
    registry: Arc<Registry>,
}

impl AppState {
    pub fn session_count(&self) -> usize {
        self.registry.sessions.lock().expect("session registry lock").len()
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Invalid(String),
    Conflict(String),
    Internal(String),
}

impl From<WorkbenchError> for ApiError {
    fn from(e: WorkbenchError) -> Self {
        if e.exit_code() == 2 {
            ApiError::Internal(e.to_string())
        } else {
            ApiError::Invalid(e.to_string())
        }
    }
}

impl From<defgrid_core::Error> for ApiError {
    fn from(e: defgrid_core::Error) -> Self {
        WorkbenchError::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Invalid(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn decode_base64(field: &str, text: &str) -> Result<Vec<u8>, ApiError> {
    BASE64.decode(text).map_err(|e| ApiError::Invalid(format!("{field}: invalid base64: {e}")))
}

/// Run CPU-bound work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", axum::routing::delete(delete_session))
        .route("/session/{id}/deform", post(deform_session))
        .route("/session/{id}/energy", post(set_energy))
        .route("/session/{id}/trace", post(trace))
        .route("/session/{id}/vertex", post(move_vertex))
        .route("/session/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::default())).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    /// PNG, PPM or PGM bytes, base64.
    pub image: String,
    #[serde(default = "default_quads")]
    pub quads: String,
    #[serde(default)]
    pub topology: TopologyVariant,
}

fn default_quads() -> String {
    "20x20".into()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GridResponse {
    pub id: String,
    pub revision: u64,
    pub grid: GridFile,
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateRequest>) -> ApiResult<GridResponse> {
    let quads: Quads = req.quads.parse()?;
    let bytes = decode_base64("image", &req.image)?;
    let (features, grid) = blocking(move || {
        let features = decode_image(&bytes)?;
        let grid = uniform_grid(&features, quads, req.topology)?;
        Ok((features, grid))
    })
    .await?;
    let id = state.registry.new_id();
    let response = GridResponse { id: id.clone(), revision: 0, grid: grid.to_file() };
    let session = Session {
        features,
        grid,
        max_offset: OptimizerConfig::default().max_offset,
        energy: None,
        polygons: Vec::new(),
        revision: 0,
        grid_revision: 0,
    };
    state.registry.sessions.lock().expect("session registry lock").insert(id.clone(), Arc::new(Mutex::new(session)));
    log::info!("created session {id}");
    Ok(Json(response))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match state.registry.sessions.lock().expect("session registry lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::NotFound(format!("no session {id}"))),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformRequest {
    pub iters: Option<usize>,
    pub weights: Option<LossWeights>,
    pub seed: Option<u64>,
    pub step_size: Option<f64>,
    pub step_decay: Option<f64>,
    pub max_offset: Option<f64>,
    pub init_jitter: Option<f64>,
    pub flip_guard: Option<FlipGuard>,
}

impl DeformRequest {
    pub fn config(&self) -> OptimizerConfig {
        let d = OptimizerConfig::default();
        OptimizerConfig {
            iterations: self.iters.unwrap_or(d.iterations),
            step_size: self.step_size.or(d.step_size),
            step_decay: self.step_decay.unwrap_or(d.step_decay),
            max_offset: self.max_offset.unwrap_or(d.max_offset),
            flip_guard: self.flip_guard.unwrap_or(d.flip_guard),
            seed: self.seed.unwrap_or(d.seed),
            init_jitter: self.init_jitter.unwrap_or(d.init_jitter),
            area_floor: d.area_floor,
            weights: self.weights.unwrap_or(d.weights),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DeformResponse {
    pub revision: u64,
    pub grid: GridFile,
    pub trace_tail: Vec<TraceEntry>,
}

async fn deform_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<DeformRequest>,
) -> ApiResult<DeformResponse> {
    let session = state.registry.get(&id)?.lock_owned().await;
    let config = req.config();
    blocking(move || {
        let mut session = session;
        let trace = deform(&session.grid, &session.features, &config)?;
        session.grid = trace.grid;
        session.max_offset = config.max_offset;
        session.grid_changed();
        let skip = trace.entries.len().saturating_sub(TRACE_TAIL);
        Ok(Json(DeformResponse {
            revision: session.revision,
            grid: session.grid.to_file(),
            trace_tail: trace.entries[skip..].to_vec(),
        }))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyRequest {
    /// Object mask image (non-zero = foreground), base64.
    pub mask: Option<String>,
    /// Boundary strokes, each a polyline of pixel coordinates.
    pub scribbles: Option<Vec<Vec<Point>>>,
    /// Use the image's colour discontinuities above this threshold.
    pub edges: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AckResponse {
    pub ok: bool,
    pub revision: u64,
}

async fn set_energy(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<EnergyRequest>,
) -> ApiResult<AckResponse> {
    let session = state.registry.get(&id)?.lock_owned().await;
    let source = match (req.mask, req.scribbles, req.edges) {
        (Some(mask), None, None) => {
            let labels = decode_labels(&decode_base64("mask", &mask)?)?;
            EnergySource::Mask(labels.to_mask()?)
        }
        (None, Some(strokes), None) => EnergySource::Strokes(strokes),
        (None, None, Some(threshold)) => EnergySource::FeatureEdges { threshold },
        (None, None, None) => EnergySource::FeatureEdges { threshold: DEFAULT_EDGE_THRESHOLD },
        _ => return Err(ApiError::Invalid("give one of mask, scribbles or edges".into())),
    };
    blocking(move || {
        let mut session = session;
        let map = energy_map(&session.features, &source)?;
        session.energy = Some((source, map));
        session.bump();
        Ok(Json(AckResponse { ok: true, revision: session.revision }))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceRequestBody {
    pub seeds: Option<Vec<Point>>,
    pub snap_k: Option<usize>,
    pub seed_count: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceResponse {
    pub revision: u64,
    pub polygon: Vec<Point>,
    pub vertex_indices: Vec<usize>,
    pub energy: f64,
}

async fn trace(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<TraceRequestBody>,
) -> ApiResult<TraceResponse> {
    let session = state.registry.get(&id)?.lock_owned().await;
    blocking(move || {
        let mut session = session;
        let Some((source, map)) = &session.energy else {
            return Err(ApiError::Invalid("no energy source; post a mask or scribbles first".into()));
        };
        let seeds = match (req.seeds, source) {
            (Some(seeds), _) => seeds,
            (None, EnergySource::Mask(mask)) => {
                defgrid_core::tracer::sample_seed_points(mask, req.seed_count.unwrap_or(DEFAULT_SEED_COUNT))?
            }
            (None, _) => return Err(ApiError::Invalid("seeds are required unless the energy came from a mask".into())),
        };
        let polygon = trace_seeds(&session.grid, map, &seeds, req.snap_k.unwrap_or(DEFAULT_SNAP_K))?;
        let export = polygon.export();
        let grid_revision = session.grid_revision;
        session.polygons.push(StoredPolygon { polygon, grid_revision });
        session.bump();
        Ok(Json(TraceResponse {
            revision: session.revision,
            polygon: export.vertices,
            vertex_indices: export.vertex_indices,
            energy: export.energy,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexRequest {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    /// When present, must equal the session revision.
    #[serde(default)]
    pub revision: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VertexResponse {
    pub revision: u64,
    pub grid: GridFile,
    pub flipped: bool,
}

async fn move_vertex(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<VertexRequest>,
) -> ApiResult<VertexResponse> {
    let mut session = state.registry.get(&id)?.lock_owned().await;
    if let Some(expected) = req.revision {
        if expected != session.revision {
            return Err(ApiError::Conflict(format!(
                "revision {expected} is stale; the session is at {}",
                session.revision
            )));
        }
    }
    if req.index >= session.grid.vertex_count() {
        return Err(ApiError::Invalid(format!(
            "vertex {} out of range (grid has {})",
            req.index,
            session.grid.vertex_count()
        )));
    }
    let target = Point::new(req.x, req.y);
    if !target.is_finite() {
        return Err(ApiError::Invalid("vertex position must be finite".into()));
    }
    let mut offsets = session.grid.offsets();
    offsets[req.index] = target - session.grid.base_positions()[req.index];
    let flipped = match apply_external_offsets(&session.grid, &offsets, session.max_offset) {
        Ok(grid) => {
            session.grid = grid;
            session.grid_changed();
            false
        }
        Err(defgrid_core::Error::FlippedCells { cells }) => {
            log::debug!("rejected move of vertex {}: would flip {cells:?}", req.index);
            true
        }
        Err(e) => return Err(e.into()),
    };
    Ok(Json(VertexResponse { revision: session.revision, grid: session.grid.to_file(), flipped }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportResponse {
    pub revision: u64,
    pub grid: GridFile,
    pub polygons: Vec<PolygonExport>,
    /// Union of the polygon masks as a base64 PNG; absent without polygons.
    pub mask: Option<String>,
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<ExportResponse> {
    let session = state.registry.get(&id)?.lock_owned().await;
    blocking(move || {
        let exported = session.export_polygons()?;
        let mask = exported.iter().map(|(_, m)| m).cloned().reduce(|mut acc, m| {
            for (i, &b) in m.data().iter().enumerate() {
                if b {
                    acc.set(i % acc.width(), i / acc.width(), true);
                }
            }
            acc
        });
        Ok(Json(ExportResponse {
            revision: session.revision,
            grid: session.grid.to_file(),
            polygons: exported.into_iter().map(|(p, _)| p).collect(),
            mask: mask.map(|m| BASE64.encode(encode_mask_png(&m))),
        }))
    })
    .await
}
