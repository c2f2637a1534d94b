//! HTTP ordering service: dataset listing, 2-D projections, thumbnails and
//! subset ordering. All state is loaded at startup and read-only afterwards.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::dataprep::{load_dataset, pca_embed, Dataset};
use crate::error::{Result, VonError};
use crate::metrics::Metric;
use crate::model::{CheckpointInfo, Model};
use crate::points::PointSet;
use crate::runner::{check_checkpoint_metric, solve, MethodSpec, OrderResult, Solver};

/// Largest subset one request may order.
pub const MAX_SUBSET: usize = 500;
/// Wall-clock budget for one ordering.
pub const SOLVE_BUDGET: Duration = Duration::from_secs(30);
pub const MODELS_DIR: &str = "models";

struct DatasetEntry {
    ds: Dataset,
    coords: PointSet,
    projection: OnceLock<Arc<Projection>>,
}

struct ModelEntry {
    model: Model,
    info: CheckpointInfo,
}

pub struct AppState {
    datasets: BTreeMap<String, DatasetEntry>,
    models: BTreeMap<String, ModelEntry>,
    budget: Duration,
}

impl AppState {
    pub fn new(datasets: Vec<(String, Dataset)>, models: Vec<(String, Model, CheckpointInfo)>) -> Result<Self> {
        let mut d = BTreeMap::new();
        for (id, ds) in datasets {
            let coords = ds.coordinates();
            if d.insert(id.clone(), DatasetEntry { ds, coords, projection: OnceLock::new() }).is_some() {
                return Err(VonError::Config(format!("duplicate dataset id `{id}`")));
            }
        }
        let mut m = BTreeMap::new();
        for (id, model, info) in models {
            if m.insert(id.clone(), ModelEntry { model, info }).is_some() {
                return Err(VonError::Config(format!("duplicate model id `{id}`")));
            }
        }
        Ok(Self { datasets: d, models: m, budget: SOLVE_BUDGET })
    }

    pub fn with_budget(mut self, budget: Duration) -> Self {
        self.budget = budget;
        self
    }

    /// Every `*.json` manifest in `dir` is a dataset and every checkpoint in
    /// `dir/models` a model; ids are file stems.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut datasets = Vec::new();
        for path in json_files(dir)? {
            datasets.push((stem(&path), load_dataset(&path)?));
        }
        let mut models = Vec::new();
        let mdir = dir.join(MODELS_DIR);
        if mdir.is_dir() {
            for path in json_files(&mdir)? {
                let (model, info) = Model::load(&path)?;
                models.push((stem(&path), model, info));
            }
        }
        Self::new(datasets, models)
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn json_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .map_err(|e| VonError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub n: usize,
    pub dim: usize,
    pub has_labels: bool,
    pub has_thumbnails: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub id: String,
    pub n: usize,
    pub coordinates: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderRequest {
    pub dataset_id: String,
    pub indices: Vec<i64>,
    pub metric: String,
    pub method: String,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

impl From<VonError> for ApiError {
    fn from(e: VonError) -> Self {
        let status = match e.root() {
            VonError::DegenerateMetric { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            VonError::MetricMismatch { .. } => StatusCode::CONFLICT,
            VonError::Timeout { .. } => StatusCode::GATEWAY_TIMEOUT,
            VonError::Config(_)
            | VonError::UnknownMetric(_)
            | VonError::MissingContext { .. }
            | VonError::Domain(_)
            | VonError::DimensionMismatch { .. }
            | VonError::InvalidPointSet(_)
            | VonError::InvalidOrdering(_)
            | VonError::BruteForceGuard { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}/projection", get(projection))
        .route("/datasets/{id}/thumbnails/{index}", get(thumbnail))
        .route("/order", post(order))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| VonError::io(addr.to_string(), e))?;
    eprintln!("listening on http://{}", listener.local_addr().map_err(|e| VonError::io(addr.to_string(), e))?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| VonError::io(addr.to_string(), e))
}

async fn list_datasets(State(st): State<Shared>) -> Json<Vec<DatasetSummary>> {
    Json(
        st.datasets
            .iter()
            .map(|(id, e)| DatasetSummary {
                id: id.clone(),
                n: e.coords.n(),
                dim: e.coords.dim(),
                has_labels: e.coords.labels().is_some(),
                has_thumbnails: e.ds.manifest.thumbnail_dir.is_some(),
            })
            .collect(),
    )
}

fn dataset<'a>(st: &'a AppState, id: &str) -> std::result::Result<&'a DatasetEntry, ApiError> {
    st.datasets.get(id).ok_or_else(|| not_found(format!("unknown dataset `{id}`")))
}

/// Centered coordinates for `d <= 2`, otherwise the top two principal components.
fn compute_projection(id: &str, coords: &PointSet) -> Result<Projection> {
    let flat = if coords.dim() <= 2 { pca_center(coords) } else { pca_embed(coords, 2)?.coords().to_vec() };
    let w = coords.dim().min(2);
    let coordinates = flat.chunks(w).map(|r| [r[0], if w == 2 { r[1] } else { 0.0 }]).collect();
    Ok(Projection { id: id.to_string(), n: coords.n(), coordinates, labels: coords.labels().map(<[i64]>::to_vec) })
}

fn pca_center(ps: &PointSet) -> Vec<f64> {
    let (n, d) = (ps.n(), ps.dim());
    let means: Vec<f64> = (0..d).map(|j| ps.column(j).iter().sum::<f64>() / n as f64).collect();
    ps.rows().flat_map(|r| r.iter().zip(&means).map(|(v, m)| v - m).collect::<Vec<_>>()).collect()
}

async fn projection(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> std::result::Result<Json<Projection>, ApiError> {
    let e = dataset(&st, &id)?;
    if let Some(p) = e.projection.get() {
        return Ok(Json((**p).clone()));
    }
    let p = Arc::new(compute_projection(&id, &e.coords)?);
    Ok(Json((**e.projection.get_or_init(|| p)).clone()))
}

fn content_type(ext: &str) -> Option<&'static str> {
    Some(match ext.to_ascii_lowercase().as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "svg" => "image/svg+xml",
        _ => return None,
    })
}

async fn thumbnail(State(st): State<Shared>, UrlPath((id, index)): UrlPath<(String, usize)>) -> std::result::Result<Response, ApiError> {
    let e = dataset(&st, &id)?;
    let dir = e.ds.thumbnail_dir().ok_or_else(|| not_found(format!("dataset `{id}` has no thumbnails")))?;
    if index >= e.coords.n() {
        return Err(not_found(format!("index {index} out of range for n = {}", e.coords.n())));
    }
    let entries = fs::read_dir(&dir).map_err(|err| ApiError::from(VonError::io(&dir, err)))?;
    for entry in entries.filter_map(|x| x.ok()) {
        let p = entry.path();
        let (Some(s), Some(ext)) = (p.file_stem().and_then(|s| s.to_str()), p.extension().and_then(|s| s.to_str())) else { continue };
        if s == index.to_string() {
            if let Some(ct) = content_type(ext) {
                let bytes = fs::read(&p).map_err(|err| ApiError::from(VonError::io(&p, err)))?;
                return Ok(([(header::CONTENT_TYPE, ct)], bytes).into_response());
            }
        }
    }
    Err(not_found(format!("no thumbnail for item {index}")))
}

async fn order(State(st): State<Shared>, body: Bytes) -> std::result::Result<Json<OrderResult>, ApiError> {
    let req: OrderRequest = serde_json::from_slice(&body).map_err(|e| bad_request(format!("invalid request: {e}")))?;
    let e = dataset(&st, &req.dataset_id)?;
    let n = e.coords.n();
    if req.indices.is_empty() {
        return Err(bad_request("indices must not be empty"));
    }
    if req.indices.len() > MAX_SUBSET {
        return Err(bad_request(format!("at most {MAX_SUBSET} indices per request, got {}", req.indices.len())));
    }
    let mut seen = vec![false; n];
    let mut indices = Vec::with_capacity(req.indices.len());
    for &i in &req.indices {
        let Some(u) = usize::try_from(i).ok().filter(|&u| u < n) else {
            return Err(bad_request(format!("index {i} out of range for n = {n}")));
        };
        if std::mem::replace(&mut seen[u], true) {
            return Err(bad_request(format!("index {i} repeated")));
        }
        indices.push(u);
    }
    let metric: Metric = req.metric.parse().map_err(|e: VonError| bad_request(e.to_string()))?;
    let method: MethodSpec = req.method.parse().map_err(|e: VonError| bad_request(e.to_string()))?;
    if let MethodSpec::Model(id) = &method {
        let m = st.models.get(id).ok_or_else(|| not_found(format!("unknown model `{id}`")))?;
        check_checkpoint_metric(&m.info, metric)?;
    }
    let budget = st.budget;
    let state = Arc::clone(&st);
    let dataset_id = req.dataset_id.clone();
    let job = tokio::task::spawn_blocking(move || -> Result<OrderResult> {
        let e = &state.datasets[&dataset_id];
        let params = match &method {
            MethodSpec::Model(id) => state.models[id].info.metric_params.clone(),
            MethodSpec::Baseline(_) => Default::default(),
        };
        let inst = e.ds.instance(metric, &params, &e.coords, &indices)?;
        let solver = match &method {
            MethodSpec::Model(id) => Solver::Model(&state.models[id].model),
            MethodSpec::Baseline(m) => Solver::Baseline(*m),
        };
        let mut r = solve(&solver, &inst, metric, 0, Some(Instant::now() + budget))?;
        r.order = r.order.iter().map(|&p| indices[p]).collect();
        Ok(r)
    });
    match tokio::time::timeout(budget + Duration::from_secs(1), job).await {
        Err(_) => Err(ApiError(StatusCode::GATEWAY_TIMEOUT, format!("ordering exceeded {} s", budget.as_secs_f64()))),
        Ok(Err(join)) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, join.to_string())),
        Ok(Ok(r)) => Ok(Json(r?)),
    }
}
