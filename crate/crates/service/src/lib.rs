//! HTTP JSON API over a loaded model artifact.
//!
//! | method | path          | body / response                                              |
//! |--------|---------------|--------------------------------------------------------------|
//! | POST   | `/predict`    | `{feature: number, ...}` → `{label, probability, confidence, warnings}` |
//! | GET    | `/schema`     | selected features with kind and observed raw-unit range      |
//! | GET    | `/importance` | permutation importance, descending, computed once at startup |
//! | GET    | `/health`     | `{status, model_version, uptime_seconds}`                    |
//!
//! Until the artifact has loaded, `/predict`, `/schema` and `/importance`
//! answer 503 and `/health` reports `"loading"`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use riskml::artifact::{checksum_of, ModelArtifact};
use riskml::metrics::{permutation_importance, Metric};
use riskml::{FeatureSchema, Matrix};

pub const IMPORTANCE_SEED: u64 = 7;
pub const IMPORTANCE_REPEATS: usize = 5;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Origins allowed by CORS; `*` allows any.
    pub allow_origins: Vec<String>,
    /// Holdout rows used for the importance estimate.
    pub importance_rows: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            allow_origins: Vec::new(),
            importance_rows: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub label: String,
    pub probability: f64,
    pub confidence: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub model: String,
    pub model_version: String,
    pub features: Vec<FeatureSchema>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_version: Option<String>,
    pub uptime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

pub struct LoadedModel {
    pub artifact: ModelArtifact,
    pub version: String,
    pub importance: Vec<ImportanceEntry>,
    importance_json: Bytes,
    schema_json: Bytes,
}

impl LoadedModel {
    /// `version` is the artifact's checksum prefix.
    pub fn new(
        artifact: ModelArtifact,
        checksum: &str,
        cfg: &ServiceConfig,
    ) -> riskml::Result<Self> {
        let version = checksum.chars().take(12).collect::<String>();
        let importance = compute_importance(&artifact, cfg.importance_rows)?;
        let importance_json = Bytes::from(serde_json::to_vec(&importance).expect("plain data"));
        let schema = SchemaResponse {
            model: artifact.meta.model.clone(),
            model_version: version.clone(),
            features: artifact.schema.clone(),
        };
        let schema_json = Bytes::from(serde_json::to_vec(&schema).expect("plain data"));
        Ok(LoadedModel {
            artifact,
            version,
            importance,
            importance_json,
            schema_json,
        })
    }

    pub fn from_path(path: &std::path::Path, cfg: &ServiceConfig) -> riskml::Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|_| riskml::Error::MissingFile(path.to_path_buf()))?;
        let artifact = ModelArtifact::from_bytes(&bytes)?;
        let checksum = checksum_of(&bytes).unwrap_or_default();
        Self::new(artifact, &checksum, cfg)
    }

    /// Orders request values per the artifact and flags out-of-range ones.
    pub fn parse_request(
        &self,
        body: &Map<String, Value>,
    ) -> Result<(Vec<f64>, Vec<String>), ApiError> {
        let features = self.artifact.features();
        if let Some(unknown) = body.keys().find(|k| !features.contains(k)) {
            return Err(ApiError::field(
                format!("unknown feature `{unknown}`"),
                unknown,
            ));
        }
        let mut row = Vec::with_capacity(features.len());
        let mut warnings = Vec::new();
        for (name, schema) in features.iter().zip(&self.artifact.schema) {
            let value = match body.get(name) {
                None => return Err(ApiError::field(format!("missing feature `{name}`"), name)),
                Some(v) => v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| {
                    ApiError::field(format!("feature `{name}` must be a finite number"), name)
                })?,
            };
            if value < schema.observed_min || value > schema.observed_max {
                warnings.push(format!(
                    "{name}={value} is outside the observed range [{}, {}]",
                    schema.observed_min, schema.observed_max
                ));
            }
            row.push(value);
        }
        Ok((row, warnings))
    }

    pub fn predict(&self, raw: &[f64], warnings: Vec<String>) -> riskml::Result<PredictResponse> {
        let m = Matrix::from_vec(1, raw.len(), raw.to_vec())?;
        let p = self.artifact.predict_raw(&m)?[0];
        Ok(PredictResponse {
            label: if p >= 0.5 { "diabetic" } else { "non-diabetic" }.to_string(),
            probability: p,
            confidence: p.max(1.0 - p),
            warnings,
        })
    }
}

/// Permutation importance on the bundled holdout, clipped at zero and
/// sorted descending (ties by name). ROC-AUC when both classes are
/// present, accuracy otherwise; no holdout gives an empty list.
pub fn compute_importance(
    artifact: &ModelArtifact,
    rows: usize,
) -> riskml::Result<Vec<ImportanceEntry>> {
    let Some(holdout) = &artifact.holdout else {
        return Ok(Vec::new());
    };
    let n = rows.min(holdout.labels.len());
    if n == 0 {
        return Ok(Vec::new());
    }
    let idx: Vec<usize> = (0..n).collect();
    let x = holdout.features.select_rows(&idx);
    let y = &holdout.labels[..n];
    let positives = y.iter().filter(|&&v| v == 1).count();
    let metric = if positives == 0 || positives == n {
        Metric::Accuracy
    } else {
        Metric::RocAuc
    };
    let scores = permutation_importance(
        &artifact.model,
        &x,
        y,
        artifact.features(),
        metric,
        IMPORTANCE_REPEATS,
        IMPORTANCE_SEED,
    )?;
    let mut out: Vec<ImportanceEntry> = scores
        .into_iter()
        .map(|s| ImportanceEntry {
            name: s.name,
            score: s.mean_drop.max(0.0),
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: msg.into(),
                field: None,
            },
        }
    }

    fn field(msg: String, field: &str) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error: msg,
                field: Some(field.to_string()),
            },
        }
    }

    fn not_loaded() -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model not loaded")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub struct AppState {
    model: OnceLock<Arc<LoadedModel>>,
    started: Instant,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Arc::new(AppState {
            model: OnceLock::new(),
            started: Instant::now(),
        })
    }

    pub fn with_model(model: LoadedModel) -> Arc<Self> {
        let s = Self::new();
        s.install(model);
        s
    }

    /// Write-once; later calls are ignored.
    pub fn install(&self, model: LoadedModel) {
        let _ = self.model.set(Arc::new(model));
    }

    fn loaded(&self) -> Result<&LoadedModel, ApiError> {
        self.model
            .get()
            .map(|m| m.as_ref())
            .ok_or_else(ApiError::not_loaded)
    }
}

fn json_bytes(bytes: Bytes) -> Response {
    (
        [(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/json"),
        )],
        bytes,
    )
        .into_response()
}

async fn predict(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<PredictResponse>, ApiError> {
    let model = state.loaded()?;
    let value: Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "body must be a JSON object",
        ));
    };
    let (row, warnings) = model.parse_request(&map)?;
    model
        .predict(&row, warnings)
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn schema(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    Ok(json_bytes(state.loaded()?.schema_json.clone()))
}

async fn importance(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    Ok(json_bytes(state.loaded()?.importance_json.clone()))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let model = state.model.get();
    Json(HealthResponse {
        status: if model.is_some() { "ok" } else { "loading" }.to_string(),
        model_version: model.map(|m| m.version.clone()),
        uptime_seconds: state.started.elapsed().as_secs_f64(),
    })
}

pub fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
            .allow_headers(Any),
    )
}

pub fn router(state: Arc<AppState>, cfg: &ServiceConfig) -> Router {
    let r = Router::new()
        .route("/predict", post(predict))
        .route("/schema", get(schema))
        .route("/importance", get(importance))
        .route("/health", get(health))
        .with_state(state);
    match cors_layer(&cfg.allow_origins) {
        Some(layer) => r.layer(layer),
        None => r,
    }
}

/// Binds `addr`, loads `model_path` in the background and serves until the
/// process is stopped.
pub async fn serve(
    addr: SocketAddr,
    model_path: PathBuf,
    cfg: ServiceConfig,
) -> std::io::Result<()> {
    let state = AppState::new();
    let app = router(state.clone(), &cfg);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let loader_state = state.clone();
    let handle = tokio::task::spawn_blocking(move || LoadedModel::from_path(&model_path, &cfg));
    tokio::spawn(async move {
        match handle.await {
            Ok(Ok(model)) => {
                log::info!("model {} loaded", model.version);
                loader_state.install(model);
            }
            Ok(Err(e)) => {
                log::error!("failed to load model: {e}");
                std::process::exit(2);
            }
            Err(e) => log::error!("model loader panicked: {e}"),
        }
    });
    axum::serve(listener, app).await
}
