//! JSON-over-HTTP inference service.
//!
//! State is loaded once and shared read-only; handlers never mutate it.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use ckm_core::dataset::{encode_png, quantize, Split};
use ckm_core::inference::{CgmPredictor, ModelPredictor, SchemePredictor};
use ckm_core::{BaselineConfig, CkmError, Coord, GridMap, Scenario, Scheme};
use serde::{Deserialize, Serialize};

/// Everything a request can read.
pub struct AppState {
    pub scenarios: Vec<(Split, Scenario)>,
    pub model: ModelPredictor,
    pub baselines: BaselineConfig,
    pub coverage_threshold_db: f64,
}

impl AppState {
    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().map(|(_, s)| s).find(|s| s.environment_id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapStats {
    pub coverage_fraction_above_threshold: f64,
    pub min_db: f64,
    pub max_db: f64,
    pub mean_db: f64,
}

/// Coverage counts cells with gain `>= threshold_db`.
pub fn map_stats(values_db: &[f64], threshold_db: f64) -> MapStats {
    let n = values_db.len() as f64;
    let covered = values_db.iter().filter(|&&v| v >= threshold_db).count();
    MapStats {
        coverage_fraction_above_threshold: covered as f64 / n,
        min_db: values_db.iter().copied().fold(f64::INFINITY, f64::min),
        max_db: values_db.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_db: values_db.iter().sum::<f64>() / n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    /// Always `[1, W, W]`.
    pub shape: [usize; 3],
    pub values_db: Vec<f64>,
    pub stats: MapStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub env_id: String,
    pub row: usize,
    pub col: usize,
    pub width: usize,
    pub threshold_db: f64,
    pub results: Vec<SchemeResult>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequest {
    pub row: i64,
    pub col: i64,
    #[serde(default)]
    pub schemes: Option<Vec<Scheme>>,
    #[serde(default)]
    pub threshold_db: Option<f64>,
}

/// Checks a requested location: inside the grid and not inside a building.
pub fn check_location(scenario: &Scenario, row: i64, col: i64) -> Result<Coord, CkmError> {
    let w = scenario.spec.width_cells;
    let to_index = |v: i64| usize::try_from(v).unwrap_or(usize::MAX);
    let coord = Coord::new(to_index(row), to_index(col));
    if !scenario.spec.contains(coord) {
        return Err(CkmError::OutOfBounds {
            row: row.max(0) as usize,
            col: col.max(0) as usize,
            width: w,
        });
    }
    if scenario.obstacles.as_ref().is_some_and(|m| m.is_blocked(coord)) {
        return Err(CkmError::ApInObstacle { row: coord.row, col: coord.col });
    }
    Ok(coord)
}

/// New-AP prediction for every requested scheme. Shared by `infer` and `serve`.
pub fn infer_new_ap(
    model: &ModelPredictor,
    baselines: &BaselineConfig,
    scenario: &Scenario,
    coord: Coord,
    schemes: &[Scheme],
    threshold_db: f64,
) -> Result<(InferResponse, Vec<GridMap>), CkmError> {
    let w = scenario.spec.width_cells;
    let mut results = Vec::with_capacity(schemes.len());
    let mut maps = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let p = SchemePredictor {
            scheme,
            model: Some(model),
            baselines: *baselines,
        };
        let map = p.predict(scenario, coord, None)?;
        let values_db = map.to_db();
        results.push(SchemeResult {
            scheme,
            shape: [1, w, w],
            stats: map_stats(&values_db, threshold_db),
            values_db,
        });
        maps.push(map);
    }
    Ok((
        InferResponse {
            env_id: scenario.environment_id.clone(),
            row: coord.row,
            col: coord.col,
            width: w,
            threshold_db,
            results,
        },
        maps,
    ))
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<CkmError> for ApiError {
    fn from(e: CkmError) -> Self {
        let status = match e {
            CkmError::OutOfBounds { .. } | CkmError::ApInObstacle { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn not_found(what: String) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, what)
}

#[derive(Serialize)]
struct ApInfo {
    index: usize,
    row: usize,
    col: usize,
}

#[derive(Serialize)]
struct ScenarioInfo {
    id: String,
    split: Split,
    width: usize,
    cell_size_m: f64,
    has_obstacles: bool,
    aps: Vec<ApInfo>,
}

#[derive(Serialize)]
struct ScenarioList {
    model_slots: usize,
    schemes: Vec<Scheme>,
    scenarios: Vec<ScenarioInfo>,
}

async fn list_scenarios(State(state): State<Arc<AppState>>) -> Json<ScenarioList> {
    let scenarios = state
        .scenarios
        .iter()
        .map(|(split, s)| ScenarioInfo {
            id: s.environment_id.clone(),
            split: *split,
            width: s.spec.width_cells,
            cell_size_m: s.spec.cell_size_m,
            has_obstacles: s.obstacles.is_some(),
            aps: s
                .records
                .iter()
                .enumerate()
                .map(|(index, r)| ApInfo {
                    index,
                    row: r.ap_coord.row,
                    col: r.ap_coord.col,
                })
                .collect(),
        })
        .collect();
    Json(ScenarioList {
        model_slots: state.model.in_channels() - 1,
        schemes: Scheme::ALL.to_vec(),
        scenarios,
    })
}

#[derive(Deserialize)]
struct GainQuery {
    #[serde(default)]
    format: Option<String>,
}

#[derive(Serialize)]
struct GainResponse {
    env_id: String,
    ap_index: usize,
    row: usize,
    col: usize,
    width: usize,
    format: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    values_db: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    png_base64: Option<String>,
}

async fn ap_gain(
    State(state): State<Arc<AppState>>,
    Path((id, k)): Path<(String, String)>,
    Query(q): Query<GainQuery>,
) -> Result<Json<GainResponse>, ApiError> {
    let sc = state.scenario(&id).ok_or_else(|| not_found(format!("unknown scenario `{id}`")))?;
    let rec = k
        .parse::<usize>()
        .ok()
        .and_then(|k| sc.records.get(k).map(|r| (k, r)));
    let (k, rec) = rec.ok_or_else(|| not_found(format!("scenario `{id}` has no AP `{k}`")))?;
    let w = sc.spec.width_cells;
    let mut resp = GainResponse {
        env_id: id.clone(),
        ap_index: k,
        row: rec.ap_coord.row,
        col: rec.ap_coord.col,
        width: w,
        format: "array",
        values_db: None,
        png_base64: None,
    };
    match q.format.as_deref() {
        None | Some("array") => resp.values_db = Some(rec.gain.to_db()),
        Some("png") => {
            let px: Vec<u8> = rec.gain.values().iter().map(|&v| quantize(v)).collect();
            let png = encode_png(w, &px)?;
            resp.format = "png";
            resp.png_base64 = Some(base64::engine::general_purpose::STANDARD.encode(png));
        }
        Some(other) => {
            return Err(ApiError(
                StatusCode::BAD_REQUEST,
                format!("unknown format `{other}`, expected `array` or `png`"),
            ))
        }
    }
    Ok(Json(resp))
}

async fn infer(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<InferResponse>, ApiError> {
    let req: InferRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed request body: {e}")))?;
    if state.scenario(&id).is_none() {
        return Err(not_found(format!("unknown scenario `{id}`")));
    }
    let threshold = req.threshold_db.unwrap_or(state.coverage_threshold_db);
    if !threshold.is_finite() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "threshold_db must be finite".into()));
    }
    let schemes = req.schemes.unwrap_or_else(|| Scheme::ALL.to_vec());
    if schemes.is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "schemes must not be empty".into()));
    }
    let st = state.clone();
    let out = tokio::task::spawn_blocking(move || {
        let sc = st.scenario(&id).expect("checked above");
        let coord = check_location(sc, req.row, req.col)?;
        infer_new_ap(&st.model, &st.baselines, sc, coord, &schemes, threshold).map(|(r, _)| r)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(out))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/scenarios", get(list_scenarios))
        .route("/api/scenarios/{id}/aps/{k}/gain", get(ap_gain))
        .route("/api/scenarios/{id}/infer", post(infer))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
