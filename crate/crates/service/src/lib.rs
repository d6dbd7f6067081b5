//! HTTP JSON API over an immutable [`SolutionAtlas`].
//!
//! Every handler reads the shared atlas or recomputes from it; nothing is
//! mutated after startup. Errors are problem-detail bodies
//! `{status, code, message}`.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::services::ServeDir;

use seedplan_core::data::{VarietyId, SOIL_ATTRIBUTES, WEATHER_ATTRIBUTES};
use seedplan_core::optimizer::{tau_index, PortfolioSolution};
use seedplan_core::pipeline::{
    common_solution, highlight_subregions, prevalence_ranking, topk_counts, PipelineError, SolutionAtlas,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot read atlas {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("atlas {path} rejected: {source}")]
    Atlas { path: PathBuf, source: PipelineError },
    #[error("static asset path {0} is not a directory")]
    StaticDir(PathBuf),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub bind: SocketAddr,
    pub atlas: PathBuf,
    pub static_dir: Option<PathBuf>,
}

/// Reads and validates an atlas document.
pub fn load_atlas(path: &Path) -> Result<SolutionAtlas, ServiceError> {
    let bytes = std::fs::read(path).map_err(|source| ServiceError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    SolutionAtlas::from_json(&bytes).map_err(|source| ServiceError::Atlas {
        path: path.to_path_buf(),
        source,
    })
}

struct AppState {
    atlas: SolutionAtlas,
    topk_counts: BTreeMap<VarietyId, usize>,
}

type Shared = Arc<AppState>;

/// A problem-detail error response.
#[derive(Debug, Serialize)]
pub struct Problem {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl Problem {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }
}

impl IntoResponse for Problem {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, Problem>;

/// Builds the router. Unknown `/api` paths get a JSON 404; other paths are
/// served from `static_dir` when one is given.
pub fn router(atlas: SolutionAtlas, static_dir: Option<PathBuf>) -> Router {
    let state = Arc::new(AppState {
        topk_counts: topk_counts(&atlas),
        atlas,
    });
    let api = Router::new()
        .route("/api/summary", get(summary))
        .route("/api/subregions", get(subregions))
        .route("/api/subregions/{id}/topk", get(subregion_topk))
        .route("/api/attributes", get(attributes))
        .route("/api/attributes/{name}", get(attribute_values))
        .route("/api/varieties", get(varieties))
        .route("/api/highlight", get(highlight))
        .route("/api/solutions/common", post(common))
        .route("/api/solutions/differentiated", get(differentiated))
        .route("/api/{*rest}", get(api_not_found).post(api_not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(api_not_found),
    }
}

/// Loads the atlas and serves until interrupted.
pub async fn serve(config: ApiConfig) -> Result<(), ServiceError> {
    let atlas = load_atlas(&config.atlas)?;
    if let Some(dir) = &config.static_dir {
        if !dir.is_dir() {
            return Err(ServiceError::StaticDir(dir.clone()));
        }
    }
    let app = router(atlas, config.static_dir);
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn api_not_found() -> Problem {
    Problem::not_found("not_found", "no such endpoint")
}

fn parse_tau(raw: &str) -> Result<f64, Problem> {
    let tau: f64 = raw
        .parse()
        .map_err(|_| Problem::bad_request("invalid_tau", format!("tau {raw:?} is not a number")))?;
    tau_index(tau)
        .map(|i| (i + 1) as f64 / 10.0)
        .ok_or_else(|| Problem::bad_request("invalid_tau", format!("tau {tau} is not one of 0.1, 0.2, ..., 1.0")))
}

fn optional_tau(params: &HashMap<String, String>) -> Result<Option<f64>, Problem> {
    params.get("tau").map(|t| parse_tau(t)).transpose()
}

async fn summary(State(s): State<Shared>) -> Json<serde_json::Value> {
    let a = &s.atlas;
    Json(json!({
        "forecast_year": a.forecast_year,
        "tau_grid": a.tau_grid,
        "summary": a.summary,
        "tau_summaries": a.tau_summaries,
        "provenance": a.provenance,
    }))
}

#[derive(Serialize)]
struct SubRegionView<'a> {
    id: &'a str,
    lat: f64,
    lon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    default_solution: Option<&'a PortfolioSolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sc: Option<f64>,
}

async fn subregions(State(s): State<Shared>) -> Json<serde_json::Value> {
    let views: Vec<SubRegionView> = s
        .atlas
        .sub_regions
        .iter()
        .map(|r| SubRegionView {
            id: &r.id,
            lat: r.lat,
            lon: r.lon,
            default_solution: r.default_solution.as_ref(),
            sc: r.sc_default,
        })
        .collect();
    Json(json!(views))
}

async fn subregion_topk(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<serde_json::Value> {
    let record = s
        .atlas
        .sub_region(&id)
        .ok_or_else(|| Problem::not_found("unknown_subregion", format!("no sub-region {id:?}")))?;
    let entries: Vec<serde_json::Value> = record
        .top_k
        .iter()
        .map(|t| {
            json!({
                "variety_id": t.variety_id,
                "score": t.score,
                "e": t.e,
                "var": t.var,
                "norm_e": t.norm_e,
                "norm_var": t.norm_var,
                "weight": record.default_solution.as_ref().map_or(0.0, |d| d.weight_of(&t.variety_id)),
                "subregion_count": s.topk_counts.get(&t.variety_id).copied().unwrap_or(0),
                "distribution": t.distribution,
            })
        })
        .collect();
    Ok(Json(json!({
        "sub_region_id": record.id,
        "k": entries.len(),
        "bins": s.atlas.bins,
        "entries": entries,
    })))
}

async fn attributes(State(s): State<Shared>) -> Json<serde_json::Value> {
    let years: Vec<i32> = s
        .atlas
        .sub_regions
        .first()
        .map(|r| r.weather.keys().copied().collect())
        .unwrap_or_default();
    Json(json!({
        "weather": WEATHER_ATTRIBUTES,
        "soil": SOIL_ATTRIBUTES,
        "years": years,
        "forecast_year": s.atlas.forecast_year,
    }))
}

async fn attribute_values(
    State(s): State<Shared>,
    UrlPath(name): UrlPath<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<serde_json::Value> {
    let year = params
        .get("year")
        .map(|y| {
            y.parse::<i32>()
                .map_err(|_| Problem::bad_request("invalid_year", format!("year {y:?} is not an integer")))
        })
        .transpose()?;
    let values = s.atlas.attribute_values(&name, year).map_err(|e| match e {
        PipelineError::UnknownAttribute(_) => Problem::not_found("unknown_attribute", e.to_string()),
        PipelineError::YearOutOfRange { .. } => Problem::not_found("year_out_of_range", e.to_string()),
        other => Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
    })?;
    let is_soil = SOIL_ATTRIBUTES.contains(&name.as_str());
    let year = year.unwrap_or(s.atlas.forecast_year);
    Ok(Json(json!({
        "attribute": name,
        "year": year,
        "static": is_soil,
        "forecast": !is_soil && year == s.atlas.forecast_year,
        "values": values,
    })))
}

async fn varieties(State(s): State<Shared>, Query(params): Query<HashMap<String, String>>) -> ApiResult<serde_json::Value> {
    let tau = optional_tau(&params)?;
    let ranking = prevalence_ranking(&s.atlas, tau).map_err(|e| Problem::bad_request("invalid_tau", e.to_string()))?;
    let entries: Vec<serde_json::Value> = ranking
        .iter()
        .map(|p| {
            json!({
                "variety_id": p.variety_id,
                "expected_weight": p.expected_weight,
                "histogram": p.histogram,
                "weights": p.weights,
                "topk_count": s.topk_counts.get(&p.variety_id).copied().unwrap_or(0),
            })
        })
        .collect();
    let ids: Vec<&str> = s.atlas.sub_regions.iter().map(|r| r.id.as_str()).collect();
    Ok(Json(json!({ "tau": tau, "sub_region_ids": ids, "varieties": entries })))
}

fn parse_weight(params: &HashMap<String, String>, key: &str) -> Result<Option<f64>, Problem> {
    params
        .get(key)
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|w| (0.0..=1.0).contains(w))
                .ok_or_else(|| Problem::bad_request("invalid_range", format!("{key}={v:?} is not a weight in [0, 1]")))
        })
        .transpose()
}

async fn highlight(State(s): State<Shared>, Query(params): Query<HashMap<String, String>>) -> ApiResult<serde_json::Value> {
    let tau = optional_tau(&params)?;
    let mut chosen = Vec::new();
    for code in params.get("varieties").map(String::as_str).unwrap_or("").split(',') {
        let code = code.trim();
        if code.is_empty() {
            continue;
        }
        let id = VarietyId::new(code).map_err(|e| Problem::bad_request("unknown_variety", e.to_string()))?;
        if !s.atlas.knows_variety(&id) {
            return Err(Problem::bad_request("unknown_variety", format!("unknown variety {code}")));
        }
        chosen.push(id);
    }
    let range = match (parse_weight(&params, "lo")?, parse_weight(&params, "hi")?) {
        (None, None) => None,
        (lo, hi) => Some((lo.unwrap_or(0.0), hi.unwrap_or(1.0))),
    };
    let set = highlight_subregions(&s.atlas, &chosen, range, tau)
        .map_err(|e| Problem::bad_request("invalid_range", e.to_string()))?;
    Ok(Json(json!({ "sub_regions": set })))
}

#[derive(Deserialize)]
struct CommonRequest {
    varieties: Vec<String>,
}

async fn common(State(s): State<Shared>, body: Bytes) -> ApiResult<serde_json::Value> {
    let request: CommonRequest = serde_json::from_slice(&body)
        .map_err(|e| Problem::bad_request("invalid_body", format!("expected {{\"varieties\": [...]}}: {e}")))?;
    let chosen = request
        .varieties
        .iter()
        .map(|v| VarietyId::new(v.clone()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Problem::bad_request("unknown_variety", e.to_string()))?;
    let result = common_solution(&s.atlas, &chosen).map_err(common_problem)?;
    Ok(Json(json!({
        "solution": result.solution,
        "region_yield": result.region_yield,
        "mean_subregion_yield": result.mean_subregion_yield,
    })))
}

fn common_problem(e: PipelineError) -> Problem {
    match e {
        PipelineError::UnknownVariety(_) => Problem::bad_request("unknown_variety", e.to_string()),
        PipelineError::Argument(_) => Problem::bad_request("invalid_selection", e.to_string()),
        PipelineError::NoSolution => Problem::new(StatusCode::UNPROCESSABLE_ENTITY, "infeasible", e.to_string()),
        other => Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
    }
}

async fn differentiated(
    State(s): State<Shared>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<serde_json::Value> {
    let raw = params
        .get("tau")
        .ok_or_else(|| Problem::bad_request("invalid_tau", "tau is required"))?;
    let tau = parse_tau(raw)?;
    let i = tau_index(tau).expect("parsed onto the grid");
    let rows: Vec<serde_json::Value> = s
        .atlas
        .sub_regions
        .iter()
        .map(|r| {
            let sol = r.solutions[i].solution.as_ref();
            let mut row = json!({ "id": r.id, "lat": r.lat, "lon": r.lon, "feasible": sol.is_some() });
            if let Some(sol) = sol {
                row["solution"] = json!(sol);
            }
            if let Some(sc) = r.sc[i] {
                row["sc"] = json!(sc);
            }
            row
        })
        .collect();
    Ok(Json(json!({
        "tau": tau,
        "summary": s.atlas.tau_summaries[i],
        "sub_regions": rows,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn common_errors_map_to_status() {
        assert_eq!(common_problem(PipelineError::NoSolution).status, 422);
        assert_eq!(common_problem(PipelineError::Argument("x".into())).status, 400);
        assert_eq!(common_problem(PipelineError::UnknownVariety("x".into())).status, 400);
        assert_eq!(common_problem(PipelineError::InvalidAtlas("x".into())).status, 500);
    }

    #[test]
    fn tau_parsing() {
        assert_eq!(parse_tau("0.3").unwrap(), 0.3);
        assert_eq!(parse_tau("1").unwrap(), 1.0);
        assert!(parse_tau("0.05").is_err());
        assert!(parse_tau("abc").is_err());
    }
}
