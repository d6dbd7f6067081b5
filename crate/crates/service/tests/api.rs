use std::collections::BTreeSet;
use std::sync::OnceLock;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use seedplan_core::datagen::{generate, GenConfig};
use seedplan_core::pipeline::*;
use seedplan_core::yieldmodel::YieldDistribution;
use seedplan_service::router;

fn atlas() -> &'static SolutionAtlas {
    static A: OnceLock<SolutionAtlas> = OnceLock::new();
    A.get_or_init(|| {
        let catalog = generate(&GenConfig::default()).unwrap().catalog;
        let config = PipelineConfig::default();
        let forecasts = train_forecast_models(&catalog.sub_regions, &config.forecast).unwrap();
        let (train, _, _) = split_experiments(&catalog, &config).unwrap();
        let model = train_yield_model(&train, &config).unwrap();
        build_atlas(&catalog, &forecasts, &model, &config).unwrap()
    })
}

/// Every variety but one has a wide two-point distribution near the top
/// bins; the remaining low, certain variety scores too poorly for the
/// top-k, so no top-k variety has normalized variance <= 0.1.
fn high_variance_atlas() -> SolutionAtlas {
    let base = atlas();
    let bins = base.bins.bins();
    let n = base.varieties.len();
    let predictions: Vec<SubRegionPrediction> = base
        .sub_regions
        .iter()
        .map(|r| {
            let distributions = (0..n)
                .map(|j| {
                    let mut probs = vec![0.0; bins];
                    if j == 0 {
                        probs[0] = 1.0;
                    } else {
                        let spread = 4 + (j % 4);
                        probs[bins - 1] = 0.5;
                        probs[bins - 1 - spread] = 0.5;
                    }
                    YieldDistribution { probs }
                })
                .collect();
            SubRegionPrediction {
                region: seedplan_core::data::SubRegion {
                    id: r.id.clone(),
                    lat: r.lat,
                    lon: r.lon,
                    weather: r.weather.clone(),
                    soil: r.soil,
                },
                forecast_weather: r.forecast_weather,
                distributions,
            }
        })
        .collect();
    assemble_atlas(&predictions, &base.varieties, &base.bins, base.provenance.clone()).unwrap()
}

fn app() -> Router {
    router(atlas().clone(), None)
}

async fn call(app: Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let res = app.oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(uri: &str) -> (StatusCode, Value) {
    call(app(), "GET", uri, None).await
}

fn assert_problem(body: &Value, status: StatusCode, code: &str) {
    assert_eq!(body["status"], status.as_u16());
    assert_eq!(body["code"], code);
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[tokio::test]
async fn subregions_list() {
    let (status, body) = get("/api/subregions").await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 50);
    for (entry, record) in list.iter().zip(&atlas().sub_regions) {
        assert_eq!(entry["id"], record.id);
        assert_eq!(entry["default_solution"].is_null(), record.default_solution.is_none());
    }
    let (_, again) = get("/api/subregions").await;
    assert_eq!(body, again);
}

#[tokio::test]
async fn unsolved_subregion_omits_default() {
    let mut a = atlas().clone();
    a.sub_regions[0].default_solution = None;
    let (_, body) = call(router(a, None), "GET", "/api/subregions", None).await;
    assert!(body[0].get("default_solution").is_none());
    assert!(body[1].get("default_solution").is_some());
}

#[tokio::test]
async fn attribute_values() {
    let (status, body) = get("/api/attributes/precipitation?year=2014").await;
    assert_eq!(status, StatusCode::OK);
    let values = body["values"].as_object().unwrap();
    assert_eq!(values.len(), 50);
    let r0 = &atlas().sub_regions[0];
    assert_eq!(values[&r0.id].as_f64().unwrap(), r0.weather[&2014][1]);

    let (status, body) = get("/api/attributes/humidity?year=2014").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_problem(&body, StatusCode::NOT_FOUND, "unknown_attribute");

    let (status, body) = get("/api/attributes/temperature?year=1900").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_problem(&body, StatusCode::NOT_FOUND, "year_out_of_range");

    let (_, a) = get("/api/attributes/soil_cec?year=2003").await;
    let (_, b) = get("/api/attributes/soil_cec?year=2011").await;
    assert_eq!(a["values"], b["values"]);
    assert_eq!(a["static"], true);

    let (status, body) = get("/api/attributes/temperature?year=abc").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_problem(&body, StatusCode::BAD_REQUEST, "invalid_year");

    let (_, menu) = get("/api/attributes").await;
    assert_eq!(menu["weather"].as_array().unwrap().len(), 3);
    assert_eq!(menu["soil"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn topk_drilldown() {
    let a = atlas();
    let record = &a.sub_regions[7];
    let (status, body) = get(&format!("/api/subregions/{}/topk", record.id)).await;
    assert_eq!(status, StatusCode::OK);
    let entries = body["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 10);
    for w in entries.windows(2) {
        assert!(w[0]["score"].as_f64() >= w[1]["score"].as_f64());
    }
    for e in entries {
        let id = e["variety_id"].as_str().unwrap();
        // recount by scanning every sub-region's top-k
        let count = a
            .sub_regions
            .iter()
            .filter(|r| r.top_k.iter().any(|t| t.variety_id.as_str() == id))
            .count();
        assert_eq!(e["subregion_count"].as_u64().unwrap() as usize, count);
        let total: f64 = e["distribution"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let expected_weight = record
            .default_solution
            .as_ref()
            .map_or(0.0, |d| d.entries.iter().filter(|x| x.variety_id.as_str() == id).map(|x| x.weight).sum());
        assert_eq!(e["weight"].as_f64().unwrap(), expected_weight);
    }

    let (status, body) = get("/api/subregions/NOPE/topk").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_problem(&body, StatusCode::NOT_FOUND, "unknown_subregion");
}

#[tokio::test]
async fn common_solution_queries() {
    let a = atlas();
    let one = json!({ "varieties": [a.varieties[0].as_str()] });
    let (status, body) = call(app(), "POST", "/api/solutions/common", Some(one.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["solution"]["entries"][0]["weight"], 1.0);
    let (_, again) = call(app(), "POST", "/api/solutions/common", Some(one)).await;
    assert_eq!(body, again);

    let six: Vec<&str> = a.varieties[..6].iter().map(|v| v.as_str()).collect();
    let (status, body) = call(app(), "POST", "/api/solutions/common", Some(json!({ "varieties": six }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_problem(&body, StatusCode::BAD_REQUEST, "invalid_selection");

    let (status, body) = call(app(), "POST", "/api/solutions/common", Some(json!({ "varieties": ["ZZZ"] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_problem(&body, StatusCode::BAD_REQUEST, "unknown_variety");

    let (status, body) = call(app(), "POST", "/api/solutions/common", Some(json!({ "nope": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_problem(&body, StatusCode::BAD_REQUEST, "invalid_body");

    let three: Vec<&str> = a.varieties[2..5].iter().map(|v| v.as_str()).collect();
    let (_, body) = call(app(), "POST", "/api/solutions/common", Some(json!({ "varieties": three }))).await;
    let direct = common_solution(a, &a.varieties[2..5]).unwrap();
    assert_eq!(body["region_yield"].as_f64().unwrap(), direct.region_yield);
    assert_eq!(body["solution"], serde_json::to_value(&direct.solution).unwrap());
}

#[tokio::test]
async fn differentiated_by_tau() {
    let a = atlas();
    let (status, body) = get("/api/solutions/differentiated?tau=1.0").await;
    assert_eq!(status, StatusCode::OK);
    let rows = body["sub_regions"].as_array().unwrap();
    assert_eq!(rows.len(), 50);
    for (row, record) in rows.iter().zip(&a.sub_regions) {
        let sol = record.solution_at(1.0);
        assert_eq!(row["feasible"], sol.is_some());
        if let Some(sol) = sol {
            assert_eq!(row["solution"], serde_json::to_value(sol).unwrap());
        }
        assert_eq!(row["sc"].as_f64(), record.sc[9]);
    }
    let solvable = a.sub_regions.iter().filter(|r| r.default_solution.is_some()).count();
    assert_eq!(rows.iter().filter(|r| r["feasible"] == true).count(), solvable);

    for bad in ["0.25", "0", "1.1", "x"] {
        let (status, body) = get(&format!("/api/solutions/differentiated?tau={bad}")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "tau={bad}");
        assert_problem(&body, StatusCode::BAD_REQUEST, "invalid_tau");
    }
    let (status, _) = get("/api/solutions/differentiated").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn high_variance_budget_flags_infeasible() {
    let a = high_variance_atlas();
    let (_, body) = call(router(a.clone(), None), "GET", "/api/solutions/differentiated?tau=0.1", None).await;
    let rows = body["sub_regions"].as_array().unwrap();
    let flagged = rows.iter().filter(|r| r["feasible"] == false).count();
    assert_eq!(flagged, rows.len());
    assert!(rows.iter().all(|r| r.get("solution").is_none()));
    let (_, body) = call(router(a, None), "GET", "/api/solutions/differentiated?tau=1.0", None).await;
    assert!(body["sub_regions"].as_array().unwrap().iter().all(|r| r["feasible"] == true));
}

#[tokio::test]
async fn varieties_and_highlight() {
    let a = atlas();
    let (status, body) = get("/api/varieties").await;
    assert_eq!(status, StatusCode::OK);
    let list = body["varieties"].as_array().unwrap();
    assert_eq!(list.len(), a.varieties.len());
    let top = list[0]["variety_id"].as_str().unwrap();

    let (_, hl) = get(&format!("/api/highlight?varieties={top}")).await;
    let got: BTreeSet<String> =
        hl["sub_regions"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let expected: BTreeSet<String> = a
        .sub_regions
        .iter()
        .filter(|r| r.default_solution.as_ref().is_some_and(|s| s.entries.iter().any(|e| e.variety_id.as_str() == top)))
        .map(|r| r.id.clone())
        .collect();
    assert_eq!(got, expected);
    let (_, full) = get(&format!("/api/highlight?varieties={top}&lo=0&hi=1")).await;
    assert_eq!(full, hl);
    let (_, none) = get("/api/highlight").await;
    assert_eq!(none["sub_regions"].as_array().unwrap().len(), 0);

    let (status, _) = get("/api/varieties?tau=0.3").await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = get("/api/varieties?tau=0.35").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_problem(&body, StatusCode::BAD_REQUEST, "invalid_tau");
    let (status, _) = get("/api/highlight?varieties=NOPE").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn summary_and_unknown_routes() {
    let (status, body) = get("/api/summary").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["summary"], serde_json::to_value(&atlas().summary).unwrap());
    let (status, body) = get("/api/nothing/here").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_problem(&body, StatusCode::NOT_FOUND, "not_found");
}

#[tokio::test]
async fn numbers_round_trip() {
    let (_, body) = get("/api/solutions/differentiated?tau=0.5").await;
    for (row, record) in body["sub_regions"].as_array().unwrap().iter().zip(&atlas().sub_regions) {
        if let Some(sol) = record.solution_at(0.5) {
            let y = row["solution"]["expected_yield"].as_f64().unwrap();
            assert!((y - sol.expected_yield).abs() <= 1e-9);
        }
    }
}

#[tokio::test]
async fn serves_static_assets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ok</html>").unwrap();
    let app = router(atlas().clone(), Some(dir.path().to_path_buf()));
    let res = app
        .clone()
        .oneshot(Request::builder().uri("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let (status, _) = call(app, "GET", "/api/subregions", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn load_atlas_validates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("atlas.json");
    std::fs::write(&path, atlas().to_json().unwrap()).unwrap();
    assert!(seedplan_service::load_atlas(&path).is_ok());
    let mut broken = atlas().clone();
    broken.summary.average_yield = Some(1.0);
    std::fs::write(&path, broken.to_json().unwrap()).unwrap();
    assert!(seedplan_service::load_atlas(&path).is_err());
}
