//! End-to-end planning: forecast next-season weather, predict yield
//! distributions, optimize a mix per sub-region and collect everything into
//! a [`SolutionAtlas`].

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohesion::{near, sc_score, CohesionError};
use crate::data::{
    split_dataset, Catalog, DataError, ExperimentRecord, SubRegion, VarietyId, SOIL_ATTRIBUTES, WEATHER_ATTRIBUTES,
};
use crate::forecast::{
    self, make_sequences, weather_attribute_index, ForecastError, ModelDocument, SequenceModel, TrainConfig,
};
use crate::optimizer::{
    default_solution, normalize_stats, optimize_fixed_subset, solution_sd, tau_grid, tau_index, tau_sweep, top_k,
    Divisor, OptimizeError, PortfolioSolution, SweepEntry, VarietyStats, MAX_MIX, MAX_TOP_K,
};
use crate::yieldmodel::{fit_bins, train_forest, BinScheme, ForestConfig, YieldDistribution, YieldError, YieldModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Yield(#[from] YieldError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Cohesion(#[from] CohesionError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unknown variety {0}")]
    UnknownVariety(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("no {attribute} data for year {year}")]
    YearOutOfRange { attribute: String, year: i32 },
    #[error("no feasible mix at any variability budget")]
    NoSolution,
    #[error("invalid atlas: {0}")]
    InvalidAtlas(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub top_k: usize,
    pub bins: usize,
    pub radius_miles: f64,
    pub divisor: Divisor,
    pub split: [f64; 3],
    pub split_seed: u64,
    pub forecast: TrainConfig,
    pub forest: ForestConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            bins: 20,
            radius_miles: 50.0,
            divisor: Divisor::Five,
            split: [0.7, 0.15, 0.15],
            split_seed: 1,
            forecast: TrainConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.top_k == 0 || self.top_k > MAX_TOP_K {
            return Err(PipelineError::Config(format!("top_k must be 1..=10, got {}", self.top_k)));
        }
        if self.bins < 2 {
            return Err(PipelineError::Config(format!("bins must be >= 2, got {}", self.bins)));
        }
        if !(self.radius_miles >= 0.0 && self.radius_miles.is_finite()) {
            return Err(PipelineError::Config("radius_miles must be a non-negative number".into()));
        }
        if self.forest.n_trees == 0 {
            return Err(PipelineError::Config("n_trees must be >= 1".into()));
        }
        self.forecast.validate()?;
        Ok(())
    }
}

pub const FORECAST_FORMAT: &str = "seedplan.forecast_models";
pub const FORECAST_VERSION: u32 = 1;

/// One sequence model per weather attribute, all trained to predict the
/// year after a fixed-length window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModels {
    pub format: String,
    pub version: u32,
    /// Last year of history seen in training; forecasts target the next one.
    pub last_year: i32,
    pub window: usize,
    pub models: BTreeMap<String, ModelDocument>,
}

impl ForecastModels {
    pub fn check(&self) -> Result<(), PipelineError> {
        if self.format != FORECAST_FORMAT || self.version != FORECAST_VERSION {
            return Err(PipelineError::InvalidAtlas(format!(
                "expected {FORECAST_FORMAT} v{FORECAST_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        for attr in WEATHER_ATTRIBUTES {
            let doc = self
                .models
                .get(attr)
                .ok_or_else(|| PipelineError::UnknownAttribute(attr.to_string()))?;
            SequenceModel::from_document(doc)?;
        }
        Ok(())
    }

    /// Weather for the year after `region`'s last year, from its trailing window.
    pub fn forecast(&self, region: &SubRegion) -> Result<[f64; 3], PipelineError> {
        let (_, last) = region.year_range().ok_or_else(|| ForecastError::DataGap {
            sub_region: region.id.clone(),
            year: self.last_year,
        })?;
        if region.weather.len() < self.window {
            return Err(ForecastError::DataGap {
                sub_region: region.id.clone(),
                year: last + 1 - self.window as i32,
            }
            .into());
        }
        let mut out = [0.0; 3];
        for (i, attr) in WEATHER_ATTRIBUTES.iter().enumerate() {
            let model = SequenceModel::from_document(&self.models[*attr])?;
            let series = forecast::history(region, i);
            out[i] = model.predict_next(&series[series.len() - self.window..]);
        }
        Ok(out)
    }
}

/// Trains the three weather models with each sub-region's final year as target.
pub fn train_forecast_models(
    regions: &BTreeMap<String, SubRegion>,
    config: &TrainConfig,
) -> Result<ForecastModels, PipelineError> {
    let mut last_years = regions.values().filter_map(|r| r.year_range()).map(|(_, last)| last);
    let last_year = last_years.next().ok_or(ForecastError::Empty)?;
    if last_years.any(|y| y != last_year) {
        return Err(PipelineError::Argument("sub-regions end their weather history in different years".into()));
    }
    let trained: Vec<(String, usize, ModelDocument)> = WEATHER_ATTRIBUTES
        .par_iter()
        .map(|attr| {
            let pairs = make_sequences(regions.values(), attr, last_year)?;
            let window = pairs.first().map_or(0, |p| p.inputs.len());
            let model = forecast::train(&pairs, config)?;
            Ok((attr.to_string(), window, model.to_document()))
        })
        .collect::<Result<_, ForecastError>>()?;
    let window = trained[0].1;
    Ok(ForecastModels {
        format: FORECAST_FORMAT.into(),
        version: FORECAST_VERSION,
        last_year,
        window,
        models: trained.into_iter().map(|(a, _, m)| (a, m)).collect(),
    })
}

/// Train, validation and test partitions of the experiments.
pub fn split_experiments(
    catalog: &Catalog,
    config: &PipelineConfig,
) -> Result<(Vec<ExperimentRecord>, Vec<ExperimentRecord>, Vec<ExperimentRecord>), PipelineError> {
    Ok(split_dataset(&catalog.experiments, config.split, config.split_seed)?)
}

/// Fits bins on the training yields and trains the forest.
pub fn train_yield_model(train: &[ExperimentRecord], config: &PipelineConfig) -> Result<YieldModel, PipelineError> {
    let yields: Vec<f64> = train.iter().map(|r| r.observed_yield).collect();
    let scheme = fit_bins(&yields, config.bins)?;
    let forest = train_forest(train, &scheme, &config.forest)?;
    Ok(YieldModel::new(scheme, forest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldEvaluation {
    pub n_records: usize,
    pub rmse: f64,
    /// Percent of the actual range; actual yields are taken at their bin midpoints.
    pub n_rmse_binned: f64,
    pub oob_accuracy: Option<f64>,
}

/// Distribution-mean predictions scored against binned observed yields.
pub fn evaluate_yield(model: &YieldModel, records: &[ExperimentRecord]) -> Result<YieldEvaluation, PipelineError> {
    let mids = model.scheme.midpoints();
    let actual: Vec<f64> = records.iter().map(|r| mids[model.scheme.bin_of(r.observed_yield)]).collect();
    let predicted: Vec<f64> = records
        .iter()
        .map(|r| model.predict_yield(r))
        .collect::<Result<_, _>>()?;
    Ok(YieldEvaluation {
        n_records: records.len(),
        rmse: forecast::rmse(&actual, &predicted)?,
        n_rmse_binned: forecast::n_rmse(&actual, &predicted)?,
        oob_accuracy: model.forest.oob_accuracy,
    })
}

pub const ATLAS_FORMAT: &str = "seedplan.solution_atlas";
pub const ATLAS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKEntry {
    pub variety_id: VarietyId,
    pub score: f64,
    pub e: f64,
    pub var: f64,
    pub norm_e: f64,
    pub norm_var: f64,
    pub distribution: YieldDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubRegionRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    /// Observed weather by year, in [`WEATHER_ATTRIBUTES`] order.
    pub weather: BTreeMap<i32, [f64; 3]>,
    pub forecast_weather: [f64; 3],
    pub soil: [f64; 3],
    /// Every variety's moments, normalized within this sub-region.
    pub varieties: Vec<VarietyStats>,
    pub top_k: Vec<TopKEntry>,
    /// One entry per budget on the tau grid.
    pub solutions: Vec<SweepEntry>,
    pub default_solution: Option<PortfolioSolution>,
    pub neighbors: Vec<String>,
    /// Cohesion per budget, comparing neighbors at the same budget.
    pub sc: Vec<Option<f64>>,
    /// Cohesion of the default solution against neighbors' default solutions.
    pub sc_default: Option<f64>,
}

impl SubRegionRecord {
    pub fn solution_at(&self, tau: f64) -> Option<&PortfolioSolution> {
        tau_index(tau).and_then(|i| self.solutions.get(i)).and_then(|e| e.solution.as_ref())
    }

    pub fn stats_of(&self, variety: &VarietyId) -> Option<&VarietyStats> {
        self.varieties.iter().find(|s| &s.variety == variety)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub n_sub_regions: usize,
    pub n_solved: usize,
    pub unsolved: Vec<String>,
    pub average_yield: Option<f64>,
    pub average_sd: Option<f64>,
    pub average_offset_pct: Option<f64>,
    pub average_sc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub tau: f64,
    pub n_feasible: usize,
    pub average_yield: Option<f64>,
    pub average_sd: Option<f64>,
    pub average_offset_pct: Option<f64>,
    pub average_sc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: PipelineConfig,
    pub n_experiments: usize,
    pub history_years: Option<(i32, i32)>,
    pub forecast_last_year: i32,
    pub forecast_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionAtlas {
    pub format: String,
    pub version: u32,
    pub forecast_year: i32,
    pub tau_grid: Vec<f64>,
    pub bins: BinScheme,
    pub varieties: Vec<VarietyId>,
    pub sub_regions: Vec<SubRegionRecord>,
    pub summary: RegionSummary,
    pub tau_summaries: Vec<TauSummary>,
    pub provenance: Provenance,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(records: &[SubRegionRecord]) -> (RegionSummary, Vec<TauSummary>) {
    let defaults: Vec<&PortfolioSolution> = records.iter().filter_map(|r| r.default_solution.as_ref()).collect();
    let summary = RegionSummary {
        n_sub_regions: records.len(),
        n_solved: defaults.len(),
        unsolved: records
            .iter()
            .filter(|r| r.default_solution.is_none())
            .map(|r| r.id.clone())
            .collect(),
        average_yield: mean(defaults.iter().map(|s| s.expected_yield)),
        average_sd: mean(defaults.iter().map(|s| s.sd)),
        average_offset_pct: mean(defaults.iter().filter_map(|s| s.offset_pct)),
        average_sc: mean(records.iter().filter_map(|r| r.sc_default)),
    };
    let per_tau = tau_grid()
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            let sols: Vec<&PortfolioSolution> =
                records.iter().filter_map(|r| r.solutions[i].solution.as_ref()).collect();
            TauSummary {
                tau,
                n_feasible: sols.len(),
                average_yield: mean(sols.iter().map(|s| s.expected_yield)),
                average_sd: mean(sols.iter().map(|s| s.sd)),
                average_offset_pct: mean(sols.iter().filter_map(|s| s.offset_pct)),
                average_sc: mean(records.iter().filter_map(|r| r.sc[i])),
            }
        })
        .collect();
    (summary, per_tau)
}

/// Forecast weather and per-variety yield distributions for one sub-region.
#[derive(Debug, Clone, PartialEq)]
pub struct SubRegionPrediction {
    pub region: SubRegion,
    pub forecast_weather: [f64; 3],
    /// Aligned with the variety list passed to [`assemble_atlas`].
    pub distributions: Vec<YieldDistribution>,
}

/// Forecasts each sub-region's next season and predicts every variety's
/// yield distribution under it.
pub fn predict_subregions(
    catalog: &Catalog,
    forecasts: &ForecastModels,
    model: &YieldModel,
) -> Result<Vec<SubRegionPrediction>, PipelineError> {
    catalog
        .sub_regions
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|region| {
            let weather = forecasts.forecast(region)?;
            let distributions = model
                .forest
                .varieties
                .iter()
                .map(|v| model.forest.predict_distribution(weather, region.soil, v))
                .collect::<Result<_, _>>()?;
            Ok(SubRegionPrediction {
                region: (*region).clone(),
                forecast_weather: weather,
                distributions,
            })
        })
        .collect()
}

fn plan_subregion(
    prediction: &SubRegionPrediction,
    varieties: &[VarietyId],
    scheme: &BinScheme,
    config: &PipelineConfig,
) -> Result<SubRegionRecord, PipelineError> {
    let region = &prediction.region;
    let dists = &prediction.distributions;
    if dists.len() != varieties.len() {
        return Err(PipelineError::Argument(format!(
            "{}: {} distributions for {} varieties",
            region.id,
            dists.len(),
            varieties.len()
        )));
    }
    let raw: Vec<(VarietyId, f64, f64)> = varieties
        .iter()
        .zip(dists)
        .map(|(v, d)| (v.clone(), scheme.expected_value(d), scheme.variance(d)))
        .collect();
    let stats = normalize_stats(&raw);
    let top = top_k(&stats, config.top_k.min(stats.len()))?;
    let top_entries = top
        .iter()
        .map(|s| {
            let idx = varieties.iter().position(|v| v == &s.variety).expect("top-k drawn from the variety list");
            TopKEntry {
                variety_id: s.variety.clone(),
                score: s.score(),
                e: s.e,
                var: s.var,
                norm_e: s.norm_e,
                norm_var: s.norm_var,
                distribution: dists[idx].clone(),
            }
        })
        .collect();
    let mut sweep = tau_sweep(&top, config.divisor)?;
    for entry in &mut sweep {
        if let Some(sol) = entry.solution.as_mut() {
            sol.sub_region_id = Some(region.id.clone());
        }
    }
    let default = default_solution(&sweep).ok().cloned();
    Ok(SubRegionRecord {
        id: region.id.clone(),
        lat: region.lat,
        lon: region.lon,
        weather: region.weather.clone(),
        forecast_weather: prediction.forecast_weather,
        soil: region.soil,
        varieties: stats,
        top_k: top_entries,
        solutions: sweep,
        default_solution: default,
        neighbors: Vec::new(),
        sc: vec![None; tau_grid().len()],
        sc_default: None,
    })
}

fn cohesion_for(
    record: &SubRegionRecord,
    solution: Option<&PortfolioSolution>,
    hood: &crate::cohesion::Neighborhood,
    map: &BTreeMap<String, PortfolioSolution>,
    divisor: Divisor,
) -> Result<Option<f64>, PipelineError> {
    match solution {
        Some(sol) if !record.neighbors.is_empty() => Ok(Some(sc_score(sol, hood, map, divisor)?)),
        _ => Ok(None),
    }
}

/// Builds the differentiated atlas. Sub-regions with no feasible mix at any
/// budget are kept and listed as unsolved.
pub fn build_atlas(
    catalog: &Catalog,
    forecasts: &ForecastModels,
    model: &YieldModel,
    config: &PipelineConfig,
) -> Result<SolutionAtlas, PipelineError> {
    config.validate()?;
    forecasts.check()?;
    model.check()?;
    let predictions = predict_subregions(catalog, forecasts, model)?;
    let provenance = Provenance {
        config: config.clone(),
        n_experiments: catalog.experiments.len(),
        history_years: None,
        forecast_last_year: forecasts.last_year,
        forecast_window: forecasts.window,
    };
    assemble_atlas(&predictions, &model.forest.varieties, &model.scheme, provenance)
}

/// Top-k selection, budget sweep, default solutions, cohesion and summaries
/// from per-sub-region predictions. The config is taken from `provenance`.
pub fn assemble_atlas(
    predictions: &[SubRegionPrediction],
    varieties: &[VarietyId],
    scheme: &BinScheme,
    mut provenance: Provenance,
) -> Result<SolutionAtlas, PipelineError> {
    let config = provenance.config.clone();
    config.validate()?;
    if predictions.is_empty() {
        return Err(PipelineError::Argument("no sub-regions".into()));
    }
    if varieties.is_empty() || !varieties.windows(2).all(|w| w[0] < w[1]) {
        return Err(PipelineError::Argument("varieties must be non-empty, sorted and unique".into()));
    }
    let regions: BTreeMap<String, SubRegion> =
        predictions.iter().map(|p| (p.region.id.clone(), p.region.clone())).collect();
    if regions.len() != predictions.len() {
        return Err(PipelineError::Argument("duplicate sub-region ids".into()));
    }
    let mut ordered: Vec<&SubRegionPrediction> = predictions.iter().collect();
    ordered.sort_by(|a, b| a.region.id.cmp(&b.region.id));

    let mut records: Vec<SubRegionRecord> = ordered
        .par_iter()
        .map(|p| plan_subregion(p, varieties, scheme, &config))
        .collect::<Result<_, _>>()?;

    let hoods = ordered
        .par_iter()
        .map(|p| near(&regions, &p.region.id, config.radius_miles))
        .collect::<Result<Vec<_>, _>>()?;
    for (record, hood) in records.iter_mut().zip(&hoods) {
        record.neighbors = hood.neighbors.clone();
    }

    let by_tau: Vec<BTreeMap<String, PortfolioSolution>> = (0..tau_grid().len())
        .map(|i| {
            records
                .iter()
                .filter_map(|r| r.solutions[i].solution.clone().map(|s| (r.id.clone(), s)))
                .collect()
        })
        .collect();
    let defaults: BTreeMap<String, PortfolioSolution> = records
        .iter()
        .filter_map(|r| r.default_solution.clone().map(|s| (r.id.clone(), s)))
        .collect();
    let cohesion: Vec<(Vec<Option<f64>>, Option<f64>)> = records
        .par_iter()
        .zip(&hoods)
        .map(|(record, hood)| {
            let per_tau = (0..by_tau.len())
                .map(|i| cohesion_for(record, record.solutions[i].solution.as_ref(), hood, &by_tau[i], config.divisor))
                .collect::<Result<Vec<_>, _>>()?;
            let default = cohesion_for(record, record.default_solution.as_ref(), hood, &defaults, config.divisor)?;
            Ok((per_tau, default))
        })
        .collect::<Result<_, PipelineError>>()?;
    for (record, (per_tau, default)) in records.iter_mut().zip(cohesion) {
        record.sc = per_tau;
        record.sc_default = default;
    }

    let (summary, tau_summaries) = summarize(&records);
    let first_year = regions.values().filter_map(|r| r.year_range()).map(|y| y.0).min();
    let last_year = regions.values().filter_map(|r| r.year_range()).map(|y| y.1).max();
    provenance.history_years = first_year.zip(last_year);
    Ok(SolutionAtlas {
        format: ATLAS_FORMAT.into(),
        version: ATLAS_VERSION,
        forecast_year: provenance.forecast_last_year + 1,
        tau_grid: tau_grid().to_vec(),
        bins: scheme.clone(),
        varieties: varieties.to_vec(),
        sub_regions: records,
        summary,
        tau_summaries,
        provenance,
    })
}

/// Sub-region default solution, or its solution at `tau` when given.
fn chosen_solution(record: &SubRegionRecord, tau: Option<usize>) -> Option<&PortfolioSolution> {
    match tau {
        Some(i) => record.solutions.get(i).and_then(|e| e.solution.as_ref()),
        None => record.default_solution.as_ref(),
    }
}

fn resolve_tau(tau: Option<f64>) -> Result<Option<usize>, PipelineError> {
    tau.map(|t| tau_index(t).ok_or_else(|| PipelineError::Argument(format!("tau {t} is not on the 0.1 grid"))))
        .transpose()
}

impl SolutionAtlas {
    pub fn to_json(&self) -> Result<Vec<u8>, PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Parses and validates an atlas document.
    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let atlas: Self = serde_json::from_slice(bytes)?;
        atlas.validate()?;
        Ok(atlas)
    }

    pub fn sub_region(&self, id: &str) -> Option<&SubRegionRecord> {
        self.sub_regions
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.sub_regions[i])
    }

    pub fn knows_variety(&self, variety: &VarietyId) -> bool {
        self.varieties.binary_search(variety).is_ok()
    }

    /// Structural checks, solution invariants and summary consistency.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidAtlas(m));
        if self.format != ATLAS_FORMAT || self.version != ATLAS_VERSION {
            return bad(format!("expected {ATLAS_FORMAT} v{ATLAS_VERSION}, found {} v{}", self.format, self.version));
        }
        if self.tau_grid != tau_grid() {
            return bad("unexpected tau grid".into());
        }
        if !self.sub_regions.windows(2).all(|w| w[0].id < w[1].id) {
            return bad("sub-regions must be sorted by unique id".into());
        }
        if !self.varieties.windows(2).all(|w| w[0] < w[1]) {
            return bad("varieties must be sorted and unique".into());
        }
        for r in &self.sub_regions {
            if r.solutions.len() != self.tau_grid.len() || r.sc.len() != self.tau_grid.len() {
                return bad(format!("{}: per-budget arrays have the wrong length", r.id));
            }
            for (entry, &tau) in r.solutions.iter().zip(&self.tau_grid) {
                if entry.tau != tau {
                    return bad(format!("{}: solution budgets out of order", r.id));
                }
                if let Some(sol) = &entry.solution {
                    sol.check().map_err(|m| PipelineError::InvalidAtlas(format!("{} at tau {tau}: {m}", r.id)))?;
                }
            }
            if let Some(sol) = &r.default_solution {
                sol.check().map_err(|m| PipelineError::InvalidAtlas(format!("{} default: {m}", r.id)))?;
            }
            if let Some(t) = r.top_k.iter().find(|t| !t.distribution.is_valid()) {
                return bad(format!("{}: invalid distribution for {}", r.id, t.variety_id));
            }
        }
        let (summary, per_tau) = summarize(&self.sub_regions);
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * x.abs().max(1.0),
            (None, None) => true,
            _ => false,
        };
        let same = |a: &RegionSummary, b: &RegionSummary| {
            a.n_sub_regions == b.n_sub_regions
                && a.n_solved == b.n_solved
                && a.unsolved == b.unsolved
                && close(a.average_yield, b.average_yield)
                && close(a.average_sd, b.average_sd)
                && close(a.average_offset_pct, b.average_offset_pct)
                && close(a.average_sc, b.average_sc)
        };
        if !same(&summary, &self.summary) {
            return bad("region summary does not match sub-region records".into());
        }
        if per_tau.len() != self.tau_summaries.len()
            || per_tau.iter().zip(&self.tau_summaries).any(|(a, b)| {
                a.n_feasible != b.n_feasible
                    || !close(a.average_yield, b.average_yield)
                    || !close(a.average_sd, b.average_sd)
                    || !close(a.average_sc, b.average_sc)
            })
        {
            return bad("per-budget summary does not match sub-region records".into());
        }
        Ok(())
    }

    /// Values of one attribute per sub-region. Soil is static, so any year
    /// works; weather accepts observed years and the forecast year.
    pub fn attribute_values(&self, name: &str, year: Option<i32>) -> Result<BTreeMap<String, f64>, PipelineError> {
        if let Some(i) = SOIL_ATTRIBUTES.iter().position(|a| *a == name) {
            return Ok(self.sub_regions.iter().map(|r| (r.id.clone(), r.soil[i])).collect());
        }
        let i = weather_attribute_index(name).map_err(|_| PipelineError::UnknownAttribute(name.to_string()))?;
        let year = year.unwrap_or(self.forecast_year);
        let mut out = BTreeMap::new();
        for r in &self.sub_regions {
            let value = if year == self.forecast_year {
                r.forecast_weather[i]
            } else {
                r.weather.get(&year).map(|w| w[i]).ok_or_else(|| PipelineError::YearOutOfRange {
                    attribute: name.to_string(),
                    year,
                })?
            };
            out.insert(r.id.clone(), value);
        }
        Ok(out)
    }
}

/// 10 equal bins over (0, 1]; zero weights have no bin.
pub fn histogram_bin(weight: f64) -> Option<usize> {
    (weight > 0.0).then(|| ((weight * 10.0 - 1e-9).ceil() as usize).clamp(1, 10) - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarietyPrevalence {
    pub variety_id: VarietyId,
    /// One weight per sub-region, in atlas order; 0 where absent or unsolved.
    pub weights: Vec<f64>,
    pub expected_weight: f64,
    pub histogram: [usize; 10],
}

/// Varieties by mean weight across all sub-regions, descending.
/// Uses default solutions, or the solutions at `tau` when given.
pub fn prevalence_ranking(atlas: &SolutionAtlas, tau: Option<f64>) -> Result<Vec<VarietyPrevalence>, PipelineError> {
    let tau = resolve_tau(tau)?;
    let n = atlas.sub_regions.len();
    let mut out: Vec<VarietyPrevalence> = atlas
        .varieties
        .iter()
        .map(|v| {
            let weights: Vec<f64> = atlas
                .sub_regions
                .iter()
                .map(|r| chosen_solution(r, tau).map_or(0.0, |s| s.weight_of(v)))
                .collect();
            let mut histogram = [0; 10];
            for b in weights.iter().filter_map(|&w| histogram_bin(w)) {
                histogram[b] += 1;
            }
            VarietyPrevalence {
                variety_id: v.clone(),
                expected_weight: if n == 0 { 0.0 } else { weights.iter().sum::<f64>() / n as f64 },
                weights,
                histogram,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.expected_weight
            .total_cmp(&a.expected_weight)
            .then_with(|| a.variety_id.cmp(&b.variety_id))
    });
    Ok(out)
}

/// Number of sub-regions whose top-k contains each variety.
pub fn topk_counts(atlas: &SolutionAtlas) -> BTreeMap<VarietyId, usize> {
    let mut counts: BTreeMap<VarietyId, usize> = atlas.varieties.iter().map(|v| (v.clone(), 0)).collect();
    for r in &atlas.sub_regions {
        for t in &r.top_k {
            *counts.entry(t.variety_id.clone()).or_default() += 1;
        }
    }
    counts
}

/// Sub-regions whose solution holds any of `varieties`, optionally with the
/// weight inside `range`. Multiple varieties give the union.
pub fn highlight_subregions(
    atlas: &SolutionAtlas,
    varieties: &[VarietyId],
    range: Option<(f64, f64)>,
    tau: Option<f64>,
) -> Result<BTreeSet<String>, PipelineError> {
    let tau = resolve_tau(tau)?;
    if let Some((lo, hi)) = range {
        if !(lo <= hi) {
            return Err(PipelineError::Argument(format!("empty weight range [{lo}, {hi}]")));
        }
    }
    Ok(atlas
        .sub_regions
        .iter()
        .filter(|r| {
            chosen_solution(r, tau).is_some_and(|sol| {
                varieties.iter().any(|v| {
                    let w = sol.weight_of(v);
                    w > 0.0 && range.is_none_or(|(lo, hi)| w >= lo - 1e-9 && w <= hi + 1e-9)
                })
            })
        })
        .map(|r| r.id.clone())
        .collect())
}

/// Region-level moments: per-variety means over all sub-regions, normalized
/// across all varieties.
pub fn region_stats(atlas: &SolutionAtlas) -> Vec<VarietyStats> {
    let n = atlas.sub_regions.len().max(1) as f64;
    let raw: Vec<(VarietyId, f64, f64)> = atlas
        .varieties
        .iter()
        .map(|v| {
            let (e, var) = atlas
                .sub_regions
                .iter()
                .filter_map(|r| r.stats_of(v))
                .fold((0.0, 0.0), |(e, var), s| (e + s.e, var + s.var));
            (v.clone(), e / n, var / n)
        })
        .collect();
    normalize_stats(&raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonSolution {
    pub solution: PortfolioSolution,
    /// Σ w · region-mean E.
    pub region_yield: f64,
    /// Mean over sub-regions of Σ w · E at each sub-region.
    pub mean_subregion_yield: f64,
    pub sweep: Vec<SweepEntry>,
}

fn validate_choice(atlas: &SolutionAtlas, chosen: &[VarietyId]) -> Result<(), PipelineError> {
    if chosen.is_empty() || chosen.len() > MAX_MIX {
        return Err(PipelineError::Argument(format!("choose 1 to 5 varieties, got {}", chosen.len())));
    }
    let distinct: BTreeSet<&VarietyId> = chosen.iter().collect();
    if distinct.len() != chosen.len() {
        return Err(PipelineError::Argument("duplicate varieties".into()));
    }
    if let Some(v) = chosen.iter().find(|v| !atlas.knows_variety(v)) {
        return Err(PipelineError::UnknownVariety(v.to_string()));
    }
    Ok(())
}

/// One mix of exactly `chosen` for the whole region, weighted on region-mean
/// moments and picked from the budget sweep by the default-solution rule.
pub fn common_solution(atlas: &SolutionAtlas, chosen: &[VarietyId]) -> Result<CommonSolution, PipelineError> {
    validate_choice(atlas, chosen)?;
    let stats = region_stats(atlas);
    let subset: Vec<VarietyStats> = chosen
        .iter()
        .map(|v| stats.iter().find(|s| &s.variety == v).cloned().expect("validated"))
        .collect();
    let divisor = atlas.provenance.config.divisor;
    let sweep = tau_grid()
        .into_iter()
        .map(|tau| {
            Ok(SweepEntry {
                tau,
                solution: optimize_fixed_subset(&subset, tau, divisor)?,
            })
        })
        .collect::<Result<Vec<_>, OptimizeError>>()?;
    let solution = default_solution(&sweep).map_err(|_| PipelineError::NoSolution)?.clone();
    let mean_subregion_yield = mean(
        atlas
            .sub_regions
            .iter()
            .map(|r| applied_moments(r, &solution, divisor).0),
    )
    .unwrap_or(0.0);
    Ok(CommonSolution {
        region_yield: solution.expected_yield,
        mean_subregion_yield,
        solution,
        sweep,
    })
}

/// Expected yield and sd of `solution`'s weights evaluated with one
/// sub-region's moments.
fn applied_moments(record: &SubRegionRecord, solution: &PortfolioSolution, divisor: Divisor) -> (f64, f64) {
    let mut e = 0.0;
    let mut wv = Vec::with_capacity(solution.entries.len());
    for entry in &solution.entries {
        let (ev, var) = record.stats_of(&entry.variety_id).map_or((0.0, 0.0), |s| (s.e, s.var));
        e += entry.weight * ev;
        wv.push((entry.weight, var));
    }
    (e, solution_sd(&wv, divisor))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionStats {
    pub n_sub_regions: usize,
    pub mean_yield: f64,
    /// Population variance of per-sub-region expected yields.
    pub yield_variance: f64,
    pub mean_sd: f64,
}

impl SolutionStats {
    fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let n = pairs.len();
        let mean_yield = mean(pairs.iter().map(|p| p.0)).unwrap_or(0.0);
        Self {
            n_sub_regions: n,
            mean_yield,
            yield_variance: mean(pairs.iter().map(|p| (p.0 - mean_yield).powi(2))).unwrap_or(0.0),
            mean_sd: mean(pairs.iter().map(|p| p.1)).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub chosen: Vec<VarietyId>,
    pub common_weights: Vec<(VarietyId, f64)>,
    pub differentiated: SolutionStats,
    pub common: SolutionStats,
}

/// The varieties with the highest prevalence, at most five, skipping
/// varieties that appear nowhere.
pub fn most_prevalent(atlas: &SolutionAtlas) -> Vec<VarietyId> {
    let ranking = prevalence_ranking(atlas, None).unwrap_or_default();
    let present: Vec<VarietyId> = ranking
        .iter()
        .filter(|p| p.expected_weight > 0.0)
        .take(MAX_MIX)
        .map(|p| p.variety_id.clone())
        .collect();
    if present.is_empty() {
        ranking.into_iter().take(MAX_MIX).map(|p| p.variety_id).collect()
    } else {
        present
    }
}

/// Differentiated default solutions against one common mix, both evaluated
/// on the sub-regions that have a differentiated solution.
pub fn compare_solutions(atlas: &SolutionAtlas, chosen: Option<&[VarietyId]>) -> Result<ComparisonReport, PipelineError> {
    let chosen = chosen.map_or_else(|| most_prevalent(atlas), <[VarietyId]>::to_vec);
    let common = common_solution(atlas, &chosen)?;
    let divisor = atlas.provenance.config.divisor;
    let solved: Vec<&SubRegionRecord> = atlas.sub_regions.iter().filter(|r| r.default_solution.is_some()).collect();
    let diff: Vec<(f64, f64)> = solved
        .iter()
        .map(|r| {
            let s = r.default_solution.as_ref().expect("filtered");
            (s.expected_yield, s.sd)
        })
        .collect();
    let shared: Vec<(f64, f64)> = solved
        .iter()
        .map(|r| applied_moments(r, &common.solution, divisor))
        .collect();
    Ok(ComparisonReport {
        chosen,
        common_weights: common
            .solution
            .entries
            .iter()
            .map(|e| (e.variety_id.clone(), e.weight))
            .collect(),
        differentiated: SolutionStats::from_pairs(&diff),
        common: SolutionStats::from_pairs(&shared),
    })
}
