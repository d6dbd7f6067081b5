//! Seeded synthetic region and experiment datasets with known latent structure.
//!
//! Sub-region centroids sit on a regular lat/lon grid. Each weather attribute
//! is a smooth spatial base plus a per-sub-region linear trend plus bounded
//! uniform noise. Each variety has a quadratic yield response with its own
//! optimum in normalized condition space, so different sub-regions favour
//! different varieties.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Catalog, DataError, ExperimentRecord, SubRegion, VarietyId};

/// Plausible ranges for the three weather then three soil attributes.
pub const CONDITION_BOUNDS: [(f64, f64); 6] = [
    (16.0, 26.0),    // temperature, °C
    (600.0, 1200.0), // precipitation, mm
    (13.0, 20.0),    // solar radiation, MJ/m²
    (5.5, 7.5),      // soil pH
    (1.0, 5.0),      // organic matter, %
    (5.0, 30.0),     // CEC, meq/100g
];

const GRID_ORIGIN: (f64, f64) = (38.0, -96.0);
const GRID_STEP_DEG: f64 = 0.5;
/// Trials are drawn from at most this many trailing years of the range.
const EXPERIMENT_YEARS: i32 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_subregions: usize,
    pub n_varieties: usize,
    pub start_year: i32,
    pub end_year: i32,
    pub seed: u64,
    /// Width of the uniform noise band as a fraction of the signal magnitude:
    /// an attribute's range width for weather, a variety's peak yield for yield.
    /// Noise is drawn from `±noise_scale * magnitude / 2`.
    pub noise_scale: f64,
    pub experiments_per_pair: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_subregions: 50,
            n_varieties: 20,
            start_year: 2000,
            end_year: 2015,
            seed: 7,
            noise_scale: 0.05,
            experiments_per_pair: 2,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Argument(m.to_string()));
        if self.n_subregions == 0 || self.n_varieties == 0 {
            return bad("n_subregions and n_varieties must be >= 1");
        }
        if self.end_year - self.start_year + 1 < 3 {
            return bad("year range must cover at least 3 years");
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad("noise_scale must be >= 0");
        }
        if self.experiments_per_pair == 0 {
            return bad("experiments_per_pair must be >= 1");
        }
        Ok(())
    }
}

/// Quadratic response of one variety over normalized conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentResponse {
    pub peak: f64,
    pub optimum: [f64; 6],
    pub curvature: [f64; 6],
    /// Multiplier on the yield noise amplitude; varieties differ in stability.
    pub noise_factor: f64,
}

impl LatentResponse {
    pub fn yield_at(&self, conditions: &[f64; 6]) -> f64 {
        let penalty: f64 = (0..6)
            .map(|d| {
                let x = normalize_condition(d, conditions[d]);
                self.curvature[d] * (x - self.optimum[d]).powi(2)
            })
            .sum();
        (self.peak - penalty).max(0.0)
    }
}

/// Noise-free weather trend of one attribute in one sub-region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherTrend {
    pub base: f64,
    pub slope_per_year: f64,
}

impl WeatherTrend {
    pub fn value(&self, years_since_start: i32) -> f64 {
        self.base + self.slope_per_year * years_since_start as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub start_year: i32,
    pub responses: BTreeMap<VarietyId, LatentResponse>,
    pub weather: BTreeMap<String, [WeatherTrend; 3]>,
}

impl GroundTruth {
    pub fn latent_yield(&self, variety: &VarietyId, conditions: &[f64; 6]) -> Option<f64> {
        self.responses.get(variety).map(|r| r.yield_at(conditions))
    }

    pub fn latent_weather(&self, sub_region: &str, attribute: usize, year: i32) -> Option<f64> {
        self.weather
            .get(sub_region)
            .map(|t| t[attribute].value(year - self.start_year))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub catalog: Catalog,
    pub truth: GroundTruth,
}

pub fn normalize_condition(dim: usize, value: f64) -> f64 {
    let (lo, hi) = CONDITION_BOUNDS[dim];
    (value - lo) / (hi - lo)
}

fn denormalize_condition(dim: usize, frac: f64) -> f64 {
    let (lo, hi) = CONDITION_BOUNDS[dim];
    lo + frac * (hi - lo)
}

pub fn variety_code(index: usize) -> String {
    format!("V{:06}", 110_000 + index * 1013)
}

pub fn sub_region_code(index: usize) -> String {
    format!("R{index:04}")
}

/// Deterministic synthetic catalog plus the latent functions that produced it.
pub fn generate(config: &GenConfig) -> Result<SyntheticDataset, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cols = (config.n_subregions as f64).sqrt().ceil() as usize;
    let rows = config.n_subregions.div_ceil(cols);
    let years = config.start_year..=config.end_year;

    // Spatial phases shared by all sub-regions so neighbouring cells look alike.
    let phases: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));

    let mut sub_regions = BTreeMap::new();
    let mut weather_truth = BTreeMap::new();
    for i in 0..config.n_subregions {
        let (row, col) = (i / cols, i % cols);
        let fx = col as f64 / cols.max(2).saturating_sub(1) as f64;
        let fy = row as f64 / rows.max(2).saturating_sub(1) as f64;
        let spatial = |d: usize, rng: &mut ChaCha8Rng| {
            let wave = (2.0 * PI * (0.7 * fx + 0.4 * fy) + phases[d]).sin();
            (0.5 + 0.3 * wave + 0.1 * rng.random_range(-1.0..1.0)).clamp(0.02, 0.98)
        };

        let mut trends = [WeatherTrend {
            base: 0.0,
            slope_per_year: 0.0,
        }; 3];
        for (a, trend) in trends.iter_mut().enumerate() {
            let base_frac = spatial(a, &mut rng);
            let slope_frac = rng.random_range(-0.012..0.012);
            let (lo, hi) = CONDITION_BOUNDS[a];
            *trend = WeatherTrend {
                base: denormalize_condition(a, base_frac),
                slope_per_year: slope_frac * (hi - lo),
            };
        }
        let soil: [f64; 3] = std::array::from_fn(|s| {
            let frac = spatial(3 + s, &mut rng);
            round_to(denormalize_condition(3 + s, frac), 1e-3)
        });

        let mut weather = BTreeMap::new();
        for year in years.clone() {
            let values: [f64; 3] = std::array::from_fn(|a| {
                let (lo, hi) = CONDITION_BOUNDS[a];
                let noise = 0.5 * config.noise_scale * (hi - lo) * rng.random_range(-1.0..=1.0);
                trends[a].value(year - config.start_year) + noise
            });
            weather.insert(year, values);
        }

        let id = sub_region_code(i);
        weather_truth.insert(id.clone(), trends);
        sub_regions.insert(
            id.clone(),
            SubRegion {
                id,
                lat: GRID_ORIGIN.0 + row as f64 * GRID_STEP_DEG,
                lon: GRID_ORIGIN.1 + col as f64 * GRID_STEP_DEG,
                weather,
                soil,
            },
        );
    }

    let mut responses = BTreeMap::new();
    for j in 0..config.n_varieties {
        let response = LatentResponse {
            peak: rng.random_range(55.0..70.0),
            optimum: std::array::from_fn(|_| rng.random_range(0.15..0.85)),
            curvature: std::array::from_fn(|_| rng.random_range(5.0..25.0)),
            noise_factor: rng.random_range(0.3..1.7),
        };
        responses.insert(VarietyId::new(variety_code(j))?, response);
    }

    let first_trial_year = (config.end_year - EXPERIMENT_YEARS + 1).max(config.start_year);
    let mut experiments = Vec::new();
    for region in sub_regions.values() {
        for (variety, response) in &responses {
            for _ in 0..config.experiments_per_pair {
                let year = rng.random_range(first_trial_year..=config.end_year);
                let weather = region.weather[&year];
                let record_conditions = {
                    let [a, b, c] = weather;
                    let [d, e, f] = region.soil;
                    [a, b, c, d, e, f]
                };
                let amplitude = 0.5 * config.noise_scale * response.peak * response.noise_factor;
                let noise = amplitude * rng.random_range(-1.0..=1.0);
                let observed = (response.yield_at(&record_conditions) + noise).max(0.0);
                experiments.push(ExperimentRecord {
                    sub_region: region.id.clone(),
                    year,
                    variety: variety.clone(),
                    weather,
                    soil: region.soil,
                    observed_yield: observed,
                });
            }
        }
    }

    let mut catalog = Catalog::new(sub_regions, experiments);
    // Varieties without trials cannot occur, but keep the catalog's set complete.
    catalog.varieties.extend(responses.keys().cloned());
    Ok(SyntheticDataset {
        catalog,
        truth: GroundTruth {
            start_year: config.start_year,
            responses,
            weather: weather_truth,
        },
    })
}

fn round_to(value: f64, step: f64) -> f64 {
    (value / step).round() * step
}
