//! Neighborhoods by great-circle radius and spatial cohesion of solutions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{SubRegion, VarietyId};
use crate::optimizer::{Divisor, PortfolioSolution};

pub const EARTH_RADIUS_MILES: f64 = 3958.8;

#[derive(Debug, Error, PartialEq)]
pub enum CohesionError {
    #[error("unknown sub-region {0}")]
    UnknownSubRegion(String),
    #[error("sub-region {0} has no neighbors; cohesion is undefined")]
    EmptyNeighborhood(String),
    #[error("solution has no entries")]
    EmptySolution,
}

pub fn haversine_miles(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub center: String,
    pub radius_miles: f64,
    pub neighbors: Vec<String>,
}

/// All other sub-regions within `m` miles of `center`, sorted by id.
pub fn near(regions: &BTreeMap<String, SubRegion>, center: &str, m: f64) -> Result<Neighborhood, CohesionError> {
    let c = regions
        .get(center)
        .ok_or_else(|| CohesionError::UnknownSubRegion(center.to_string()))?;
    let neighbors = regions
        .values()
        .filter(|r| r.id != center && haversine_miles((c.lat, c.lon), (r.lat, r.lon)) <= m)
        .map(|r| r.id.clone())
        .collect();
    Ok(Neighborhood {
        center: center.to_string(),
        radius_miles: m,
        neighbors,
    })
}

/// Mean weight of `variety` across the neighbors' solutions. A neighbor with
/// no solution, or without the variety, contributes 0.
pub fn variety_score(
    variety: &VarietyId,
    neighborhood: &Neighborhood,
    solutions: &BTreeMap<String, PortfolioSolution>,
) -> Result<f64, CohesionError> {
    if neighborhood.neighbors.is_empty() {
        return Err(CohesionError::EmptyNeighborhood(neighborhood.center.clone()));
    }
    // running mean: exact when every neighbor holds the same weight
    let mut mean = 0.0;
    for (i, n) in neighborhood.neighbors.iter().enumerate() {
        let w = solutions.get(n).map_or(0.0, |s| s.weight_of(variety));
        mean += (w - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

/// Sum of variety scores over the solution's varieties, divided per `divisor`.
pub fn sc_score(
    solution: &PortfolioSolution,
    neighborhood: &Neighborhood,
    solutions: &BTreeMap<String, PortfolioSolution>,
    divisor: Divisor,
) -> Result<f64, CohesionError> {
    if solution.entries.is_empty() {
        return Err(CohesionError::EmptySolution);
    }
    let mut total = 0.0;
    for entry in &solution.entries {
        total += variety_score(&entry.variety_id, neighborhood, solutions)?;
    }
    Ok(total / divisor.value(solution.entries.len()))
}
