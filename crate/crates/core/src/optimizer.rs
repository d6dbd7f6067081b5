//! Variety selection and variability-budgeted mix optimization for one sub-region.
//!
//! For a chosen subset of up to five varieties the weights solve
//!
//! ```text
//! maximize    Σ w_l E_l
//! subject to  Σ w_l = 1,  w_l >= 0.1,  Σ w_l norm_var_l <= tau
//! ```
//!
//! Substituting `w_l = 0.1 + u_l` leaves a scaled simplex `Σ u_l = 1 - 0.1 s`
//! cut by one half-space. Its vertices are simplex corners inside the
//! half-space and points where a simplex edge crosses the hyperplane, so the
//! LP is solved exactly by evaluating at most `s + s(s-1)/2` candidates.
//! The best subset of the top-k varieties is found by enumerating all
//! subsets of size 1 to 5.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::VarietyId;

pub const MIN_WEIGHT: f64 = 0.1;
pub const MAX_MIX: usize = 5;
pub const MAX_TOP_K: usize = 10;
const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("no feasible solution")]
    NoSolution,
    #[error("offset undefined for zero expected yield")]
    ZeroYield,
}

/// Per-variety moments for one sub-region, with min-max normalized copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarietyStats {
    pub variety: VarietyId,
    pub e: f64,
    pub var: f64,
    pub norm_e: f64,
    pub norm_var: f64,
}

impl VarietyStats {
    pub fn score(&self) -> f64 {
        score(self.norm_e, self.norm_var)
    }
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

/// Normalizes expected value and variance across the given varieties.
/// A constant column normalizes to 0.
pub fn normalize_stats(raw: &[(VarietyId, f64, f64)]) -> Vec<VarietyStats> {
    let es: Vec<f64> = raw.iter().map(|r| r.1).collect();
    let vs: Vec<f64> = raw.iter().map(|r| r.2).collect();
    let ne = min_max_normalize(&es);
    let nv = min_max_normalize(&vs);
    raw.iter()
        .enumerate()
        .map(|(i, (variety, e, var))| VarietyStats {
            variety: variety.clone(),
            e: *e,
            var: *var,
            norm_e: ne[i],
            norm_var: nv[i],
        })
        .collect()
}

/// High expected yield and low variance both raise the score.
pub fn score(norm_e: f64, norm_var: f64) -> f64 {
    norm_e + (1.0 - norm_var)
}

/// The `k` best-scoring varieties; equal scores go to the smaller code.
pub fn top_k(stats: &[VarietyStats], k: usize) -> Result<Vec<VarietyStats>, OptimizeError> {
    if k > stats.len() {
        return Err(OptimizeError::Argument(format!(
            "k = {k} exceeds the {} available varieties",
            stats.len()
        )));
    }
    let mut ranked = stats.to_vec();
    ranked.sort_by(|a, b| b.score().total_cmp(&a.score()).then_with(|| a.variety.cmp(&b.variety)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Optimal weights for a fixed subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub variability: f64,
}

/// Exact LP for one subset of 1 to 5 varieties. `Ok(None)` means infeasible.
pub fn solve_subset(e: &[f64], norm_var: &[f64], tau: f64) -> Result<Option<SubsetSolution>, OptimizeError> {
    let s = e.len();
    if s == 0 || s > MAX_MIX {
        return Err(OptimizeError::Argument(format!("subset size must be 1..=5, got {s}")));
    }
    if norm_var.len() != s {
        return Err(OptimizeError::Argument("e and norm_var lengths differ".into()));
    }
    let budget = 1.0 - MIN_WEIGHT * s as f64;
    let slack = tau - MIN_WEIGHT * norm_var.iter().sum::<f64>();

    // Cheapest possible variability: everything spare on the lowest-variance variety.
    let min_nv = norm_var.iter().copied().fold(f64::INFINITY, f64::min);
    if min_nv * budget > slack + FEASIBILITY_SLACK {
        return Ok(None);
    }

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for i in 0..s {
        if norm_var[i] * budget <= slack + FEASIBILITY_SLACK {
            let mut u = vec![0.0; s];
            u[i] = budget;
            candidates.push(u);
        }
    }
    for i in 0..s {
        for j in i + 1..s {
            let denom = norm_var[i] - norm_var[j];
            if denom == 0.0 {
                continue;
            }
            let ui = (slack - norm_var[j] * budget) / denom;
            if ui < -FEASIBILITY_SLACK || ui > budget + FEASIBILITY_SLACK {
                continue;
            }
            let ui = ui.clamp(0.0, budget);
            let mut u = vec![0.0; s];
            u[i] = ui;
            u[j] = budget - ui;
            candidates.push(u);
        }
    }

    let mut best: Option<SubsetSolution> = None;
    for u in candidates {
        let weights: Vec<f64> = u.iter().map(|x| MIN_WEIGHT + x).collect();
        let objective = dot(&weights, e);
        let variability = dot(&weights, norm_var);
        if variability > tau + 1e-10 {
            continue;
        }
        let candidate = SubsetSolution {
            weights,
            objective,
            variability,
        };
        let better = match &best {
            None => true,
            Some(b) => compare_objective(candidate.objective, candidate.variability, b.objective, b.variability)
                == Ordering::Greater,
        };
        if better {
            best = Some(candidate);
        }
    }
    Ok(best)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Greater is better: higher objective, then lower variability.
fn compare_objective(obj_a: f64, var_a: f64, obj_b: f64, var_b: f64) -> Ordering {
    if !near(obj_a, obj_b) {
        return obj_a.total_cmp(&obj_b);
    }
    if !near(var_a, var_b) {
        return var_b.total_cmp(&var_a);
    }
    Ordering::Equal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub variety_id: VarietyId,
    pub weight: f64,
}

/// How the weighted standard deviation and spatial cohesion are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divisor {
    /// Always divide by five, the maximum mix size.
    #[default]
    Five,
    /// Divide by the number of varieties in the mix.
    EntryCount,
}

impl Divisor {
    pub fn value(self, entries: usize) -> f64 {
        match self {
            Divisor::Five => MAX_MIX as f64,
            Divisor::EntryCount => entries.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSolution {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_region_id: Option<String>,
    pub tau: f64,
    pub entries: Vec<MixEntry>,
    pub expected_yield: f64,
    pub variability: f64,
    pub sd: f64,
    /// Absent when the expected yield is zero.
    pub offset_pct: Option<f64>,
}

impl PortfolioSolution {
    pub fn weight_of(&self, variety: &VarietyId) -> f64 {
        self.entries
            .iter()
            .find(|e| &e.variety_id == variety)
            .map_or(0.0, |e| e.weight)
    }

    /// Checks weight sum, lower bounds, budget and distinct varieties.
    pub fn check(&self) -> Result<(), String> {
        if self.entries.is_empty() || self.entries.len() > MAX_MIX {
            return Err(format!("{} entries", self.entries.len()));
        }
        let sum: f64 = self.entries.iter().map(|e| e.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("weights sum to {sum}"));
        }
        if let Some(e) = self.entries.iter().find(|e| e.weight < MIN_WEIGHT - 1e-9) {
            return Err(format!("weight {} for {} below minimum", e.weight, e.variety_id));
        }
        if self.variability > self.tau + 1e-9 {
            return Err(format!("variability {} exceeds tau {}", self.variability, self.tau));
        }
        let mut ids: Vec<&VarietyId> = self.entries.iter().map(|e| &e.variety_id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.entries.len() {
            return Err("duplicate varieties".into());
        }
        Ok(())
    }
}

/// Weighted standard deviation summary `Σ w_l sqrt(Var_l) / divisor`.
pub fn solution_sd(weights_and_variances: &[(f64, f64)], divisor: Divisor) -> f64 {
    let total: f64 = weights_and_variances.iter().map(|(w, v)| w * v.max(0.0).sqrt()).sum();
    total / divisor.value(weights_and_variances.len())
}

/// Standard deviation as a percentage of expected yield.
pub fn solution_offset(sd: f64, expected_yield: f64) -> Result<f64, OptimizeError> {
    if expected_yield == 0.0 {
        return Err(OptimizeError::ZeroYield);
    }
    Ok(sd / expected_yield * 100.0)
}

fn build_solution(stats: &[&VarietyStats], sol: &SubsetSolution, tau: f64, divisor: Divisor) -> PortfolioSolution {
    let mut pairs: Vec<(&VarietyStats, f64)> = stats.iter().copied().zip(sol.weights.iter().copied()).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.variety.cmp(&b.0.variety)));
    let wv: Vec<(f64, f64)> = pairs.iter().map(|(s, w)| (*w, s.var)).collect();
    let sd = solution_sd(&wv, divisor);
    PortfolioSolution {
        sub_region_id: None,
        tau,
        entries: pairs
            .iter()
            .map(|(s, w)| MixEntry {
                variety_id: s.variety.clone(),
                weight: *w,
            })
            .collect(),
        expected_yield: sol.objective,
        variability: sol.variability,
        sd,
        offset_pct: solution_offset(sd, sol.objective).ok(),
    }
}

/// Solves for exactly the given varieties (all of them enter the mix).
pub fn optimize_fixed_subset(
    stats: &[VarietyStats],
    tau: f64,
    divisor: Divisor,
) -> Result<Option<PortfolioSolution>, OptimizeError> {
    let e: Vec<f64> = stats.iter().map(|s| s.e).collect();
    let nv: Vec<f64> = stats.iter().map(|s| s.norm_var).collect();
    let refs: Vec<&VarietyStats> = stats.iter().collect();
    Ok(solve_subset(&e, &nv, tau)?.map(|sol| build_solution(&refs, &sol, tau, divisor)))
}

fn sorted_codes(stats: &[&VarietyStats]) -> Vec<VarietyId> {
    let mut codes: Vec<VarietyId> = stats.iter().map(|s| s.variety.clone()).collect();
    codes.sort();
    codes
}

/// Best mix of 1 to 5 varieties drawn from `topk` at budget `tau`.
///
/// Ties on objective go to lower variability, then to the lexicographically
/// smaller sorted list of variety codes.
pub fn optimize_subregion(
    topk: &[VarietyStats],
    tau: f64,
    divisor: Divisor,
) -> Result<Option<PortfolioSolution>, OptimizeError> {
    let k = topk.len();
    if k == 0 || k > MAX_TOP_K {
        return Err(OptimizeError::Argument(format!("top-k size must be 1..=10, got {k}")));
    }
    let mut best: Option<(Vec<&VarietyStats>, SubsetSolution)> = None;
    for mask in 1u32..(1 << k) {
        if mask.count_ones() as usize > MAX_MIX {
            continue;
        }
        let subset: Vec<&VarietyStats> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| &topk[i]).collect();
        let e: Vec<f64> = subset.iter().map(|s| s.e).collect();
        let nv: Vec<f64> = subset.iter().map(|s| s.norm_var).collect();
        let Some(sol) = solve_subset(&e, &nv, tau)? else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((b_subset, b)) => match compare_objective(sol.objective, sol.variability, b.objective, b.variability) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => sorted_codes(&subset) < sorted_codes(b_subset),
            },
        };
        if better {
            best = Some((subset, sol));
        }
    }
    Ok(best.map(|(subset, sol)| build_solution(&subset, &sol, tau, divisor)))
}

/// The variability budgets 0.1, 0.2, ..., 1.0.
pub fn tau_grid() -> [f64; 10] {
    std::array::from_fn(|i| (i + 1) as f64 / 10.0)
}

/// Index into [`tau_grid`] for a budget on the grid.
pub fn tau_index(tau: f64) -> Option<usize> {
    let tenths = tau * 10.0;
    let rounded = tenths.round();
    ((rounded - tenths).abs() < 1e-9 && (1.0..=10.0).contains(&rounded)).then(|| rounded as usize - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub tau: f64,
    pub solution: Option<PortfolioSolution>,
}

pub fn tau_sweep(topk: &[VarietyStats], divisor: Divisor) -> Result<Vec<SweepEntry>, OptimizeError> {
    tau_grid()
        .into_iter()
        .map(|tau| {
            Ok(SweepEntry {
                tau,
                solution: optimize_subregion(topk, tau, divisor)?,
            })
        })
        .collect()
}

/// Highest expected yield, then lowest variability, then smallest tau.
pub fn default_solution(sweep: &[SweepEntry]) -> Result<&PortfolioSolution, OptimizeError> {
    let mut best: Option<&PortfolioSolution> = None;
    for sol in sweep.iter().filter_map(|e| e.solution.as_ref()) {
        let better = match best {
            None => true,
            Some(b) => {
                if !near_default(sol.expected_yield, b.expected_yield) {
                    sol.expected_yield > b.expected_yield
                } else if !near_default(sol.variability, b.variability) {
                    sol.variability < b.variability
                } else {
                    sol.tau < b.tau
                }
            }
        };
        if better {
            best = Some(sol);
        }
    }
    best.ok_or(OptimizeError::NoSolution)
}

fn near_default(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}
