use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seedplan_core::data::VarietyId;
use seedplan_core::optimizer::{optimize_subregion, solve_subset, Divisor, VarietyStats};

/// Best objective over every subset of size 1..=5 with weights on a 0.01 grid.
/// `feasible` receives the weights in hundredths.
fn grid_oracle(e: &[f64], feasible: &dyn Fn(&[usize], &[u32]) -> bool) -> Option<f64> {
    fn compositions(parts: usize, total: u32, prefix: &mut Vec<u32>, visit: &mut dyn FnMut(&[u32])) {
        if parts == 1 {
            prefix.push(total);
            visit(prefix);
            prefix.pop();
            return;
        }
        let reserve = 10 * (parts as u32 - 1);
        for w in 10..=total - reserve {
            prefix.push(w);
            compositions(parts - 1, total - w, prefix, visit);
            prefix.pop();
        }
    }
    let k = e.len();
    let mut best: Option<f64> = None;
    for mask in 1u32..(1 << k) {
        let subset: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if subset.len() > 5 {
            continue;
        }
        compositions(subset.len(), 100, &mut Vec::new(), &mut |w| {
            if feasible(&subset, w) {
                let obj: f64 = subset.iter().zip(w).map(|(&i, &wi)| e[i] * wi as f64 / 100.0).sum();
                if best.is_none_or(|b| obj > b) {
                    best = Some(obj);
                }
            }
        });
    }
    best
}

fn stats(e: &[f64], nv: &[f64]) -> Vec<VarietyStats> {
    e.iter()
        .zip(nv)
        .enumerate()
        .map(|(i, (&e, &nv))| VarietyStats {
            variety: VarietyId::new(format!("V{i:02}")).unwrap(),
            e,
            var: nv,
            norm_e: 0.0,
            norm_var: nv,
        })
        .collect()
}

/// Variances on {0, 0.5, 1} and tau on the tenth grid put every LP vertex on
/// the 0.01 weight grid, so grid search finds the exact optimum.
#[test]
fn matches_grid_oracle_on_lattice_instances() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut feasible_cases = 0;
    for case in 0..120 {
        let k = rng.random_range(1..=8);
        let e: Vec<f64> = (0..k).map(|_| rng.random_range(20.0..80.0)).collect();
        let halves: Vec<u32> = (0..k).map(|_| rng.random_range(0..=2)).collect();
        let nv: Vec<f64> = halves.iter().map(|&h| h as f64 / 2.0).collect();
        let tenths: u32 = rng.random_range(1..=10);
        let tau = tenths as f64 / 10.0;

        // integer check: Σ w·(2 nv) <= 200 tau, with w in hundredths
        let oracle = grid_oracle(&e, &|subset, w| {
            subset.iter().zip(w).map(|(&i, &wi)| halves[i] * wi).sum::<u32>() <= 20 * tenths
        });
        let exact = optimize_subregion(&stats(&e, &nv), tau, Divisor::Five).unwrap();
        match (oracle, exact) {
            (None, None) => {}
            (Some(g), Some(x)) => {
                feasible_cases += 1;
                assert!(
                    (g - x.expected_yield).abs() < 1e-6,
                    "case {case}: grid {g} exact {}",
                    x.expected_yield
                );
            }
            (g, x) => panic!("case {case}: feasibility differs, grid {g:?} exact {x:?}"),
        }
    }
    assert!(feasible_cases >= 60, "only {feasible_cases} feasible cases");
    eprintln!("lattice oracle: 120 instances in {:?}", started.elapsed());
}

/// With arbitrary variances the exact optimum can sit between grid points:
/// the grid never beats it and never trails by more than one grid step.
#[test]
fn grid_never_beats_exact_on_continuous_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for case in 0..60 {
        let k = rng.random_range(1..=6);
        let e: Vec<f64> = (0..k).map(|_| rng.random_range(20.0..80.0)).collect();
        let nv: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let tau = rng.random_range(1..=10) as f64 / 10.0;
        let oracle = grid_oracle(&e, &|subset, w| {
            subset.iter().zip(w).map(|(&i, &wi)| nv[i] * wi as f64 / 100.0).sum::<f64>() <= tau
        });
        let exact = optimize_subregion(&stats(&e, &nv), tau, Divisor::Five).unwrap();
        let spread = e.iter().copied().fold(0.0, f64::max) - e.iter().copied().fold(f64::INFINITY, f64::min);
        match (oracle, exact) {
            (Some(g), Some(x)) => {
                assert!(g <= x.expected_yield + 1e-9, "case {case}: grid {g} beats exact {}", x.expected_yield);
                assert!(x.expected_yield - g <= 0.01 * spread + 1e-9, "case {case}: gap too large");
            }
            (None, Some(x)) => assert!(x.check().is_ok()),
            (Some(g), None) => panic!("case {case}: grid found {g} but exact reports infeasible"),
            (None, None) => {}
        }
    }
}

#[test]
fn binding_two_variety_example_matches_grid() {
    let e = [10.0, 5.0];
    let nv = [0.8, 0.2];
    let oracle = grid_oracle(&e, &|subset, w| {
        subset.len() == 2 && subset.iter().zip(w).map(|(&i, &wi)| nv[i] * wi as f64 / 100.0).sum::<f64>() <= 0.5 + 1e-12
    })
    .unwrap();
    let exact = solve_subset(&e, &nv, 0.5).unwrap().unwrap();
    assert!((oracle - 7.5).abs() < 1e-12);
    assert!((exact.objective - oracle).abs() < 1e-9);
}
